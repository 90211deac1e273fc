"""
Birds-eye-view semantic grid map.
Holds per-cell aggregated class probabilities, maximum height, occupancy and entropy-based
map uncertainty, and projects posed observations into cells.
"""
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

import config
from calibration import calibrated_probabilities, normalized_entropy
from errors import InvalidInputError
from scene_sim import Observation, Scene

logger = logging.getLogger("semantic_map")

Cell = Tuple[int, int]

UNKNOWN_PIXEL = 255


class ProjectedHit(NamedTuple):
    cell: Cell
    p_pred: np.ndarray
    u: float
    height: float
    distance: float


@dataclass
class ProjectedHits:
    """Batch of projected hits, at most one per cell."""
    cells: np.ndarray
    probs: np.ndarray
    u: np.ndarray
    heights: np.ndarray
    distances: np.ndarray

    @classmethod
    def empty(cls, n_classes: int) -> "ProjectedHits":
        return cls(np.zeros((0, 2), dtype=np.int64), np.zeros((0, n_classes)), np.zeros(0), np.zeros(0), np.zeros(0))

    @classmethod
    def from_list(cls, hits: Sequence[ProjectedHit]) -> "ProjectedHits":
        if not hits:
            raise InvalidInputError("Use ProjectedHits.empty for an empty batch")
        return cls(
            cells=np.array([h.cell for h in hits], dtype=np.int64),
            probs=np.array([h.p_pred for h in hits], dtype=float),
            u=np.array([h.u for h in hits], dtype=float),
            heights=np.array([h.height for h in hits], dtype=float),
            distances=np.array([h.distance for h in hits], dtype=float),
        )

    def __len__(self) -> int:
        return len(self.u)

    def __iter__(self) -> Iterator[ProjectedHit]:
        for c, p, u, h, d in zip(self.cells, self.probs, self.u, self.heights, self.distances):
            yield ProjectedHit((int(c[0]), int(c[1])), p, float(u), float(h), float(d))

    @property
    def ix(self) -> np.ndarray:
        return self.cells[:, 0]

    @property
    def iy(self) -> np.ndarray:
        return self.cells[:, 1]


@dataclass
class MapCell:
    p: Optional[np.ndarray]
    height: float
    occupancy: bool
    u_map: float
    observed_count: int
    aux: Dict[str, object] = field(default_factory=dict)


class GridMap:
    """Dense BEV map. Arrays are indexed [iy, ix]; cells are (ix, iy)."""

    def __init__(self, width: int, height: int, n_classes: int, resolution: float,
                 origin: Tuple[float, float] = (0.0, 0.0)):
        if resolution <= 0:
            raise InvalidInputError(f"Map resolution must be positive, got {resolution}")
        if n_classes < 2:
            raise InvalidInputError("A semantic map needs at least two classes")
        self.width = width
        self.height = height
        self.n_classes = n_classes
        self.resolution = resolution
        self.origin = origin
        self.p = np.zeros((height, width, n_classes))
        self.heights = np.zeros((height, width))
        self.occupancy = np.zeros((height, width), dtype=bool)
        self.u_map = np.ones((height, width))
        self.observed = np.zeros((height, width), dtype=bool)
        self.observed_count = np.zeros((height, width), dtype=np.int64)
        self.aux: Dict[str, np.ndarray] = {}

    @classmethod
    def for_scene(cls, scene: Scene) -> "GridMap":
        return cls(scene.width, scene.height, scene.n_classes, scene.resolution)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    def world_to_cell(self, x_m: float, y_m: float) -> Cell:
        """floor((point - origin) / resolution) per axis, with a 1e-9 relative tolerance."""
        cell = []
        for value, origin in ((x_m, self.origin[0]), (y_m, self.origin[1])):
            v = (value - origin) / self.resolution
            cell.append(int(math.floor(v + 1e-9 * max(1.0, abs(v)))))
        if not (0 <= cell[0] < self.width and 0 <= cell[1] < self.height):
            raise InvalidInputError(f"Point ({x_m}, {y_m}) lies outside the map")
        return cell[0], cell[1]

    def cell_to_world(self, cell: Cell) -> Tuple[float, float]:
        return (self.origin[0] + (cell[0] + 0.5) * self.resolution,
                self.origin[1] + (cell[1] + 0.5) * self.resolution)

    def cell_centers(self, cells: np.ndarray) -> np.ndarray:
        return np.asarray(self.origin) + (np.asarray(cells, dtype=float) + 0.5) * self.resolution

    def update_height_occupancy(self, cell: Cell, height_m: float) -> None:
        ix, iy = cell
        self.heights[iy, ix] = max(self.heights[iy, ix], height_m)
        self.occupancy[iy, ix] = self.heights[iy, ix] > config.OCCUPANCY_HEIGHT_M

    def update_heights(self, cells: np.ndarray, heights: np.ndarray) -> None:
        """Vectorized update_height_occupancy."""
        if len(cells) == 0:
            return
        np.maximum.at(self.heights, (cells[:, 1], cells[:, 0]), heights)
        self.occupancy = self.heights > config.OCCUPANCY_HEIGHT_M

    def mark_observed(self, cells: np.ndarray) -> None:
        if len(cells) == 0:
            return
        self.observed[cells[:, 1], cells[:, 0]] = True
        np.add.at(self.observed_count, (cells[:, 1], cells[:, 0]), 1)

    def set_probabilities(self, cells: np.ndarray, probs: np.ndarray) -> None:
        """Store p_k for the given cells and recompute their u_map."""
        if len(cells) == 0:
            return
        iy, ix = cells[:, 1], cells[:, 0]
        self.p[iy, ix] = probs
        self.u_map[iy, ix] = normalized_entropy(probs)

    def cell_uncertainty(self, cell: Cell) -> float:
        ix, iy = cell
        if not self.observed[iy, ix]:
            return 1.0
        return float(self.u_map[iy, ix])

    def cell(self, cell: Cell) -> MapCell:
        ix, iy = cell
        seen = bool(self.observed[iy, ix])
        return MapCell(
            p=self.p[iy, ix].copy() if seen else None,
            height=float(self.heights[iy, ix]),
            occupancy=bool(self.occupancy[iy, ix]),
            u_map=self.cell_uncertainty(cell),
            observed_count=int(self.observed_count[iy, ix]),
            aux={name: channel[iy, ix].copy() if channel.ndim > 2 else channel[iy, ix].item()
                 for name, channel in self.aux.items()},
        )

    def channel(self, name: str, dtype=float, fill=0, depth: Optional[int] = None) -> np.ndarray:
        """Get or create a strategy-owned auxiliary channel."""
        if name not in self.aux:
            shape = self.shape if depth is None else self.shape + (depth,)
            self.aux[name] = np.full(shape, fill, dtype=dtype)
        return self.aux[name]

    def argmax_classes(self) -> np.ndarray:
        """Most likely class per cell, -1 for unknown cells."""
        classes = self.p.argmax(axis=-1)
        return np.where(self.observed, classes, -1)

    def uncertainty_grid(self) -> np.ndarray:
        return np.where(self.observed, self.u_map, 1.0)


def project_observation(obs: Observation, t: float) -> ProjectedHits:
    """Calibrate and project an observation into per-cell hits.

    Hits sharing a cell keep the top-most one (greatest height), ties broken by smaller distance.
    """
    n_classes = obs.logits.shape[1] if obs.logits.ndim == 2 else 0
    if len(obs) == 0:
        return ProjectedHits.empty(max(n_classes, 2))
    probs, u = calibrated_probabilities(obs.logits, t)
    cells = np.asarray(obs.cells, dtype=np.int64)
    width = int(cells[:, 0].max()) + 1
    flat = cells[:, 1] * width + cells[:, 0]
    order = np.lexsort((obs.distances, -obs.heights, flat))
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat[order][1:] != flat[order][:-1]
    keep = order[first]
    return ProjectedHits(cells[keep], probs[keep], u[keep], np.asarray(obs.heights, dtype=float)[keep],
                         np.asarray(obs.distances, dtype=float)[keep])


def export_map(grid: GridMap, target_mask: np.ndarray, out_dir: str, prefix: str = "map",
               class_names: Optional[List[str]] = None) -> Dict[str, str]:
    """Write class, uncertainty and target-mask graymaps plus a palette legend.

    Row 0 of each image is iy = 0. Unknown cells are 255 in the class and uncertainty images.

    Returns:
        Mapping of artifact name to written path
    """
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    classes = grid.argmax_classes()
    class_img = np.where(classes < 0, UNKNOWN_PIXEL, classes).astype(np.uint8)
    uncertainty_img = np.rint(grid.uncertainty_grid() * 255.0).astype(np.uint8)
    target_img = np.where(target_mask, 255, 0).astype(np.uint8)

    paths = {
        "classes": os.path.join(out_dir, f"{prefix}_classes.pgm"),
        "uncertainty": os.path.join(out_dir, f"{prefix}_uncertainty.pgm"),
        "target": os.path.join(out_dir, f"{prefix}_target.pgm"),
        "legend": os.path.join(out_dir, f"{prefix}_legend.txt"),
    }
    Image.fromarray(class_img, mode="L").save(paths["classes"])
    Image.fromarray(uncertainty_img, mode="L").save(paths["uncertainty"])
    Image.fromarray(target_img, mode="L").save(paths["target"])

    names = class_names or config.class_names(grid.n_classes)
    with open(paths["legend"], "w") as f:
        f.write("# value name\n")
        for value, name in enumerate(names):
            f.write(f"{value} {name}\n")
        f.write(f"{UNKNOWN_PIXEL} unknown\n")
    logger.info(f"Exported map to {out_dir} ({prefix}_*.pgm)")
    return paths


def read_pgm(path: str) -> np.ndarray:
    with Image.open(path) as img:
        return np.array(img)

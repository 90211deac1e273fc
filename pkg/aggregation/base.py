"""
Strategy interface shared by every temporal aggregation method.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

import config
from errors import InvalidInputError
from schemas import StrategyConfig, StrategyKind
from semantic_map import GridMap, ProjectedHits

logger = logging.getLogger("aggregation")

Cell = Tuple[int, int]


class FoundReason(str, Enum):
    DISTANCE_ONLY = "distance_only"
    UNCERTAINTY_GATED = "uncertainty_gated"
    CLASSIFIER = "classifier"
    NONE = "none"


@dataclass(frozen=True)
class FoundDecision:
    found: bool
    cell: Optional[Cell] = None
    reason: FoundReason = FoundReason.NONE

    def __post_init__(self):
        if self.found and self.cell is None:
            raise InvalidInputError("A positive found decision needs a cell")


NOT_FOUND = FoundDecision(False)


class AggregationStrategy(ABC):
    """Fuses projected hits into a GridMap and decides when the target is found.

    One instance serves one episode and one target class.
    """

    kind: StrategyKind

    def __init__(self, strategy_config: StrategyConfig, target_class: int,
                 success_radius_m: float = config.SUCCESS_RADIUS_M):
        self.config = strategy_config
        self.params = strategy_config.params
        self.target_class = target_class
        self.success_radius_m = success_radius_m

    @property
    def name(self) -> str:
        return self.config.name

    def integrate(self, grid: GridMap, hits: ProjectedHits, pose) -> None:
        """Update heights, observation counts and the strategy state from one frame."""
        if len(hits) == 0:
            return
        grid.update_heights(hits.cells, hits.heights)
        grid.mark_observed(hits.cells)
        self._integrate(grid, hits, pose)

    @abstractmethod
    def _integrate(self, grid: GridMap, hits: ProjectedHits, pose) -> None:
        ...

    def target_mask(self, grid: GridMap) -> np.ndarray:
        """Cells rendered to the agent as the target class."""
        return grid.observed & (grid.p.argmax(axis=-1) == self.target_class)

    def rendered_classes(self, grid: GridMap) -> np.ndarray:
        """Class shown per cell, -1 where unknown."""
        return grid.argmax_classes()

    def found_mask(self, grid: GridMap) -> np.ndarray:
        return self.target_mask(grid)

    @property
    def found_reason(self) -> FoundReason:
        return FoundReason.DISTANCE_ONLY

    def decide_found(self, grid: GridMap, pose, target_class: Optional[int] = None) -> FoundDecision:
        """Found iff an eligible target cell lies within the success radius; picks the nearest."""
        if target_class is not None and target_class != self.target_class:
            raise InvalidInputError(f"Strategy was built for class {self.target_class}, not {target_class}")
        cell = nearest_cell_within(grid, self.found_mask(grid), pose, self.success_radius_m)
        if cell is None:
            return NOT_FOUND
        return FoundDecision(True, cell, self.found_reason)


def cell_distances(grid: GridMap, cells: np.ndarray, pose) -> np.ndarray:
    centers = grid.cell_centers(cells)
    return np.hypot(centers[:, 0] - pose.x, centers[:, 1] - pose.y)


def nearest_cell_within(grid: GridMap, mask: np.ndarray, pose, radius_m: float) -> Optional[Cell]:
    """Nearest masked cell whose center lies within radius_m of the pose; ties go to the lower flat index."""
    iy, ix = np.nonzero(mask)
    if len(ix) == 0:
        return None
    cells = np.stack([ix, iy], axis=1)
    dist = cell_distances(grid, cells, pose)
    inside = dist <= radius_m + 1e-9
    if not inside.any():
        return None
    # np.nonzero is row-major, so argmin's first hit is the lowest flat index
    candidates = np.flatnonzero(inside)
    best = candidates[int(np.argmin(dist[inside]))]
    return int(ix[best]), int(iy[best])

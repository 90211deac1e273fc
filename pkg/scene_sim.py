"""
Scene simulator for the semfuse benchmark.
A deterministic 2.5D grid world: rooms with walls, furniture-like target objects, a
field-of-view raycast sensor and a distance-dependent, overconfident perception noise model.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy import ndimage

import config
from calibration import LogitDataset
from errors import GenerationError, InvalidInputError, InvalidParameterError
from schemas import NoiseModel, SceneSpec, SensorConfig

logger = logging.getLogger("scene_sim")

Cell = Tuple[int, int]

_OBJECT_SIZES = [(1, 1), (1, 2), (2, 1), (2, 2)]
_PLACEMENT_TRIES = 50
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class AgentPose:
    x: float
    y: float
    theta: float


@dataclass(frozen=True)
class TargetInstance:
    class_id: int
    bbox: Tuple[int, int, int, int]  # x0, y0, x1, y1 inclusive

    def mask(self, shape: Tuple[int, int]) -> np.ndarray:
        x0, y0, x1, y1 = self.bbox
        out = np.zeros(shape, dtype=bool)
        out[y0:y1 + 1, x0:x1 + 1] = True
        return out


@dataclass
class Scene:
    """Ground-truth grid world. Arrays are indexed [iy, ix]."""
    scene_id: str
    resolution: float
    n_classes: int
    classes: np.ndarray
    heights: np.ndarray
    targets: List[TargetInstance] = field(default_factory=list)
    start_poses: List[AgentPose] = field(default_factory=list)
    seed: Optional[int] = None

    @property
    def width(self) -> int:
        return self.classes.shape[1]

    @property
    def height(self) -> int:
        return self.classes.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.classes.shape

    @property
    def occupied(self) -> np.ndarray:
        return self.heights > config.OCCUPANCY_HEIGHT_M

    @property
    def class_names(self) -> List[str]:
        return config.class_names(self.n_classes)

    def cell_of(self, x: float, y: float) -> Cell:
        return int(math.floor(x / self.resolution + 1e-9)), int(math.floor(y / self.resolution + 1e-9))

    def cell_center(self, cell: Cell) -> Tuple[float, float]:
        return (cell[0] + 0.5) * self.resolution, (cell[1] + 0.5) * self.resolution

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def is_valid_pose(self, pose: AgentPose) -> bool:
        cell = self.cell_of(pose.x, pose.y)
        return self.in_bounds(cell) and not self.occupied[cell[1], cell[0]]

    def instances_of(self, class_id: int) -> List[TargetInstance]:
        return [t for t in self.targets if t.class_id == class_id]

    def target_classes(self) -> List[int]:
        return sorted({t.class_id for t in self.targets})

    def bbox_mask(self, class_id: int) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for target in self.instances_of(class_id):
            mask |= target.mask(self.shape)
        return mask

    def target_cells(self, class_id: int) -> np.ndarray:
        """Cells of the given class that belong to a recorded target instance, as (ix, iy) rows."""
        mask = self.bbox_mask(class_id) & (self.classes == class_id)
        iy, ix = np.nonzero(mask)
        return np.stack([ix, iy], axis=1)

    def goal_cells(self, class_id: int) -> List[Cell]:
        """Free cells 8-adjacent to any instance of the class."""
        objects = self.bbox_mask(class_id) & (self.classes == class_id)
        ring = ndimage.binary_dilation(objects, structure=_EIGHT) & ~self.occupied
        iy, ix = np.nonzero(ring)
        return [(int(x), int(y)) for x, y in zip(ix, iy)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": config.SCENE_SCHEMA_VERSION,
            "scene_id": self.scene_id,
            "seed": self.seed,
            "width": self.width,
            "height": self.height,
            "resolution": self.resolution,
            "n_classes": self.n_classes,
            "class_names": self.class_names,
            "classes": self.classes.astype(int).tolist(),
            "heights": self.heights.astype(float).tolist(),
            "targets": [{"class_id": t.class_id, "bbox": list(t.bbox)} for t in self.targets],
            "start_poses": [[p.x, p.y, p.theta] for p in self.start_poses],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Scene":
        if data.get("schema_version") != config.SCENE_SCHEMA_VERSION:
            raise InvalidInputError(f"Unsupported scene schema version {data.get('schema_version')}")
        scene = cls(
            scene_id=data["scene_id"],
            resolution=float(data["resolution"]),
            n_classes=int(data["n_classes"]),
            classes=np.asarray(data["classes"], dtype=np.int64),
            heights=np.asarray(data["heights"], dtype=float),
            targets=[TargetInstance(int(t["class_id"]), tuple(int(v) for v in t["bbox"])) for t in data["targets"]],
            start_poses=[AgentPose(*map(float, p)) for p in data["start_poses"]],
            seed=data.get("seed"),
        )
        if scene.classes.shape != (data["height"], data["width"]):
            raise InvalidInputError(f"Scene {scene.scene_id}: class grid does not match width/height")
        validate_scene(scene)
        return scene


@dataclass
class Observation:
    """One posed sensor frame: visible cells with distance, logits and ground truth."""
    pose: AgentPose
    cells: np.ndarray
    distances: np.ndarray
    logits: np.ndarray
    true_classes: np.ndarray
    heights: np.ndarray

    def __len__(self) -> int:
        return len(self.distances)

    @property
    def hits(self) -> List[Tuple[Cell, float, np.ndarray, int]]:
        return [((int(c[0]), int(c[1])), float(d), l, int(t))
                for c, d, l, t in zip(self.cells, self.distances, self.logits, self.true_classes)]

    def digest_bytes(self) -> bytes:
        return b"".join(a.tobytes() for a in (self.cells, self.distances, self.logits, self.true_classes))


def validate_scene(scene: Scene) -> None:
    """Check target boxes and start poses; raises InvalidInputError."""
    if scene.heights.shape != scene.classes.shape:
        raise InvalidInputError(f"Scene {scene.scene_id}: height and class grids differ in shape")
    for target in scene.targets:
        x0, y0, x1, y1 = target.bbox
        if not (0 <= x0 <= x1 < scene.width and 0 <= y0 <= y1 < scene.height):
            raise InvalidInputError(f"Scene {scene.scene_id}: target bbox {target.bbox} outside the grid")
        if not np.any(scene.classes[y0:y1 + 1, x0:x1 + 1] == target.class_id):
            raise InvalidInputError(f"Scene {scene.scene_id}: target bbox {target.bbox} holds no cell of its class")
    for pose in scene.start_poses:
        if not scene.is_valid_pose(pose):
            raise InvalidInputError(f"Scene {scene.scene_id}: start pose {pose} is not on a free cell")


def save_scene(scene: Scene, path: str) -> None:
    with open(path, "w") as f:
        f.write(scene_to_json(scene))


def scene_to_json(scene: Scene) -> str:
    return json.dumps(scene.to_dict(), sort_keys=True)


def load_scene(path: str) -> Scene:
    with open(path, "r") as f:
        return Scene.from_dict(json.load(f))


def _heights_from_classes(classes: np.ndarray) -> np.ndarray:
    heights = np.full(classes.shape, config.OBJECT_HEIGHT_M)
    heights[classes == config.FLOOR_CLASS] = config.FLOOR_HEIGHT_M
    heights[classes == config.WALL_CLASS] = config.WALL_HEIGHT_M
    return heights


def _build_scene(spec: SceneSpec, rng: np.random.Generator, scene_id: str, seed: int) -> Optional[Scene]:
    w, h = spec.width, spec.height
    classes = np.full((h, w), config.FLOOR_CLASS, dtype=np.int64)
    classes[0, :] = classes[-1, :] = config.WALL_CLASS
    classes[:, 0] = classes[:, -1] = config.WALL_CLASS
    reserved = np.zeros((h, w), dtype=bool)

    if w >= 12 and h >= 12:
        wx = int(rng.integers(w // 3, 2 * w // 3 + 1))
        wy = int(rng.integers(h // 3, 2 * h // 3 + 1))
        classes[:, wx] = config.WALL_CLASS
        classes[wy, :] = config.WALL_CLASS
        # one two-cell doorway in each of the four wall segments
        for lo, hi in ((1, wy - 1), (wy + 1, h - 2)):
            d = int(rng.integers(lo, hi))
            classes[d:d + 2, wx] = config.FLOOR_CLASS
            reserved[d - 1:d + 3, wx - 1:wx + 2] = True
        for lo, hi in ((1, wx - 1), (wx + 1, w - 2)):
            d = int(rng.integers(lo, hi))
            classes[wy, d:d + 2] = config.FLOOR_CLASS
            reserved[wy - 1:wy + 2, d - 1:d + 3] = True

    interior = int(np.sum(classes == config.FLOOR_CLASS))
    n_objects = int(round(spec.object_density * interior / 2.5))
    if spec.object_density > 0:
        n_objects = max(1, n_objects)

    targets: List[TargetInstance] = []
    for _ in range(n_objects):
        for _ in range(_PLACEMENT_TRIES):
            ow, oh = _OBJECT_SIZES[int(rng.integers(len(_OBJECT_SIZES)))]
            x0 = int(rng.integers(1, w - ow))
            y0 = int(rng.integers(1, h - oh))
            margin = classes[y0 - 1:y0 + oh + 1, x0 - 1:x0 + ow + 1]
            if np.all(margin == config.FLOOR_CLASS) and not reserved[y0 - 1:y0 + oh + 1, x0 - 1:x0 + ow + 1].any():
                class_id = int(rng.integers(2, spec.n_classes))
                classes[y0:y0 + oh, x0:x0 + ow] = class_id
                targets.append(TargetInstance(class_id, (x0, y0, x0 + ow - 1, y0 + oh - 1)))
                break

    if not targets:
        return None

    heights = _heights_from_classes(classes)
    free = heights <= config.OCCUPANCY_HEIGHT_M
    labels, n_components = ndimage.label(free)
    if n_components == 0:
        return None
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    main = labels == int(np.argmax(sizes))

    reachable = []
    for target in targets:
        ring = ndimage.binary_dilation(target.mask(classes.shape), structure=_EIGHT)
        if np.any(ring & main):
            reachable.append(target)
    if not reachable:
        return None

    iy, ix = np.nonzero(main)
    n_starts = min(spec.n_start_poses, len(ix))
    picks = rng.choice(len(ix), size=n_starts, replace=False)
    starts = []
    for i in sorted(int(p) for p in picks):
        theta = float(rng.uniform(-math.pi, math.pi))
        starts.append(AgentPose((ix[i] + 0.5) * spec.resolution, (iy[i] + 0.5) * spec.resolution, theta))

    return Scene(scene_id=scene_id, resolution=spec.resolution, n_classes=spec.n_classes,
                 classes=classes, heights=heights, targets=targets, start_poses=starts, seed=seed)


def generate_scene(spec: SceneSpec, seed: int, scene_id: Optional[str] = None) -> Scene:
    """Generate a reproducible scene with at least one reachable target.

    Raises:
        GenerationError: no reachable target could be placed within the retry budget
    """
    scene_id = scene_id or f"scene_{seed:07d}"
    for attempt in range(config.SCENE_GENERATION_ATTEMPTS):
        rng = np.random.default_rng([seed, attempt])
        scene = _build_scene(spec, rng, scene_id, seed)
        if scene is not None:
            validate_scene(scene)
            return scene
    raise GenerationError(
        f"Could not place a reachable target in a {spec.width}x{spec.height} scene "
        f"(density {spec.object_density}, seed {seed}) after {config.SCENE_GENERATION_ATTEMPTS} attempts"
    )


def _raycast_arrays(scene: Scene, pose: AgentPose, fov_rad: float, n_rays: int,
                    max_range_m: float) -> Tuple[np.ndarray, np.ndarray]:
    res = scene.resolution
    step = res / 2.0
    n_steps = int(math.floor(max_range_m / step + 1e-9))
    if n_steps == 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    d = step * np.arange(1, n_steps + 1)
    if n_rays == 1:
        angles = np.array([pose.theta])
    else:
        angles = np.linspace(pose.theta - fov_rad / 2.0, pose.theta + fov_rad / 2.0, n_rays)
    xs = pose.x + np.cos(angles)[:, None] * d[None, :]
    ys = pose.y + np.sin(angles)[:, None] * d[None, :]
    ix = np.floor(xs / res).astype(np.int64)
    iy = np.floor(ys / res).astype(np.int64)

    inside = np.logical_and.accumulate((ix >= 0) & (ix < scene.width) & (iy >= 0) & (iy < scene.height), axis=1)
    occ = np.zeros(ix.shape, dtype=bool)
    occ[inside] = scene.occupied[iy[inside], ix[inside]]
    hits_before = np.cumsum(occ, axis=1) - occ
    own_x, own_y = scene.cell_of(pose.x, pose.y)
    keep = inside & (hits_before == 0) & ~((ix == own_x) & (iy == own_y))

    flat = (iy * scene.width + ix)[keep]
    dist = np.broadcast_to(d, ix.shape)[keep]
    if flat.size == 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    order = np.lexsort((dist, flat))
    flat, dist = flat[order], dist[order]
    first = np.ones(len(flat), dtype=bool)
    first[1:] = flat[1:] != flat[:-1]
    flat, dist = flat[first], dist[first]
    cells = np.stack([flat % scene.width, flat // scene.width], axis=1)
    return cells, dist


def raycast_fov(scene: Scene, pose: AgentPose, fov_rad: float = config.SENSOR_FOV_RAD,
                n_rays: int = config.SENSOR_RAYS,
                max_range_m: float = config.SENSOR_MAX_RANGE_M) -> List[Tuple[Cell, float]]:
    """Cells visible from the pose with their minimum ray distance.

    Each ray is sampled every half cell and stops at the first occupied cell (inclusive),
    the grid border or max_range_m. The agent's own cell is not returned.
    """
    cells, dist = _raycast_arrays(scene, pose, fov_rad, n_rays, max_range_m)
    return [((int(c[0]), int(c[1])), float(v)) for c, v in zip(cells, dist)]


def _check_rng(rng) -> None:
    if not isinstance(rng, np.random.Generator):
        raise InvalidInputError(f"Expected a numpy Generator, got {type(rng).__name__}")


def _draw_confidence(eps: np.ndarray, noise: NoiseModel, rng: np.random.Generator,
                     n_classes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-cell confidence on the observed class and whether the observation is wrong."""
    m = len(eps)
    if noise.true_confidence is not None:
        if noise.true_confidence <= 1.0 / n_classes:
            raise InvalidParameterError(f"true_confidence must exceed 1/C = {1.0 / n_classes:.3f}")
        return np.full(m, noise.true_confidence), rng.random(m) < eps
    if noise.confidence_concentration is None:
        return np.clip(1.0 - eps, 1.0 / n_classes + 1e-3, 1.0 - 1e-6), rng.random(m) < eps

    # c ~ Beta with mean 1 - eps(d); the label is correct with probability c
    kappa = noise.confidence_concentration
    mean = np.clip(1.0 - eps, 1e-6, 1.0 - 1e-6)
    confidence = rng.beta(kappa * mean, kappa * (1.0 - mean))
    wrong = rng.random(m) >= confidence
    confidence = np.where(eps <= 0.0, 1.0, confidence)
    wrong = np.where(eps <= 0.0, False, np.where(eps >= 1.0, True, wrong))
    return np.clip(confidence, 1.0 / n_classes + 1e-3, 1.0 - 1e-6), wrong


def generate_logits_batch(true_classes: np.ndarray, distances: np.ndarray, noise: NoiseModel,
                          rng: np.random.Generator, n_classes: int) -> np.ndarray:
    """Miscalibrated logits k * ln(q) for a batch of cells.

    The observation is wrong with overall probability eps(d), in which case the observed
    class is drawn from the confusion row of the true class. q puts a confidence c on the
    observed class and spreads the remainder uniformly. By default c is drawn per cell from
    a Beta distribution with mean 1 - eps(d) and the observation is correct with probability
    c, so low-confidence outputs are the ones that tend to be wrong while the stream stays
    calibrated before the k factor is applied.
    """
    _check_rng(rng)
    true_classes = np.asarray(true_classes, dtype=np.int64)
    distances = np.asarray(distances, dtype=float)
    m = len(true_classes)
    if m == 0:
        return np.zeros((0, n_classes))
    eps = noise.error_probability(distances)
    confidence, flip = _draw_confidence(eps, noise, rng, n_classes)

    u = rng.random(m)
    cdf = np.cumsum(noise.confusion_matrix(n_classes)[true_classes], axis=1)
    wrong = np.minimum((u[:, None] > cdf).sum(axis=1), n_classes - 1)
    observed = np.where(flip, wrong, true_classes)

    q = np.repeat(((1.0 - confidence) / (n_classes - 1))[:, None], n_classes, axis=1)
    q[np.arange(m), observed] = confidence
    return noise.overconfidence_factor * np.log(q)


def generate_logits(true_class: int, distance_m: float, noise: NoiseModel,
                    rng: np.random.Generator, n_classes: int) -> np.ndarray:
    """Single-cell version of generate_logits_batch."""
    return generate_logits_batch(np.array([true_class]), np.array([distance_m]), noise, rng, n_classes)[0]


def ground_truth_logits(true_class, n_classes: int) -> np.ndarray:
    """Near-one-hot logits ln(q) with q floored at the probability floor."""
    classes = np.atleast_1d(np.asarray(true_class, dtype=np.int64))
    q = np.full((len(classes), n_classes), config.PROB_FLOOR)
    q[np.arange(len(classes)), classes] = 1.0 - (n_classes - 1) * config.PROB_FLOOR
    logits = np.log(q)
    return logits[0] if np.ndim(true_class) == 0 else logits


def observe(scene: Scene, pose: AgentPose, sensor: SensorConfig, noise: NoiseModel,
            rng: np.random.Generator, ground_truth: bool = False) -> Observation:
    """Raycast from the pose and synthesize logits for every visible cell.

    Noise is always drawn so the random stream does not depend on ground_truth.
    """
    cells, dist = _raycast_arrays(scene, pose, sensor.fov_rad, sensor.n_rays, sensor.max_range_m)
    true_classes = scene.classes[cells[:, 1], cells[:, 0]] if len(cells) else np.zeros(0, dtype=np.int64)
    logits = generate_logits_batch(true_classes, dist, noise, rng, scene.n_classes)
    if ground_truth:
        logits = ground_truth_logits(true_classes, scene.n_classes).reshape(len(cells), scene.n_classes)
    heights = scene.heights[cells[:, 1], cells[:, 0]] if len(cells) else np.zeros(0)
    return Observation(pose=pose, cells=cells, distances=dist, logits=logits,
                       true_classes=true_classes, heights=heights)


def simulate_calibration_stream(noise: NoiseModel, n: int, rng: np.random.Generator,
                                n_classes: int) -> LogitDataset:
    """Labelled logits at uniformly drawn classes and distances."""
    _check_rng(rng)
    labels = rng.integers(0, n_classes, size=n)
    distances = rng.uniform(0.0, noise.max_range_m, size=n)
    return LogitDataset(generate_logits_batch(labels, distances, noise, rng, n_classes), labels)

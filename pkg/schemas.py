"""
Configuration and record models for the semfuse benchmark.
All run inputs are validated here before any episode starts.
"""
import json
import math
import os
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

import config
from errors import ConfigError


class StrategyKind(str, Enum):
    GROUND_TRUTH = "GroundTruth"
    LATEST = "Latest"
    HITS_VIEWS = "HitsViews"
    SKILL_FUSION = "SkillFusion"
    STUBBORN = "Stubborn"
    LATEST_FILTERED = "LatestFiltered"
    LOG_ODDS = "LogOdds"
    AVERAGING = "Averaging"
    WEIGHTED_AVERAGING = "WeightedAveraging"


class PolicyKind(str, Enum):
    SHORTEST_PATH = "ShortestPath"
    FRONTIER = "Frontier"


REQUIRED_PARAMS = {
    StrategyKind.GROUND_TRUTH: (),
    StrategyKind.LATEST: (),
    StrategyKind.HITS_VIEWS: ("theta", "views", "d_view"),
    StrategyKind.SKILL_FUSION: ("alpha", "score_threshold", "erosion_m"),
    StrategyKind.STUBBORN: (),
    StrategyKind.LATEST_FILTERED: ("rho",),
    StrategyKind.LOG_ODDS: ("xi",),
    StrategyKind.AVERAGING: ("xi",),
    StrategyKind.WEIGHTED_AVERAGING: ("xi", "u_clamp"),
}


class SceneSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    width: int = 32
    height: int = 32
    n_classes: int = 6
    object_density: float = 0.03
    resolution: float = config.DEFAULT_RESOLUTION_M
    n_start_poses: int = 4

    @field_validator("width", "height")
    @classmethod
    def _size(cls, value: int) -> int:
        if value < 5:
            raise ValueError("scene sides must be at least 5 cells")
        return value

    @field_validator("n_classes")
    @classmethod
    def _classes(cls, value: int) -> int:
        if value < 3:
            raise ValueError("need free space, walls and at least one object class (n_classes >= 3)")
        return value

    @field_validator("object_density")
    @classmethod
    def _density(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError("object_density must lie in [0, 1]")
        return value

    @field_validator("resolution")
    @classmethod
    def _resolution(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("resolution must be positive")
        return value


class SensorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    fov_deg: float = config.SENSOR_FOV_DEG
    n_rays: int = config.SENSOR_RAYS
    max_range_m: float = config.SENSOR_MAX_RANGE_M

    @property
    def fov_rad(self) -> float:
        return math.radians(self.fov_deg)

    @model_validator(mode="after")
    def _check(self) -> "SensorConfig":
        if self.n_rays < 1 or self.max_range_m <= 0 or not 0 <= self.fov_deg <= 360:
            raise ValueError("sensor needs n_rays >= 1, max_range_m > 0 and fov_deg in [0, 360]")
        return self


class NoiseModel(BaseModel):
    """Distance-dependent, overconfident perception noise."""
    model_config = ConfigDict(extra="forbid")

    base_error: float = 0.1
    distance_error_slope: float = 0.3
    true_confidence: Optional[float] = None
    confidence_concentration: Optional[float] = 2.0
    overconfidence_factor: float = 3.0
    structured_confusion: float = 0.0
    confusion: Optional[List[List[float]]] = None
    max_range_m: float = config.SENSOR_MAX_RANGE_M

    @model_validator(mode="after")
    def _check(self) -> "NoiseModel":
        if self.base_error < 0 or self.distance_error_slope < 0:
            raise ValueError("error rates must be non-negative")
        if self.base_error + self.distance_error_slope > 1.0:
            raise ValueError("base_error + distance_error_slope must not exceed 1")
        if self.true_confidence is not None and not 0.0 < self.true_confidence < 1.0:
            raise ValueError("true_confidence must lie in (0, 1)")
        if self.confidence_concentration is not None and self.confidence_concentration <= 0:
            raise ValueError("confidence_concentration must be positive")
        if self.overconfidence_factor < 1.0:
            raise ValueError("overconfidence_factor must be >= 1")
        if not 0.0 <= self.structured_confusion <= 1.0:
            raise ValueError("structured_confusion must lie in [0, 1]")
        if self.confusion is not None:
            matrix = np.asarray(self.confusion, dtype=float)
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise ValueError("confusion must be a square matrix")
            if np.any(matrix < 0) or not np.allclose(matrix.sum(axis=1), 1.0, atol=1e-9):
                raise ValueError("confusion rows must be non-negative and sum to 1")
            off_diagonal = matrix.sum(axis=1) - np.diag(matrix)
            if np.any(off_diagonal <= 0):
                raise ValueError("every confusion row needs mass off the diagonal")
        return self

    @classmethod
    def from_profile(cls, name: str, **overrides: Any) -> "NoiseModel":
        if name not in config.PERCEPTION_PROFILES:
            raise ConfigError(f"Unknown perception profile {name}; valid profiles: {sorted(config.PERCEPTION_PROFILES)}")
        values = {k: v for k, v in config.PERCEPTION_PROFILES[name].items() if k != "description"}
        values.update(overrides)
        return cls(**values)

    def error_probability(self, distance_m):
        """eps(d) = min(1, eps0 + epsd * d / max_range)."""
        return np.minimum(1.0, self.base_error + self.distance_error_slope * np.asarray(distance_m) / self.max_range_m)

    def confusion_matrix(self, n_classes: int) -> np.ndarray:
        """Row-stochastic distribution of wrong labels; diagonal mass is dropped and rows renormalized."""
        if self.confusion is not None:
            matrix = np.asarray(self.confusion, dtype=float)
            if matrix.shape != (n_classes, n_classes):
                raise ConfigError(f"confusion is {matrix.shape}, expected {(n_classes, n_classes)}")
            matrix = matrix.copy()
            np.fill_diagonal(matrix, 0.0)
            return matrix / matrix.sum(axis=1, keepdims=True)
        matrix = np.full((n_classes, n_classes), 1.0 / (n_classes - 1))
        np.fill_diagonal(matrix, 0.0)
        if self.structured_confusion > 0:
            # pair object classes (2,3), (4,5), ...
            for c in range(2, n_classes - 1, 2):
                for a, b in ((c, c + 1), (c + 1, c)):
                    row = np.full(n_classes, (1.0 - self.structured_confusion) / (n_classes - 1))
                    row[a] = 0.0
                    row[b] = self.structured_confusion + (1.0 - self.structured_confusion) / (n_classes - 1)
                    matrix[a] = row
        return matrix


class StrategyParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    theta: Optional[float] = None
    views: Optional[int] = None
    d_view: Optional[float] = None
    alpha: Optional[float] = None
    score_threshold: Optional[float] = None
    erosion_m: Optional[float] = None
    rho: Optional[float] = None
    xi: Optional[float] = None
    u_clamp: Optional[float] = None


class StrategyConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: StrategyKind
    use_calibration: bool = True
    use_uncertainty_found: bool = True
    params: StrategyParams = Field(default_factory=StrategyParams)
    label: Optional[str] = None

    @model_validator(mode="after")
    def _fill_and_check(self) -> "StrategyConfig":
        defaults = config.DEFAULT_STRATEGY_PARAMS[self.kind.value]
        for name in REQUIRED_PARAMS[self.kind]:
            if getattr(self.params, name) is None:
                setattr(self.params, name, defaults[name])
        p = self.params
        for name in ("theta", "rho", "xi", "alpha"):
            value = getattr(p, name)
            if value is not None and not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if p.views is not None and p.views < 1:
            raise ValueError("views must be >= 1")
        if p.d_view is not None and p.d_view <= 0:
            raise ValueError("d_view must be positive")
        if p.erosion_m is not None and p.erosion_m < 0:
            raise ValueError("erosion_m must be non-negative")
        if p.score_threshold is not None and p.score_threshold <= 0:
            raise ValueError("score_threshold must be positive")
        if p.u_clamp is not None and not 0.0 < p.u_clamp <= 1.0:
            raise ValueError("u_clamp must lie in (0, 1]")
        return self

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        flags = []
        if self.use_calibration:
            flags.append("cal")
        if self.use_uncertainty_found and self.kind in (
            StrategyKind.LOG_ODDS, StrategyKind.AVERAGING, StrategyKind.WEIGHTED_AVERAGING
        ):
            flags.append("unc")
        return f"{self.kind.value}[{','.join(flags)}]" if flags else self.kind.value

    def with_params(self, **params: Any) -> "StrategyConfig":
        merged = self.params.model_dump()
        merged.update(params)
        return StrategyConfig(
            kind=self.kind,
            use_calibration=self.use_calibration,
            use_uncertainty_found=self.use_uncertainty_found,
            params=StrategyParams(**merged),
            label=self.label,
        )


class PerceptionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    profile: str = "default"
    noise: Optional[NoiseModel] = None
    temperature: Optional[float] = None
    logit_file: Optional[str] = None

    @field_validator("profile")
    @classmethod
    def _profile(cls, value: str) -> str:
        if value not in config.PERCEPTION_PROFILES:
            raise ValueError(f"unknown profile {value}; valid profiles: {sorted(config.PERCEPTION_PROFILES)}")
        return value

    @field_validator("temperature")
    @classmethod
    def _temperature(cls, value: Optional[float]) -> Optional[float]:
        low, high = config.TEMPERATURE_BOUNDS
        if value is not None and not low <= value <= high:
            raise ValueError(f"temperature must lie in [{low}, {high}]")
        return value

    def resolve_noise(self) -> NoiseModel:
        return self.noise if self.noise is not None else NoiseModel.from_profile(self.profile)


class SceneSetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dir: Optional[str] = None
    count: int = 20
    seed: Optional[int] = None
    spec: SceneSpec = Field(default_factory=SceneSpec)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: int
    name: str = "benchmark"
    scenes: SceneSetConfig = Field(default_factory=SceneSetConfig)
    episodes: int = 100
    target_classes: Optional[List[int]] = None
    strategies: List[StrategyConfig]
    policies: List[PolicyKind] = Field(default_factory=lambda: [PolicyKind.SHORTEST_PATH])
    perception: List[PerceptionConfig] = Field(default_factory=lambda: [PerceptionConfig()])
    seed: Optional[int] = None
    output_dir: str = config.RESULTS_DIR
    workers: Optional[int] = None
    max_steps: int = config.MAX_STEPS
    success_radius_m: float = config.SUCCESS_RADIUS_M
    sensor: SensorConfig = Field(default_factory=SensorConfig)
    stubborn_training_episodes: int = config.STUBBORN_TRAINING_EPISODES
    calibration_stream_size: int = config.CALIBRATION_STREAM_SIZE

    @field_validator("schema_version")
    @classmethod
    def _version(cls, value: int) -> int:
        if value != config.SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {value}, expected {config.SCHEMA_VERSION}")
        return value

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        if not self.strategies:
            raise ValueError("at least one strategy is required")
        if self.episodes < 1 or self.max_steps < 1 or self.success_radius_m <= 0:
            raise ValueError("episodes and max_steps must be >= 1 and success_radius_m > 0")
        if self.target_classes is not None:
            bad = [c for c in self.target_classes if not 2 <= c < self.scenes.spec.n_classes]
            if bad:
                raise ValueError(f"target classes {bad} are not object classes")
        return self

    @property
    def run_seed(self) -> int:
        return self.seed if self.seed is not None else config.default_seed()


class EpisodeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    episode_id: str
    scene_id: str
    start_index: int
    target_class: int
    strategy: StrategyConfig
    policy: PolicyKind = PolicyKind.SHORTEST_PATH
    profile: str = "default"
    noise: NoiseModel = Field(default_factory=NoiseModel)
    temperature: float = 1.0
    sensor: SensorConfig = Field(default_factory=SensorConfig)
    max_steps: int = config.MAX_STEPS
    success_radius_m: float = config.SUCCESS_RADIUS_M
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "EpisodeConfig":
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.success_radius_m <= 0:
            raise ValueError("success_radius_m must be positive")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        return self


def _format_validation_error(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"])
        lines.append(f"{location}: {item['msg']}")
        if location.endswith("kind"):
            lines.append(f"valid kinds: {', '.join(k.value for k in StrategyKind)}")
    return "; ".join(lines)


def parse_run_config(data: Dict[str, Any]) -> RunConfig:
    """Validate a run configuration mapping; referenced files must exist."""
    try:
        run_config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid run configuration: {_format_validation_error(e)}") from e
    if run_config.scenes.dir is not None and not os.path.isdir(run_config.scenes.dir):
        raise ConfigError(f"Scene directory {run_config.scenes.dir} does not exist")
    for perception in run_config.perception:
        if perception.logit_file is not None and not os.path.isfile(perception.logit_file):
            raise ConfigError(f"Logit file {perception.logit_file} does not exist")
    return run_config


def load_run_config(path: str, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Load a JSON run configuration, applying flag overrides to top-level fields."""
    if not os.path.isfile(path):
        raise ConfigError(f"Run configuration {path} does not exist")
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Run configuration {path} is not valid JSON: {e}") from e
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return parse_run_config(data)


def parse_strategy_config(data: Dict[str, Any]) -> StrategyConfig:
    try:
        return StrategyConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid strategy configuration: {_format_validation_error(e)}") from e

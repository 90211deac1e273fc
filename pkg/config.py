"""
Configuration settings for the semfuse benchmark.
Everything runs locally in a synthetic grid world; no simulator install or GPU is required.
"""
import math
import os
from pathlib import Path

# Base directory for the application
BASE_DIR = Path(os.path.dirname(os.path.abspath(__file__)))

# Directory for generated scenes
SCENES_DIR = os.path.join(BASE_DIR, "scenes")

# Directory for run outputs
RESULTS_DIR = os.path.join(BASE_DIR, "results")

# Directory for logs
LOGS_DIR = os.path.join(BASE_DIR, "logs")

# Run configuration schema version
SCHEMA_VERSION = 1

# Global seed / worker fallbacks
SEED_ENV_VAR = "SEMFUSE_SEED"
WORKERS_ENV_VAR = "SEMFUSE_WORKERS"

# Seeds at or above this offset are reserved for training scenes (hyperopt, Stubborn)
TRAINING_SEED_OFFSET = 1_000_000

# Calibration
TEMPERATURE_BOUNDS = (0.05, 20.0)
TEMPERATURE_TOLERANCE = 1e-3
PROB_FLOOR = 1e-12
DEFAULT_ECE_BINS = 10
CALIBRATION_STREAM_SIZE = 5000

# Logit dataset file
LOGIT_FILE_MAGIC = b"SFLG"
LOGIT_FILE_VERSION = 1

# Scenes
FLOOR_CLASS = 0
WALL_CLASS = 1
WALL_HEIGHT_M = 2.0
OBJECT_HEIGHT_M = 0.5
FLOOR_HEIGHT_M = 0.0
OCCUPANCY_HEIGHT_M = 0.1
DEFAULT_RESOLUTION_M = 0.25
SCENE_GENERATION_ATTEMPTS = 20
SCENE_SCHEMA_VERSION = 1

CLASS_NAMES = ["floor", "wall", "chair", "couch", "bed", "toilet", "tv", "table", "sink", "plant"]

# Sensor
SENSOR_FOV_DEG = 90.0
SENSOR_RAYS = 61
SENSOR_MAX_RANGE_M = 5.0

# Episodes
MAX_STEPS = 1000
SUCCESS_RADIUS_M = 1.0
STEP_LENGTH_M = 0.25
FRONTIER_REPLAN_EVERY = 10
DETECTION_DILATION_CELLS = 2

# Aggregation
FOUND_UNCERTAINTY_XI = 0.4
UNCERTAINTY_CLAMP = 1e-3
NB_VARIANCE_FLOOR = 1e-6
STUBBORN_TRAINING_EPISODES = 64

# Hyperparameter search
HYPEROPT_BUDGET = 20
HYPEROPT_EPISODES = 30

# Supported aggregation strategies
SUPPORTED_STRATEGIES = {
    "GroundTruth": {
        "description": "Map built from the ground truth semantic camera; found when close to a mapped target"
    },
    "Latest": {
        "description": "Overwrite each cell with the latest prediction"
    },
    "HitsViews": {
        "description": "Hit and close-view counters with a hits/views ratio test"
    },
    "SkillFusion": {
        "description": "Eroded target detections with a decaying existence score"
    },
    "Stubborn": {
        "description": "Per-object evidence features scored by a Gaussian Naive Bayes classifier"
    },
    "LatestFiltered": {
        "description": "Latest, but targets with map uncertainty >= rho are rendered as occupied"
    },
    "LogOdds": {
        "description": "Multi-class Bayesian log-odds accumulation"
    },
    "Averaging": {
        "description": "Running mean of calibrated probability vectors"
    },
    "WeightedAveraging": {
        "description": "Mean of calibrated probability vectors weighted by inverse perception uncertainty"
    },
}

# Default hyperparameters before search
DEFAULT_STRATEGY_PARAMS = {
    "GroundTruth": {},
    "Latest": {},
    "HitsViews": {"theta": 0.8, "views": 3, "d_view": 2.0},
    "SkillFusion": {"alpha": 0.9, "score_threshold": 2.0, "erosion_m": 0.04},
    "Stubborn": {},
    "LatestFiltered": {"rho": 0.5},
    "LogOdds": {"xi": FOUND_UNCERTAINTY_XI},
    "Averaging": {"xi": 0.5},
    "WeightedAveraging": {"xi": FOUND_UNCERTAINTY_XI, "u_clamp": UNCERTAINTY_CLAMP},
}

# Search spaces: name -> (kind, low, high, scale)
DEFAULT_SEARCH_SPACES = {
    "HitsViews": {
        "theta": ("real", 0.5, 0.99, "linear"),
        "views": ("int", 1, 8, "linear"),
        "d_view": ("real", 0.5, 5.0, "linear"),
    },
    "SkillFusion": {
        "alpha": ("real", 0.5, 0.99, "linear"),
        "score_threshold": ("real", 0.5, 6.0, "linear"),
        "erosion_m": ("real", 0.0, 0.5, "linear"),
    },
    "LatestFiltered": {
        "rho": ("real", 0.05, 0.95, "linear"),
    },
    "LogOdds": {
        "xi": ("real", 0.01, 0.95, "log"),
    },
    "Averaging": {
        "xi": ("real", 0.05, 0.95, "linear"),
    },
    "WeightedAveraging": {
        "xi": ("real", 0.05, 0.95, "linear"),
    },
}

# Perception noise presets, one per simulated segmentation model
PERCEPTION_PROFILES = {
    "default": {
        "description": "Moderate noise, overconfident by a factor of 3",
        "base_error": 0.1,
        "distance_error_slope": 0.3,
        "confidence_concentration": 2.0,
        "overconfidence_factor": 3.0,
        "structured_confusion": 0.0,
    },
    "low-noise": {
        "description": "Accurate model, mildly overconfident",
        "base_error": 0.05,
        "distance_error_slope": 0.15,
        "confidence_concentration": 2.0,
        "overconfidence_factor": 2.0,
        "structured_confusion": 0.0,
    },
    "high-noise": {
        "description": "Error-prone, strongly overconfident model",
        "base_error": 0.15,
        "distance_error_slope": 0.4,
        "confidence_concentration": 1.5,
        "overconfidence_factor": 5.0,
        "structured_confusion": 0.0,
    },
    "structured-confusion": {
        "description": "Errors concentrated on paired object classes (couch/chair style)",
        "base_error": 0.1,
        "distance_error_slope": 0.3,
        "confidence_concentration": 2.0,
        "overconfidence_factor": 3.0,
        "structured_confusion": 0.8,
    },
}

# Exit codes
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_RUNTIME = 4


def class_names(n_classes: int) -> list:
    """Names for the first n_classes class ids."""
    names = list(CLASS_NAMES[:n_classes])
    names += [f"object_{i}" for i in range(len(names), n_classes)]
    return names


def default_seed() -> int:
    """Global seed fallback from the environment."""
    return int(os.environ.get(SEED_ENV_VAR, "0"))


def default_workers() -> int:
    """Worker count fallback: environment, then available cores."""
    value = os.environ.get(WORKERS_ENV_VAR)
    if value:
        return max(1, int(value))
    return max(1, os.cpu_count() or 1)


SENSOR_FOV_RAD = math.radians(SENSOR_FOV_DEG)

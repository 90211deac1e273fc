"""
Stubborn baseline: per-object evidence features scored by a Gaussian Naive Bayes classifier.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage, special

import config
from aggregation.base import AggregationStrategy, FoundDecision, FoundReason, NOT_FOUND, cell_distances
from errors import InvalidInputError, TrainingError
from schemas import StrategyConfig, StrategyKind
from semantic_map import GridMap, ProjectedHits

logger = logging.getLogger("aggregation.stubborn")

FEATURE_NAMES = ("views", "cumulative_confidence", "max_confidence", "max_non_target_confidence")
N_FEATURES = len(FEATURE_NAMES)
_EIGHT = np.ones((3, 3), dtype=bool)
_FILE_HEADER = "# semfuse gaussian naive bayes v1"


@dataclass(frozen=True)
class NBClassifier:
    """Two-class Gaussian Naive Bayes; row 0 = wrong candidate, row 1 = real target."""
    means: np.ndarray
    variances: np.ndarray
    priors: np.ndarray

    def log_likelihood(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        return np.sum(-0.5 * np.log(2.0 * np.pi * self.variances)
                      - (x - self.means) ** 2 / (2.0 * self.variances), axis=-1)

    def posterior(self, features: np.ndarray) -> np.ndarray:
        """Normalized class posteriors [P(wrong), P(target)]."""
        joint = np.log(self.priors) + self.log_likelihood(features)
        return np.exp(joint - special.logsumexp(joint))

    def predict(self, features: np.ndarray) -> bool:
        post = self.posterior(features)
        return bool(post[1] > post[0])

    def save(self, path: str) -> None:
        """Plain text: header, then prior / mean / var lines per class."""
        lines = [_FILE_HEADER, "features " + " ".join(FEATURE_NAMES)]
        for label in (0, 1):
            lines.append(f"prior {label} {float(self.priors[label])!r}")
            lines.append(f"mean {label} " + " ".join(repr(float(v)) for v in self.means[label]))
            lines.append(f"var {label} " + " ".join(repr(float(v)) for v in self.variances[label]))
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str) -> "NBClassifier":
        means = np.zeros((2, N_FEATURES))
        variances = np.zeros((2, N_FEATURES))
        priors = np.zeros(2)
        with open(path, "r") as f:
            lines = [line.split() for line in f if line.strip() and not line.startswith("#")]
        try:
            for parts in lines:
                if parts[0] == "prior":
                    priors[int(parts[1])] = float(parts[2])
                elif parts[0] == "mean":
                    means[int(parts[1])] = [float(v) for v in parts[2:]]
                elif parts[0] == "var":
                    variances[int(parts[1])] = [float(v) for v in parts[2:]]
        except (IndexError, ValueError) as e:
            raise InvalidInputError(f"Malformed classifier file {path}: {e}") from e
        if not np.isclose(priors.sum(), 1.0) or np.any(variances < config.NB_VARIANCE_FLOOR):
            raise InvalidInputError(f"Classifier file {path} has invalid priors or variances")
        return cls(means, variances, priors)


def nb_train(features, labels) -> NBClassifier:
    """Fit per-class feature means and variances (floored) and class priors.

    Raises:
        TrainingError: no samples, or a class without samples
    """
    x = np.asarray(features, dtype=float).reshape(-1, N_FEATURES)
    y = np.asarray(labels, dtype=bool)
    if len(x) == 0:
        raise TrainingError("Cannot train the classifier on an empty sample set")
    if len(x) != len(y):
        raise TrainingError(f"{len(x)} feature rows but {len(y)} labels")
    means = np.zeros((2, N_FEATURES))
    variances = np.zeros((2, N_FEATURES))
    priors = np.zeros(2)
    for label in (0, 1):
        rows = x[y == bool(label)]
        if len(rows) == 0:
            raise TrainingError(f"No {'positive' if label else 'negative'} samples to train on")
        means[label] = rows.mean(axis=0)
        variances[label] = np.maximum(rows.var(axis=0), config.NB_VARIANCE_FLOOR)
        priors[label] = len(rows) / len(x)
    logger.info(f"Trained Naive Bayes on {len(x)} samples ({int(y.sum())} positive)")
    return NBClassifier(means, variances, priors)


@dataclass
class CandidateSample:
    """Features of one candidate and its component cropped to the component's bounding box."""
    features: np.ndarray
    origin: Tuple[int, int]  # (iy, ix) of crop[0, 0]
    crop: np.ndarray

    @classmethod
    def from_component(cls, features: np.ndarray, component: np.ndarray) -> "CandidateSample":
        rows, cols = ndimage.find_objects(component.astype(np.int32))[0]
        return cls(features, (rows.start, cols.start), component[rows, cols].copy())

    def overlaps(self, mask: np.ndarray) -> bool:
        """True if any component cell is set in a full-grid mask."""
        y0, x0 = self.origin
        h, w = self.crop.shape
        return bool(np.any(self.crop & mask[y0:y0 + h, x0:x0 + w]))


class StubbornStrategy(AggregationStrategy):
    """Latest map plus evidence channels; the nearest target component within reach is classified.

    Without a classifier the strategy never fires and records candidate samples instead.
    """

    kind = StrategyKind.STUBBORN

    def __init__(self, strategy_config: StrategyConfig, target_class: int,
                 success_radius_m: float = config.SUCCESS_RADIUS_M,
                 classifier: Optional[NBClassifier] = None):
        super().__init__(strategy_config, target_class, success_radius_m)
        self.classifier = classifier
        self.samples: List[CandidateSample] = []

    def _integrate(self, grid: GridMap, hits: ProjectedHits, pose) -> None:
        grid.set_probabilities(hits.cells, hits.probs)
        views = grid.channel("stubborn_views")
        cum_conf = grid.channel("cumulative_confidence")
        max_conf = grid.channel("max_confidence")
        max_other = grid.channel("max_non_target_confidence")
        iy, ix = hits.iy, hits.ix
        target_p = hits.probs[:, self.target_class]
        others = np.delete(hits.probs, self.target_class, axis=1).max(axis=1)
        views[iy, ix] += 1.0
        cum_conf[iy, ix] += target_p
        max_conf[iy, ix] = np.maximum(max_conf[iy, ix], target_p)
        max_other[iy, ix] = np.maximum(max_other[iy, ix], others)

    def stubborn_features(self, grid: GridMap, component: np.ndarray) -> np.ndarray:
        """[total views, cumulative confidence, max confidence, max non-target confidence] over a component."""
        if not component.any():
            raise InvalidInputError("Feature region is empty")
        return np.array([
            grid.channel("stubborn_views")[component].sum(),
            grid.channel("cumulative_confidence")[component].sum(),
            grid.channel("max_confidence")[component].max(),
            grid.channel("max_non_target_confidence")[component].max(),
        ])

    def candidate(self, grid: GridMap, pose) -> Optional[Tuple[np.ndarray, Tuple[int, int]]]:
        """Nearest 8-connected target component with a cell inside the success radius."""
        labels, n = ndimage.label(self.target_mask(grid), structure=_EIGHT)
        if n == 0:
            return None
        iy, ix = np.nonzero(labels)
        dist = cell_distances(grid, np.stack([ix, iy], axis=1), pose)
        best = int(np.argmin(dist))
        if dist[best] > self.success_radius_m + 1e-9:
            return None
        return labels == labels[iy[best], ix[best]], (int(ix[best]), int(iy[best]))

    def decide_found(self, grid: GridMap, pose, target_class: Optional[int] = None) -> FoundDecision:
        if target_class is not None and target_class != self.target_class:
            raise InvalidInputError(f"Strategy was built for class {self.target_class}, not {target_class}")
        found = self.candidate(grid, pose)
        if found is None:
            return NOT_FOUND
        component, cell = found
        features = self.stubborn_features(grid, component)
        if self.classifier is None:
            self.samples.append(CandidateSample.from_component(features, component))
            return NOT_FOUND
        return nb_found(self.classifier, features, cell)


def nb_found(classifier: NBClassifier, features: np.ndarray, cell: Tuple[int, int]) -> FoundDecision:
    """Classifier verdict on a candidate's features as a FoundDecision."""
    if classifier.predict(features):
        return FoundDecision(True, cell, FoundReason.CLASSIFIER)
    return NOT_FOUND

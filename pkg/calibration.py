"""
Calibration module for the semfuse benchmark.
Turns raw logits into calibrated probabilities and uncertainties (temperature scaling,
normalized entropy) and evaluates them with ECE / uncertainty-ECE reliability statistics.
All functions are pure and operate on the last axis of their array inputs.
"""
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import special

import config
from errors import InvalidInputError, InvalidParameterError

logger = logging.getLogger("calibration")

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_HEADER = struct.Struct("<4sIQI")


class ReliabilityBin(NamedTuple):
    lower: float
    upper: float
    confidence_mean: float
    accuracy: float
    count: int


@dataclass
class CalibrationReport:
    """Per-bin reliability statistics for both confidence definitions."""
    ece: float
    uece: float
    n_bins: int
    bins: List[ReliabilityBin] = field(default_factory=list)
    uncertainty_bins: List[ReliabilityBin] = field(default_factory=list)
    mce: float = 0.0
    umce: float = 0.0

    @property
    def n_samples(self) -> int:
        return sum(b.count for b in self.bins)


@dataclass
class LogitDataset:
    """Labelled logits, one row per pixel/cell sample."""
    logits: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.logits.ndim != 2 or self.labels.ndim != 1 or len(self.logits) != len(self.labels):
            raise InvalidInputError(
                f"Expected logits (N, C) and labels (N,), got {self.logits.shape} and {self.labels.shape}"
            )

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[Sequence[float], int]]) -> "LogitDataset":
        pairs = list(pairs)
        if not pairs:
            raise InvalidInputError("Dataset is empty")
        return cls(np.array([p[0] for p in pairs], dtype=float), np.array([p[1] for p in pairs]))

    @property
    def n_classes(self) -> int:
        return self.logits.shape[1]

    def __len__(self) -> int:
        return len(self.labels)


def _check_logits(logits) -> np.ndarray:
    values = np.asarray(logits, dtype=float)
    if values.ndim == 0 or values.shape[-1] < 2:
        raise InvalidInputError(f"Logits need at least two classes, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("Logits contain non-finite entries")
    return values


def softmax(logits) -> np.ndarray:
    """Numerically stable softmax over the class axis."""
    return special.softmax(_check_logits(logits), axis=-1)


def scale_logits(logits, t: float) -> np.ndarray:
    """Divide logits by the temperature t."""
    if not (np.isfinite(t) and t > 0):
        raise InvalidParameterError(f"Temperature must be positive, got {t}")
    return np.asarray(logits, dtype=float) / t


def normalized_entropy(p) -> np.ndarray:
    """Shannon entropy divided by ln C, with 0 ln 0 := 0. Returns values in [0, 1]."""
    probs = np.asarray(p, dtype=float)
    n_classes = probs.shape[-1]
    if n_classes < 2:
        raise InvalidInputError("Entropy needs at least two classes")
    u = special.entr(probs).sum(axis=-1) / math.log(n_classes)
    return np.clip(u, 0.0, 1.0)


def calibrated_probabilities(logits, t: float) -> Tuple[np.ndarray, np.ndarray]:
    """softmax(l / t) and its normalized entropy."""
    probs = softmax(scale_logits(_check_logits(logits), t))
    return probs, normalized_entropy(probs)


def _check_labels(labels, n_samples: int, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n_samples,):
        raise InvalidInputError(f"Expected {n_samples} labels, got shape {labels.shape}")
    if n_samples and (labels.min() < 0 or labels.max() >= n_classes):
        raise InvalidInputError(f"Labels must lie in [0, {n_classes})")
    return labels.astype(np.int64)


def mean_nll(logits, labels, t: float = 1.0) -> float:
    """Mean negative log-likelihood of softmax(l / t) at the true labels."""
    values = _check_logits(logits)
    labels = _check_labels(labels, len(values), values.shape[-1])
    log_probs = special.log_softmax(values / t, axis=-1)
    return float(-log_probs[np.arange(len(labels)), labels].mean())


def fit_temperature(logits, labels,
                    bounds: Tuple[float, float] = config.TEMPERATURE_BOUNDS,
                    tol: float = config.TEMPERATURE_TOLERANCE) -> float:
    """Fit the temperature minimizing mean NLL by golden-section search.

    Args:
        logits: (N, C) raw logits
        labels: (N,) true class ids
        bounds: search interval for t
        tol: final interval width

    Returns:
        The fitted temperature; never worse in NLL than t = 1 when 1 lies inside bounds.
    """
    values = _check_logits(logits)
    if values.ndim != 2 or len(values) == 0:
        raise InvalidInputError("fit_temperature needs a non-empty (N, C) dataset")
    labels = _check_labels(labels, len(values), values.shape[-1])

    def objective(t: float) -> float:
        return mean_nll(values, labels, t)

    a, b = bounds
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = objective(c), objective(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = objective(d)

    candidates = [(a + b) / 2.0, bounds[0], bounds[1]]
    if bounds[0] <= 1.0 <= bounds[1]:
        candidates.append(1.0)
    scores = [objective(t) for t in candidates]
    best = candidates[int(np.argmin(scores))]
    logger.info(f"Fitted temperature {best:.4f} on {len(labels)} samples (NLL {min(scores):.4f})")
    return float(best)


def _reliability_bins(confidence: np.ndarray, correct: np.ndarray, n_bins: int) -> List[ReliabilityBin]:
    index = np.clip(np.floor(confidence * n_bins).astype(np.int64), 0, n_bins - 1)
    counts = np.bincount(index, minlength=n_bins)
    conf_sums = np.bincount(index, weights=confidence, minlength=n_bins)
    correct_sums = np.bincount(index, weights=correct.astype(float), minlength=n_bins)
    bins = []
    for b in range(n_bins):
        lower, upper = b / n_bins, (b + 1) / n_bins
        if counts[b]:
            bins.append(ReliabilityBin(lower, upper, conf_sums[b] / counts[b], correct_sums[b] / counts[b], int(counts[b])))
        else:
            bins.append(ReliabilityBin(lower, upper, (lower + upper) / 2.0, 0.0, 0))
    return bins


def _calibration_error(bins: List[ReliabilityBin]) -> Tuple[float, float]:
    total = sum(b.count for b in bins)
    gaps = [abs(b.accuracy - b.confidence_mean) for b in bins if b.count]
    ece = sum(b.count / total * abs(b.accuracy - b.confidence_mean) for b in bins if b.count)
    return float(ece), float(max(gaps, default=0.0))


def _prepare(preds, labels, n_bins: int) -> Tuple[np.ndarray, np.ndarray]:
    probs = np.asarray(preds, dtype=float)
    labels = np.asarray(labels)
    if probs.ndim != 2 or len(probs) != len(labels):
        raise InvalidInputError(
            f"Predictions and labels must have equal length, got {probs.shape} and {labels.shape}"
        )
    if len(probs) == 0:
        raise InvalidInputError("Cannot evaluate calibration on an empty dataset")
    if n_bins < 1:
        raise InvalidParameterError(f"n_bins must be >= 1, got {n_bins}")
    correct = probs.argmax(axis=-1) == labels
    return probs, correct


def expected_calibration_error(preds, labels, n_bins: int = config.DEFAULT_ECE_BINS) -> float:
    """ECE with equal-width bins over the max-probability confidence."""
    probs, correct = _prepare(preds, labels, n_bins)
    return _calibration_error(_reliability_bins(probs.max(axis=-1), correct, n_bins))[0]


def uncertainty_ece(preds, labels, n_bins: int = config.DEFAULT_ECE_BINS) -> float:
    """ECE with confidence defined as 1 - normalized entropy."""
    probs, correct = _prepare(preds, labels, n_bins)
    return _calibration_error(_reliability_bins(1.0 - normalized_entropy(probs), correct, n_bins))[0]


def reliability_diagram(preds, labels, n_bins: int = config.DEFAULT_ECE_BINS) -> CalibrationReport:
    """Per-bin (confidence mean, accuracy, count) under both binning modes."""
    probs, correct = _prepare(preds, labels, n_bins)
    bins = _reliability_bins(probs.max(axis=-1), correct, n_bins)
    ubins = _reliability_bins(1.0 - normalized_entropy(probs), correct, n_bins)
    ece, mce = _calibration_error(bins)
    uece, umce = _calibration_error(ubins)
    return CalibrationReport(ece=ece, uece=uece, n_bins=n_bins, bins=bins, uncertainty_bins=ubins, mce=mce, umce=umce)


def format_reliability_table(report: CalibrationReport, title: Optional[str] = None) -> str:
    """Render a report as aligned text, one row per bin."""
    lines = []
    if title:
        lines.append(title)
    lines.append(f"ECE {report.ece:.4f}  uECE {report.uece:.4f}  MCE {report.mce:.4f}  uMCE {report.umce:.4f}")
    lines.append(f"{'bin':>13}  {'conf':>6} {'acc':>6} {'count':>7}  |  {'u-conf':>6} {'acc':>6} {'count':>7}")
    for b, u in zip(report.bins, report.uncertainty_bins):
        lines.append(
            f"[{b.lower:.2f}, {b.upper:.2f})  {b.confidence_mean:6.3f} {b.accuracy:6.3f} {b.count:7d}"
            f"  |  {u.confidence_mean:6.3f} {u.accuracy:6.3f} {u.count:7d}"
        )
    return "\n".join(lines)


def save_logit_file(path: str, dataset: LogitDataset) -> None:
    """Write a dataset in the little-endian SFLG binary format."""
    n, c = dataset.logits.shape
    record = np.dtype([("logits", "<f4", (c,)), ("label", "<u4")])
    body = np.empty(n, dtype=record)
    body["logits"] = dataset.logits
    body["label"] = dataset.labels
    with open(path, "wb") as f:
        f.write(_HEADER.pack(config.LOGIT_FILE_MAGIC, config.LOGIT_FILE_VERSION, n, c))
        f.write(body.tobytes())


def load_logit_file(path: str) -> LogitDataset:
    """Read a SFLG logit dataset file."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise InvalidInputError(f"{path} is too short to be a logit file")
    magic, version, n, c = _HEADER.unpack_from(data)
    if magic != config.LOGIT_FILE_MAGIC or version != config.LOGIT_FILE_VERSION:
        raise InvalidInputError(f"{path} is not a version {config.LOGIT_FILE_VERSION} SFLG file")
    record = np.dtype([("logits", "<f4", (c,)), ("label", "<u4")])
    if len(data) != _HEADER.size + n * record.itemsize:
        raise InvalidInputError(f"{path} holds {len(data) - _HEADER.size} body bytes, expected {n * record.itemsize}")
    body = np.frombuffer(data, dtype=record, count=n, offset=_HEADER.size)
    return LogitDataset(body["logits"].astype(float), body["label"].astype(np.int64))

"""
Episode metrics for the semfuse benchmark: outcome records, detection false positives and
negatives, SPL, the aggregated metrics table and ablation comparisons.
"""
import csv
import json
import logging
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

import config
from errors import InvalidInputError

logger = logging.getLogger("metrics")

_EIGHT = np.ones((3, 3), dtype=bool)

GroupKey = Tuple[str, str, str]


@dataclass
class EpisodeResult:
    """Outcome of one episode. Valid episodes have exactly one of success / found_fp / found_fn."""
    episode_id: str
    scene_id: str
    strategy: str
    strategy_kind: str
    policy: str
    profile: str
    target_class: int
    use_calibration: bool = True
    use_uncertainty_found: bool = True
    valid: bool = True
    success: bool = False
    found_fp: bool = False
    found_fn: bool = False
    det_fp_count: int = 0
    det_fn_count: int = 0
    steps_used: int = 0
    found_step: Optional[int] = None
    path_length_m: float = 0.0
    shortest_length_m: float = 0.0
    stream_digest: str = ""
    config: Optional[Dict[str, Any]] = None

    def __post_init__(self):
        if self.valid and int(self.success) + int(self.found_fp) + int(self.found_fn) != 1:
            raise InvalidInputError(f"Episode {self.episode_id}: outcome flags are not a partition")
        if self.valid and self.success and self.shortest_length_m > self.path_length_m + 1e-6:
            raise InvalidInputError(f"Episode {self.episode_id}: shortest length {self.shortest_length_m:.3f} m exceeds "
                                    f"the successful path {self.path_length_m:.3f} m")

    @property
    def outcome(self) -> str:
        if not self.valid:
            return "invalid"
        return "success" if self.success else "found_fp" if self.found_fp else "found_fn"

    @property
    def group_key(self) -> GroupKey:
        return self.strategy, self.policy, self.profile

    def to_record(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "EpisodeResult":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in record.items() if k in names})


@dataclass
class MetricsRow:
    strategy: str
    strategy_kind: str
    use_calibration: bool
    use_uncertainty_found: bool
    policy: str
    profile: str
    n_episodes: int
    n_invalid: int
    sr: float
    fpr: float
    fnr: float
    mean_fp: float
    mean_fn: float
    spl: float

    @property
    def group_key(self) -> GroupKey:
        return self.strategy, self.policy, self.profile


def count_detection_fp(rendered_union: np.ndarray, gt_bbox_mask: np.ndarray,
                       dilation_cells: int = config.DETECTION_DILATION_CELLS) -> int:
    """Connected components of target renderings outside every ground-truth box.

    The outside cells are dilated with a square kernel of radius dilation_cells before
    8-connected labelling, so nearby fragments count once.
    """
    outside = np.asarray(rendered_union, dtype=bool) & ~np.asarray(gt_bbox_mask, dtype=bool)
    if not outside.any():
        return 0
    if dilation_cells > 0:
        side = 2 * dilation_cells + 1
        outside = ndimage.binary_dilation(outside, structure=np.ones((side, side), dtype=bool))
    _, n = ndimage.label(outside, structure=_EIGHT)
    return int(n)


def count_detection_fn(rendered_mask: np.ndarray, gt_rendered_mask: np.ndarray,
                       bboxes: Sequence[Tuple[int, int, int, int]]) -> int:
    """Boxes where the ground-truth map shows the target but the strategy shows none (one step)."""
    missed = 0
    for x0, y0, x1, y1 in bboxes:
        if gt_rendered_mask[y0:y1 + 1, x0:x1 + 1].any() and not rendered_mask[y0:y1 + 1, x0:x1 + 1].any():
            missed += 1
    return missed


def _valid(results: Iterable[EpisodeResult]) -> List[EpisodeResult]:
    return [r for r in results if r.valid]


def spl(results: Sequence[EpisodeResult]) -> float:
    """(1/N) sum S_i * l_i / max(p_i, l_i) over valid episodes."""
    valid = _valid(results)
    if not valid:
        raise InvalidInputError("SPL needs at least one valid episode")
    total = 0.0
    for r in valid:
        if r.success:
            denom = max(r.path_length_m, r.shortest_length_m)
            total += 1.0 if denom <= 0 else r.shortest_length_m / denom
    return total / len(valid)


def aggregate_metrics(results: Sequence[EpisodeResult]) -> MetricsRow:
    """SR / FPR / FNR as percentages of valid episodes, #FP / #FN as per-episode means, and SPL."""
    if not results:
        raise InvalidInputError("Cannot aggregate an empty result list")
    valid = _valid(results)
    if not valid:
        raise InvalidInputError(f"All {len(results)} episodes are invalid")
    n = len(valid)
    first = valid[0]
    return MetricsRow(
        strategy=first.strategy,
        strategy_kind=first.strategy_kind,
        use_calibration=first.use_calibration,
        use_uncertainty_found=first.use_uncertainty_found,
        policy=first.policy,
        profile=first.profile,
        n_episodes=n,
        n_invalid=len(results) - n,
        sr=100.0 * sum(r.success for r in valid) / n,
        fpr=100.0 * sum(r.found_fp for r in valid) / n,
        fnr=100.0 * sum(r.found_fn for r in valid) / n,
        mean_fp=float(np.mean([r.det_fp_count for r in valid])),
        mean_fn=float(np.mean([r.det_fn_count for r in valid])),
        spl=spl(valid),
    )


def metrics_table(results: Sequence[EpisodeResult]) -> List[MetricsRow]:
    """One row per (strategy, policy, profile), in sorted key order, episodes sorted by id."""
    if not results:
        raise InvalidInputError("Cannot build a metrics table from no results")
    groups: Dict[GroupKey, List[EpisodeResult]] = {}
    for r in sorted(results, key=lambda r: r.episode_id):
        groups.setdefault(r.group_key, []).append(r)
    rows = []
    for key in sorted(groups):
        if not _valid(groups[key]):
            logger.warning(f"Skipping {key}: no valid episodes")
            continue
        rows.append(aggregate_metrics(groups[key]))
    return rows


_CSV_COLUMNS = ["strategy", "policy", "profile", "episodes", "invalid", "SR", "FPR", "FNR", "#FP", "#FN", "SPL"]


def _row_cells(row: MetricsRow) -> List[str]:
    return [row.strategy, row.policy, row.profile, str(row.n_episodes), str(row.n_invalid),
            f"{row.sr:.1f}", f"{row.fpr:.1f}", f"{row.fnr:.1f}", f"{row.mean_fp:.1f}", f"{row.mean_fn:.1f}",
            f"{row.spl:.3f}"]


def write_metrics_csv(rows: Sequence[MetricsRow], path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(_CSV_COLUMNS)
        for row in rows:
            writer.writerow(_row_cells(row))


def _align(header: List[str], body: List[List[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) if i < 3 else h.rjust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    for r in body:
        lines.append("  ".join(c.ljust(w) if i < 3 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
    return "\n".join(lines)


def format_metrics_table(rows: Sequence[MetricsRow]) -> str:
    return _align(_CSV_COLUMNS, [_row_cells(r) for r in rows])


def write_results_jsonl(results: Sequence[EpisodeResult], path: str, append: bool = False) -> None:
    """One JSON record per line, sorted by episode id."""
    with open(path, "a" if append else "w") as f:
        for r in sorted(results, key=lambda r: r.episode_id):
            f.write(json.dumps(r.to_record(), sort_keys=True) + "\n")


def load_results(path: str) -> List[EpisodeResult]:
    results = []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                results.append(EpisodeResult.from_record(json.loads(line)))
            except (json.JSONDecodeError, TypeError) as e:
                raise InvalidInputError(f"{path}:{lineno}: malformed result record: {e}") from e
    return results


@dataclass
class AblationDelta:
    strategy_kind: str
    policy: str
    profile: str
    variant: str
    reference: str
    delta_sr: float
    delta_fpr: float


def ablation_deltas(rows: Sequence[MetricsRow]) -> List[AblationDelta]:
    """dSR and dFPR of every flag variant against the calibrated, uncertainty-gated variant."""
    by_family: Dict[Tuple[str, str, str], List[MetricsRow]] = {}
    for row in rows:
        by_family.setdefault((row.strategy_kind, row.policy, row.profile), []).append(row)
    deltas = []
    for (kind, policy, profile), family in sorted(by_family.items()):
        refs = [r for r in family if r.use_calibration and r.use_uncertainty_found]
        if not refs:
            continue
        ref = refs[0]
        for row in family:
            if row is ref:
                continue
            deltas.append(AblationDelta(kind, policy, profile, row.strategy, ref.strategy,
                                        row.sr - ref.sr, row.fpr - ref.fpr))
    return deltas


def format_ablation(deltas: Sequence[AblationDelta]) -> str:
    header = ["kind", "policy", "profile", "variant", "reference", "dSR", "dFPR"]
    body = [[d.strategy_kind, d.policy, d.profile, d.variant, d.reference, f"{d.delta_sr:+.1f}", f"{d.delta_fpr:+.1f}"]
            for d in deltas]
    return _align(header, body)


def compare_tables(tables: Sequence[Sequence[MetricsRow]], labels: Sequence[str]) -> str:
    """Side-by-side SR per result set with dSR against the first set."""
    if not tables:
        raise InvalidInputError("Nothing to compare")
    keyed = [{row.group_key: row for row in table} for table in tables]
    keys = sorted(set().union(*keyed))
    header = ["strategy", "policy", "profile"] + [f"SR[{label}]" for label in labels]
    header += [f"dSR[{label}]" for label in labels[1:]]
    body = []
    for key in keys:
        srs = [k[key].sr if key in k else None for k in keyed]
        cells = list(key) + ["-" if s is None else f"{s:.1f}" for s in srs]
        for s in srs[1:]:
            cells.append("-" if s is None or srs[0] is None else f"{s - srs[0]:+.1f}")
        body.append(cells)
    return _align(header, body)


def check_partition(rows: Sequence[MetricsRow], tolerance: float = 1e-6) -> List[str]:
    """Row labels whose SR + FPR + FNR differs from 100."""
    return [f"{r.strategy}/{r.policy}/{r.profile}" for r in rows if abs(r.sr + r.fpr + r.fnr - 100.0) > tolerance]

"""
Count-based strategies: Hits/Views ratio test and SkillFusion's decaying existence score.
"""
import math

import numpy as np
from scipy import ndimage

from aggregation.base import AggregationStrategy
from schemas import StrategyKind
from semantic_map import GridMap, ProjectedHits


class HitsViewsStrategy(AggregationStrategy):
    """Track target hits and close views per cell.

    A cell with at least `views` close views is found when hits / views >= theta and
    rejected for the rest of the episode otherwise.
    """

    kind = StrategyKind.HITS_VIEWS

    def _integrate(self, grid: GridMap, hits: ProjectedHits, pose) -> None:
        grid.set_probabilities(hits.cells, hits.probs)
        hit_count = grid.channel("hits", dtype=np.int64)
        view_count = grid.channel("views", dtype=np.int64)
        rejected = grid.channel("rejected", dtype=bool, fill=False)
        iy, ix = hits.iy, hits.ix
        hit_count[iy, ix] += hits.probs.argmax(axis=-1) == self.target_class
        view_count[iy, ix] += hits.distances <= self.params.d_view

        h, v = hit_count[iy, ix], view_count[iy, ix]
        failed = (v >= self.params.views) & (h > 0) & (h < self.params.theta * v)
        rejected[iy[failed], ix[failed]] = True

    def target_mask(self, grid: GridMap) -> np.ndarray:
        rejected = grid.channel("rejected", dtype=bool, fill=False)
        return super().target_mask(grid) & ~rejected

    def found_mask(self, grid: GridMap) -> np.ndarray:
        h = grid.channel("hits", dtype=np.int64)
        v = grid.channel("views", dtype=np.int64)
        accepted = (v >= self.params.views) & (h >= self.params.theta * v)
        return self.target_mask(grid) & accepted


class SkillFusionStrategy(AggregationStrategy):
    """Erode per-frame target detections, then keep a score: +1 on an eroded hit, times alpha otherwise."""

    kind = StrategyKind.SKILL_FUSION

    def kernel_cells(self, resolution: float) -> int:
        return max(1, int(math.ceil(self.params.erosion_m / resolution - 1e-9)))

    def _integrate(self, grid: GridMap, hits: ProjectedHits, pose) -> None:
        grid.set_probabilities(hits.cells, hits.probs)
        score = grid.channel("score")
        iy, ix = hits.iy, hits.ix

        frame_target = np.zeros(grid.shape, dtype=bool)
        frame_target[iy, ix] = hits.probs.argmax(axis=-1) == self.target_class
        side = self.kernel_cells(grid.resolution)
        if side > 1:
            frame_target = ndimage.binary_erosion(frame_target, structure=np.ones((side, side), dtype=bool))

        detected = frame_target[iy, ix]
        score[iy, ix] = np.where(detected, score[iy, ix] + 1.0, score[iy, ix] * self.params.alpha)

    def target_mask(self, grid: GridMap) -> np.ndarray:
        return grid.observed & (grid.channel("score") > self.params.score_threshold)

"""
Overwrite-style strategies: ground truth, Latest and Latest-Filtered.
"""
import numpy as np

import config
from aggregation.base import AggregationStrategy
from schemas import StrategyKind
from semantic_map import GridMap, ProjectedHits


class LatestStrategy(AggregationStrategy):
    """Each cell shows the latest prediction, overwriting previous values."""

    kind = StrategyKind.LATEST

    def _integrate(self, grid: GridMap, hits: ProjectedHits, pose) -> None:
        grid.set_probabilities(hits.cells, hits.probs)


class GroundTruthStrategy(LatestStrategy):
    """Latest fed with the ground truth semantic camera."""

    kind = StrategyKind.GROUND_TRUTH


class LatestFilteredStrategy(AggregationStrategy):
    """Latest class is rendered, but target cells whose map uncertainty is >= rho are shown as occupied.

    p_k is the running mean of calibrated predictions so u_map tracks disagreement between frames.
    """

    kind = StrategyKind.LATEST_FILTERED

    def _integrate(self, grid: GridMap, hits: ProjectedHits, pose) -> None:
        sums = grid.channel("prob_sum", depth=grid.n_classes)
        latest = grid.channel("latest_class", dtype=np.int64, fill=-1)
        iy, ix = hits.iy, hits.ix
        sums[iy, ix] += hits.probs
        latest[iy, ix] = hits.probs.argmax(axis=-1)
        counts = grid.observed_count[iy, ix][:, None]
        grid.set_probabilities(hits.cells, sums[iy, ix] / counts)

    def _suppressed(self, grid: GridMap) -> np.ndarray:
        latest = grid.channel("latest_class", dtype=np.int64, fill=-1)
        return (latest == self.target_class) & (grid.u_map >= self.params.rho)

    def target_mask(self, grid: GridMap) -> np.ndarray:
        latest = grid.channel("latest_class", dtype=np.int64, fill=-1)
        return (latest == self.target_class) & grid.observed & ~self._suppressed(grid)

    def rendered_classes(self, grid: GridMap) -> np.ndarray:
        latest = grid.channel("latest_class", dtype=np.int64, fill=-1).copy()
        latest[self._suppressed(grid)] = config.WALL_CLASS
        return latest

"""
Accumulating strategies: multi-class log-odds, averaging and inverse-uncertainty weighted averaging.
All three are invariant to the order of observations and can gate found decisions on map uncertainty.
"""
import numpy as np
from scipy import special

import config
from aggregation.base import AggregationStrategy, FoundReason
from schemas import StrategyKind
from semantic_map import GridMap, ProjectedHits


class UncertaintyGatedStrategy(AggregationStrategy):
    """Found requires u_map < xi when use_uncertainty_found is set, else distance only."""

    def found_mask(self, grid: GridMap) -> np.ndarray:
        mask = self.target_mask(grid)
        if self.config.use_uncertainty_found:
            mask &= grid.u_map < self.params.xi
        return mask

    @property
    def found_reason(self) -> FoundReason:
        if self.config.use_uncertainty_found:
            return FoundReason.UNCERTAINTY_GATED
        return FoundReason.DISTANCE_ONLY


class LogOddsStrategy(UncertaintyGatedStrategy):
    """L += ln p per cell with a uniform prior; the posterior is softmax(L)."""

    kind = StrategyKind.LOG_ODDS

    def _integrate(self, grid: GridMap, hits: ProjectedHits, pose) -> None:
        log_odds = grid.channel("log_odds", depth=grid.n_classes)
        iy, ix = hits.iy, hits.ix
        log_odds[iy, ix] += np.log(np.maximum(hits.probs, config.PROB_FLOOR))
        grid.set_probabilities(hits.cells, special.softmax(log_odds[iy, ix], axis=-1))


class AveragingStrategy(UncertaintyGatedStrategy):
    """p_k = S / W with S += w * p_pred and W += w; w = 1 here."""

    kind = StrategyKind.AVERAGING

    def weights(self, u: np.ndarray) -> np.ndarray:
        return np.ones_like(u)

    def _integrate(self, grid: GridMap, hits: ProjectedHits, pose) -> None:
        sums = grid.channel("weighted_sum", depth=grid.n_classes)
        total = grid.channel("weight_total")
        iy, ix = hits.iy, hits.ix
        w = self.weights(hits.u)
        sums[iy, ix] += w[:, None] * hits.probs
        total[iy, ix] += w
        grid.set_probabilities(hits.cells, sums[iy, ix] / total[iy, ix][:, None])


class WeightedAveragingStrategy(AveragingStrategy):
    """Averaging with w = 1 / clamp(u, u_clamp, 1)."""

    kind = StrategyKind.WEIGHTED_AVERAGING

    def weights(self, u: np.ndarray) -> np.ndarray:
        return 1.0 / np.clip(u, self.params.u_clamp, 1.0)

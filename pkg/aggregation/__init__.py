"""
Temporal aggregation strategies behind one interface.
"""
from typing import Optional

import config
from aggregation.base import AggregationStrategy, FoundDecision, FoundReason, nearest_cell_within
from aggregation.bayesian import AveragingStrategy, LogOddsStrategy, WeightedAveragingStrategy
from aggregation.counting import HitsViewsStrategy, SkillFusionStrategy
from aggregation.latest import GroundTruthStrategy, LatestFilteredStrategy, LatestStrategy
from aggregation.stubborn import NBClassifier, StubbornStrategy, nb_found, nb_train
from errors import ConfigError
from schemas import StrategyConfig, StrategyKind

STRATEGY_CLASSES = {
    StrategyKind.GROUND_TRUTH: GroundTruthStrategy,
    StrategyKind.LATEST: LatestStrategy,
    StrategyKind.HITS_VIEWS: HitsViewsStrategy,
    StrategyKind.SKILL_FUSION: SkillFusionStrategy,
    StrategyKind.STUBBORN: StubbornStrategy,
    StrategyKind.LATEST_FILTERED: LatestFilteredStrategy,
    StrategyKind.LOG_ODDS: LogOddsStrategy,
    StrategyKind.AVERAGING: AveragingStrategy,
    StrategyKind.WEIGHTED_AVERAGING: WeightedAveragingStrategy,
}


def build_strategy(strategy_config: StrategyConfig, target_class: int,
                   success_radius_m: float = config.SUCCESS_RADIUS_M,
                   classifier: Optional[NBClassifier] = None) -> AggregationStrategy:
    """Instantiate the strategy for one episode."""
    cls = STRATEGY_CLASSES.get(strategy_config.kind)
    if cls is None:
        raise ConfigError(f"Unknown strategy kind {strategy_config.kind}")
    if cls is StubbornStrategy:
        return cls(strategy_config, target_class, success_radius_m, classifier=classifier)
    return cls(strategy_config, target_class, success_radius_m)


__all__ = [
    "AggregationStrategy", "FoundDecision", "FoundReason", "NBClassifier", "STRATEGY_CLASSES",
    "build_strategy", "nb_found", "nb_train", "nearest_cell_within",
]

"""
Seeded random search over strategy hyperparameters.
Every trial is evaluated on the same fixed set of training-scene episodes under the
shortest-path policy; the best trial wins with ties going to the lower trial index.
"""
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

import config
from episode_runner import EpisodeRunner, make_episodes, training_scenes
from errors import ConfigError, InvalidInputError, InvalidParameterError
from schemas import PolicyKind, RunConfig, StrategyConfig

logger = logging.getLogger("hyperopt")


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str
    low: float
    high: float
    scale: str = "linear"

    def __post_init__(self):
        if self.kind not in ("real", "int"):
            raise InvalidParameterError(f"{self.name}: kind must be real or int, got {self.kind}")
        if self.scale not in ("linear", "log"):
            raise InvalidParameterError(f"{self.name}: scale must be linear or log, got {self.scale}")
        if not self.low < self.high and not (self.kind == "int" and self.low == self.high):
            raise InvalidParameterError(f"{self.name}: bounds [{self.low}, {self.high}] are not ordered")
        if self.scale == "log" and self.low <= 0:
            raise InvalidParameterError(f"{self.name}: log scale needs a positive lower bound")

    def sample(self, rng: np.random.Generator):
        if self.scale == "log":
            value = math.exp(rng.uniform(math.log(self.low), math.log(self.high)))
        else:
            value = rng.uniform(self.low, self.high)
        if self.kind == "int":
            return int(min(self.high, max(self.low, round(value))))
        return float(value)


ParamSpace = List[ParamSpec]


def param_space_for(kind: str) -> ParamSpace:
    """Default search space of a strategy kind."""
    space = config.DEFAULT_SEARCH_SPACES.get(kind)
    if not space:
        raise ConfigError(f"Strategy {kind} has no tunable parameters; searchable kinds: "
                          f"{', '.join(sorted(config.DEFAULT_SEARCH_SPACES))}")
    return [ParamSpec(name, *spec) for name, spec in space.items()]


@dataclass
class TrialRecord:
    index: int
    params: Dict[str, Any]
    objective: float
    episode_seeds: List[int] = field(default_factory=list)


@dataclass
class SearchResult:
    best_index: int
    best_params: Dict[str, Any]
    trials: List[TrialRecord]

    @property
    def best_objective(self) -> float:
        return self.trials[self.best_index].objective


def random_search(space: ParamSpace, objective: Callable[[Dict[str, Any]], float],
                  budget: int = config.HYPEROPT_BUDGET, seed: int = 0,
                  episode_seeds: Sequence[int] = ()) -> SearchResult:
    """Sample budget configurations and return the one with the highest objective.

    Args:
        space: Parameters to sample (uniform, or log-uniform where marked)
        objective: Deterministic evaluator returning a value in [0, 1]
        budget: Number of trials
        seed: Sampling seed
        episode_seeds: Seeds of the shared evaluation episodes, recorded per trial

    Returns:
        The best trial's parameters and the full trial log
    """
    if budget < 1:
        raise InvalidParameterError(f"budget must be >= 1, got {budget}")
    if not space:
        raise InvalidInputError("Search space is empty")
    rng = np.random.default_rng(seed)
    samples = [{spec.name: spec.sample(rng) for spec in space} for _ in range(budget)]

    trials = []
    for index, params in enumerate(samples):
        value = float(objective(params))
        if not 0.0 <= value <= 1.0:
            raise InvalidInputError(f"Objective returned {value} for {params}; expected a value in [0, 1]")
        trials.append(TrialRecord(index, params, value, list(episode_seeds)))
        logger.info(f"Trial {index}: {params} -> {value:.4f}")

    best = int(np.argmax([t.objective for t in trials]))
    return SearchResult(best, dict(trials[best].params), trials)


class SuccessRateObjective:
    """Mean success over a fixed set of shortest-path episodes on training scenes."""

    def __init__(self, runner: EpisodeRunner, run_config: RunConfig, strategy: StrategyConfig, scenes,
                 temperatures: Dict[str, float], episodes: int = config.HYPEROPT_EPISODES, classifiers: Optional[Dict] = None):
        self.runner = runner
        self.strategy = strategy
        self.scenes = {s.scene_id: s for s in scenes}
        self.classifiers = classifiers
        self._make = lambda s: make_episodes(run_config, scenes, temperatures, episodes=episodes, strategies=[s],
                                             policies=[PolicyKind.SHORTEST_PATH], prefix="tune")
        self.episode_seeds = sorted({cfg.seed for cfg in self._make(strategy)})

    def __call__(self, params: Dict[str, Any]) -> float:
        configs = self._make(self.strategy.with_params(**params))
        outputs = self.runner.run_batch(configs, self.scenes, self.classifiers)
        valid = [r for r, _ in outputs if r.valid]
        if not valid:
            return 0.0
        return sum(r.success for r in valid) / len(valid)


def best_strategy_config(strategy: StrategyConfig, result: SearchResult) -> StrategyConfig:
    return strategy.with_params(**result.best_params)


@dataclass
class TuningOutcome:
    strategy: StrategyConfig
    result: SearchResult
    temperatures: Dict[str, float]


def tune_strategy(runner: EpisodeRunner, run_config: RunConfig, strategy: StrategyConfig,
                  budget: int = config.HYPEROPT_BUDGET, episodes: int = config.HYPEROPT_EPISODES,
                  space: Optional[ParamSpace] = None) -> TuningOutcome:
    """Fit temperatures, then search the strategy's parameters on training scenes.

    Only the strategy's own parameters change; its calibration and found-gate flags are kept.
    """
    space = space if space is not None else param_space_for(strategy.kind.value)
    temperatures = runner.fit_temperatures(run_config)
    scene_count = max(1, min(episodes, run_config.scenes.count))
    scenes = training_scenes(run_config.scenes.spec, scene_count, run_config.run_seed)
    objective = SuccessRateObjective(runner, run_config, strategy, scenes, temperatures, episodes=episodes)
    result = random_search(space, objective, budget, run_config.run_seed, objective.episode_seeds)
    best = best_strategy_config(strategy, result)
    logger.info(f"Tuned {strategy.name}: {result.best_params} -> SR {result.best_objective:.3f}")
    return TuningOutcome(best, result, temperatures)


def write_best_params(path: str, strategy: StrategyConfig) -> None:
    """Best parameters in the StrategyConfig schema."""
    data = strategy.model_dump(mode="json", exclude_none=True)
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)


def write_trial_log(path: str, result: SearchResult) -> None:
    names = sorted(result.trials[0].params) if result.trials else []
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["trial", "objective"] + names + ["best", "episode_seeds"])
        for trial in result.trials:
            writer.writerow([trial.index, repr(trial.objective)] + [repr(trial.params[n]) for n in names]
                            + [int(trial.index == result.best_index), " ".join(str(s) for s in trial.episode_seeds)])


def format_trial_log(result: SearchResult) -> str:
    names = sorted(result.trials[0].params) if result.trials else []
    lines = ["trial  objective  " + "  ".join(f"{n:>15}" for n in names)]
    for trial in result.trials:
        marker = " *" if trial.index == result.best_index else ""
        values = "  ".join(f"{trial.params[n]:>15.4f}" if isinstance(trial.params[n], float) else f"{trial.params[n]:>15d}"
                           for n in names)
        lines.append(f"{trial.index:>5}  {trial.objective:>9.3f}  {values}{marker}")
    return "\n".join(lines)

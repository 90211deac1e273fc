import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import config
from episode_runner import EpisodeRunner, training_scenes
from errors import ConfigError, InvalidInputError, InvalidParameterError
from hyperopt import (ParamSpec, SuccessRateObjective, best_strategy_config, format_trial_log, param_space_for,
                      random_search, tune_strategy, write_best_params, write_trial_log)
from schemas import PerceptionConfig, RunConfig, SceneSetConfig, SceneSpec, StrategyConfig, StrategyKind, \
    parse_strategy_config

XI = [ParamSpec("xi", "real", 0.05, 0.95)]


def peaked(params):
    return 1.0 - abs(params["xi"] - 0.4)


def test_param_spaces():
    names = [p.name for p in param_space_for("HitsViews")]
    assert names == ["theta", "views", "d_view"]
    for kind in ("Stubborn", "Latest", "GroundTruth"):
        with pytest.raises(ConfigError):
            param_space_for(kind)


def test_param_spec_validation():
    with pytest.raises(InvalidParameterError):
        ParamSpec("x", "real", 1.0, 0.5)
    with pytest.raises(InvalidParameterError):
        ParamSpec("x", "real", 0.0, 1.0, "log")
    with pytest.raises(InvalidParameterError):
        ParamSpec("x", "categorical", 0.0, 1.0)


@settings(max_examples=30)
@given(st.integers(0, 2 ** 31 - 1))
def test_samples_stay_in_bounds(seed):
    rng = np.random.default_rng(seed)
    for spec in param_space_for("HitsViews") + param_space_for("LogOdds"):
        value = spec.sample(rng)
        assert spec.low <= value <= spec.high
        assert isinstance(value, int if spec.kind == "int" else float)


def test_budget_one_returns_the_only_trial():
    result = random_search(XI, peaked, budget=1, seed=3)
    assert result.best_index == 0
    assert len(result.trials) == 1
    assert result.best_objective == peaked(result.best_params)


def test_search_is_deterministic_and_picks_the_maximum():
    a = random_search(XI, peaked, budget=20, seed=1, episode_seeds=[5, 6])
    b = random_search(XI, peaked, budget=20, seed=1, episode_seeds=[5, 6])
    assert a.best_params == b.best_params
    assert [t.params for t in a.trials] == [t.params for t in b.trials]
    assert a.best_objective == max(t.objective for t in a.trials)
    assert abs(a.best_params["xi"] - 0.4) < 0.1
    assert all(t.episode_seeds == [5, 6] for t in a.trials)


def test_ties_go_to_the_first_trial():
    result = random_search(XI, lambda params: 0.5, budget=5, seed=2)
    assert result.best_index == 0


def test_search_errors():
    with pytest.raises(InvalidInputError):
        random_search([], peaked, budget=3)
    with pytest.raises(InvalidParameterError):
        random_search(XI, peaked, budget=0)
    with pytest.raises(InvalidInputError):
        random_search(XI, lambda params: 1.5, budget=2)


def test_trial_outputs(tmp_path):
    result = random_search(param_space_for("HitsViews"), lambda p: p["theta"] / 2, budget=4, seed=0)
    path = tmp_path / "trials.csv"
    write_trial_log(str(path), result)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["trial", "objective", "d_view", "theta", "views", "best", "episode_seeds"]
    assert len(rows) == 5
    assert sum(int(r[5]) for r in rows[1:]) == 1
    assert format_trial_log(result).count("*") == 1

    best = best_strategy_config(StrategyConfig(kind=StrategyKind.HITS_VIEWS), result)
    out = tmp_path / "best.json"
    write_best_params(str(out), best)
    loaded = parse_strategy_config(json.load(open(out)))
    assert loaded == best


def test_success_rate_objective(tmp_path):
    run_config = RunConfig(schema_version=config.SCHEMA_VERSION, episodes=2, seed=4, max_steps=40,
                           strategies=[StrategyConfig(kind=StrategyKind.AVERAGING)],
                           perception=[PerceptionConfig(temperature=3.0)],
                           scenes=SceneSetConfig(count=1, spec=SceneSpec(width=12, height=12)))
    scenes = training_scenes(run_config.scenes.spec, 1, run_config.run_seed)
    objective = SuccessRateObjective(EpisodeRunner(str(tmp_path / "logs"), workers=1), run_config,
                                     run_config.strategies[0], scenes, {"default": 3.0}, episodes=2)
    assert len(objective.episode_seeds) == 2
    value = objective({"xi": 0.5})
    assert 0.0 <= value <= 1.0
    assert objective({"xi": 0.5}) == value


def test_tune_strategy_keeps_flags_and_returns_best_trial(tmp_path):
    strategy = StrategyConfig(kind=StrategyKind.AVERAGING, use_calibration=False, label="avg")
    run_config = RunConfig(schema_version=config.SCHEMA_VERSION, episodes=2, seed=4, max_steps=40,
                           strategies=[strategy], perception=[PerceptionConfig(temperature=2.0)],
                           scenes=SceneSetConfig(count=1, spec=SceneSpec(width=12, height=12)))
    outcome = tune_strategy(EpisodeRunner(str(tmp_path / "logs"), workers=1), run_config, strategy,
                            budget=3, episodes=2)
    assert outcome.temperatures == {"default": 2.0}
    assert len(outcome.result.trials) == 3
    assert outcome.strategy.params.xi == outcome.result.best_params["xi"]
    assert outcome.strategy.label == "avg" and not outcome.strategy.use_calibration

import json

import numpy as np
import pytest

import config
from errors import ConfigError
from schemas import (NoiseModel, PerceptionConfig, StrategyConfig, StrategyKind, load_run_config, parse_run_config,
                     parse_strategy_config)


def minimal(**kw):
    data = {"schema_version": config.SCHEMA_VERSION, "strategies": [{"kind": "WeightedAveraging"}]}
    data.update(kw)
    return data


def test_minimal_run_config_defaults():
    rc = parse_run_config(minimal(seed=3))
    assert rc.run_seed == 3
    assert rc.policies[0].value == "ShortestPath"
    assert rc.perception[0].profile == "default"
    assert rc.strategies[0].params.xi == config.FOUND_UNCERTAINTY_XI
    assert rc.strategies[0].params.u_clamp == config.UNCERTAINTY_CLAMP


@pytest.mark.parametrize("bad", [
    {"schema_version": 99},
    {"strategies": []},
    {"strategies": [{"kind": "Magic"}]},
    {"strategies": [{"kind": "LogOdds", "params": {"xi": 1.5}}]},
    {"strategies": [{"kind": "HitsViews", "params": {"views": 0}}]},
    {"episodes": 0},
    {"target_classes": [1]},
    {"perception": [{"profile": "unknown"}]},
    {"perception": [{"temperature": 50.0}]},
    {"unexpected": True},
])
def test_invalid_run_configs(bad):
    with pytest.raises(ConfigError):
        parse_run_config(minimal(**bad))


def test_unknown_kind_lists_valid_kinds():
    with pytest.raises(ConfigError, match="WeightedAveraging"):
        parse_strategy_config({"kind": "Magic"})


def test_missing_referenced_files(tmp_path):
    with pytest.raises(ConfigError):
        parse_run_config(minimal(scenes={"dir": str(tmp_path / "none")}))
    with pytest.raises(ConfigError):
        parse_run_config(minimal(perception=[{"logit_file": str(tmp_path / "none.sflg")}]))


def test_load_run_config_with_overrides(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(minimal(episodes=5)))
    rc = load_run_config(str(path), {"episodes": 7, "seed": None})
    assert rc.episodes == 7 and rc.seed is None
    path.write_text("{")
    with pytest.raises(ConfigError):
        load_run_config(str(path))
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / "missing.json"))


def test_strategy_names():
    assert StrategyConfig(kind=StrategyKind.LATEST, use_calibration=False).name == "Latest"
    assert StrategyConfig(kind=StrategyKind.LOG_ODDS).name == "LogOdds[cal,unc]"
    assert StrategyConfig(kind=StrategyKind.HITS_VIEWS).name == "HitsViews[cal]"
    assert StrategyConfig(kind=StrategyKind.AVERAGING, label="mine").name == "mine"


def test_with_params_revalidates():
    cfg = StrategyConfig(kind=StrategyKind.SKILL_FUSION).with_params(alpha=0.5)
    assert cfg.params.alpha == 0.5 and cfg.params.erosion_m == 0.04
    with pytest.raises(ValueError):
        cfg.with_params(alpha=1.0)


def test_noise_model():
    noise = NoiseModel()
    assert noise.error_probability(0.0) == pytest.approx(0.1)
    assert noise.error_probability(5.0) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        NoiseModel(base_error=0.8, distance_error_slope=0.5)
    with pytest.raises(ValueError):
        NoiseModel(overconfidence_factor=0.5)
    with pytest.raises(ConfigError):
        NoiseModel.from_profile("nope")


def test_confusion_matrices():
    m = NoiseModel().confusion_matrix(4)
    assert np.allclose(m.sum(axis=1), 1.0)
    assert np.all(np.diag(m) == 0.0)

    s = NoiseModel(structured_confusion=0.8).confusion_matrix(6)
    assert np.allclose(s.sum(axis=1), 1.0)
    assert s[2].argmax() == 3 and s[5].argmax() == 4
    assert s[2, 2] == 0.0


def test_user_confusion_drops_diagonal_mass():
    rows = [[0.5, 0.0, 0.5], [0.5, 0.0, 0.5], [0.25, 0.75, 0.0]]
    m = NoiseModel(confusion=rows).confusion_matrix(3)
    assert m[0] == pytest.approx([0.0, 0.0, 1.0])
    assert m[2] == pytest.approx([0.25, 0.75, 0.0])
    with pytest.raises(ValueError, match="off the diagonal"):
        NoiseModel(confusion=[[1.0, 0.0, 0.0], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]])
    with pytest.raises(ValueError):
        NoiseModel(confidence_concentration=0.0)
    assert NoiseModel(confidence_concentration=None).confidence_concentration is None


def test_profiles_resolve():
    for name in config.PERCEPTION_PROFILES:
        assert PerceptionConfig(profile=name).resolve_noise().overconfidence_factor >= 1.0

"""Benchmark-scale reproductions; run with `pytest -m slow`."""
from collections import defaultdict

import pytest
from scipy import stats

import config
from episode_runner import EpisodeRunner, load_run_scenes, make_episodes
from hyperopt import tune_strategy
from metrics import metrics_table
from schemas import PerceptionConfig, PolicyKind, RunConfig, SceneSetConfig, StrategyConfig, StrategyKind

pytestmark = pytest.mark.slow

LATEST = StrategyConfig(kind=StrategyKind.LATEST, label="Latest")
AVG_DISTANCE_ONLY = StrategyConfig(kind=StrategyKind.AVERAGING, use_uncertainty_found=False, label="AvgDist")
AVG_GATED = StrategyConfig(kind=StrategyKind.AVERAGING, label="AvgGate")
AVG_UNCALIBRATED = StrategyConfig(kind=StrategyKind.AVERAGING, use_calibration=False, label="AvgUncalGate")
WEIGHTED = StrategyConfig(kind=StrategyKind.WEIGHTED_AVERAGING, label="WA")


def bench_config(tmp_path, seed, strategies, episodes=100, policy=PolicyKind.SHORTEST_PATH):
    return RunConfig(schema_version=config.SCHEMA_VERSION, seed=seed, episodes=episodes,
                     strategies=strategies, policies=[policy], scenes=SceneSetConfig(count=20),
                     perception=[PerceptionConfig(temperature=3.0)], max_steps=400,
                     output_dir=str(tmp_path / f"run{seed}"))


def run_results(tmp_path, seed, strategies, episodes=100, policy=PolicyKind.SHORTEST_PATH):
    run_config = bench_config(tmp_path, seed, strategies, episodes, policy)
    scenes = load_run_scenes(run_config, str(tmp_path / "logs"))
    configs = make_episodes(run_config, scenes, {"default": 3.0})
    runner = EpisodeRunner(logs_dir=str(tmp_path / "logs"))
    return [r for r, _ in runner.run_batch(configs, {s.scene_id: s for s in scenes})]


def benchmark(tmp_path, seed, strategies, episodes=100, policy=PolicyKind.SHORTEST_PATH):
    return {row.strategy: row for row in metrics_table(run_results(tmp_path, seed, strategies, episodes, policy))}


def paired_outcomes(results, first, second):
    """(first, second) result pairs of the same base episode, invalid episodes dropped."""
    by_episode = defaultdict(dict)
    for r in results:
        by_episode[r.episode_id.split("-", 1)[0]][r.strategy] = r
    return [(pair[first], pair[second]) for pair in by_episode.values()
            if pair[first].valid and pair[second].valid]


def sign_test(pairs, better):
    """One-sided sign test over discordant pairs; better(a, b) says a beat b."""
    wins = sum(better(a, b) for a, b in pairs)
    losses = sum(better(b, a) for a, b in pairs)
    assert wins + losses > 0
    return wins, losses, stats.binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue


@pytest.fixture(scope="module")
def tuned(tmp_path_factory):
    """Averaging and WeightedAveraging with xi searched on training scenes."""
    root = tmp_path_factory.mktemp("tuning")
    run_config = bench_config(root, 0, [AVG_GATED, WEIGHTED])
    runner = EpisodeRunner(logs_dir=str(root / "logs"))
    return {s.label: tune_strategy(runner, run_config, s, budget=8, episodes=30).strategy
            for s in (AVG_GATED, WEIGHTED)}


def ordering_holds(rows):
    latest = rows["Latest"].fpr
    return (rows["WA"].sr >= rows["AvgGate"].sr >= rows["AvgDist"].sr
            and all(row.fpr <= latest for row in rows.values())
            and rows["WA"].fpr < 0.5 * latest)


def test_ground_truth_ceiling(tmp_path):
    rows = benchmark(tmp_path, 1, [StrategyConfig(kind=StrategyKind.GROUND_TRUTH, label="GT")])
    row = rows["GT"]
    assert row.n_episodes >= 90
    assert row.sr == 100.0
    assert row.mean_fp == 0.0


def test_tuned_thresholds_stay_inside_the_search_space(tuned):
    for strategy in tuned.values():
        assert 0.05 <= strategy.params.xi <= 0.95
        assert strategy.use_calibration and strategy.use_uncertainty_found


def test_latest_has_the_highest_false_found_rate(tmp_path):
    holds = 0
    for seed in (1, 2, 3):
        rows = benchmark(tmp_path, seed, [LATEST, AVG_GATED, WEIGHTED], episodes=60)
        latest = rows["Latest"].fpr
        if all(row.fpr <= latest for row in rows.values()) and rows["WA"].fpr < 0.5 * latest:
            holds += 1
    assert holds >= 2


def test_strategy_ordering_under_shortest_path(tmp_path, tuned):
    strategies = [LATEST, AVG_DISTANCE_ONLY, tuned["AvgGate"], tuned["WA"]]
    holds = sum(ordering_holds(benchmark(tmp_path, seed, strategies)) for seed in (1, 2, 3))
    assert holds >= 2


def test_strategy_ordering_under_frontier_policy(tmp_path, tuned):
    strategies = [LATEST, AVG_DISTANCE_ONLY, tuned["AvgGate"], tuned["WA"]]
    holds = sum(ordering_holds(benchmark(tmp_path, seed, strategies, policy=PolicyKind.FRONTIER))
                for seed in (1, 2, 3))
    assert holds >= 2


def test_uncertainty_gate_reduces_false_founds(tmp_path):
    results = run_results(tmp_path, 5, [AVG_DISTANCE_ONLY, AVG_GATED])
    pairs = paired_outcomes(results, "AvgGate", "AvgDist")
    assert len(pairs) >= 90
    wins, losses, p = sign_test(pairs, lambda a, b: not a.found_fp and b.found_fp)
    assert wins > losses
    assert p < 0.05


def test_calibration_with_gate_raises_success(tmp_path):
    results = run_results(tmp_path, 5, [AVG_UNCALIBRATED, AVG_GATED])
    pairs = paired_outcomes(results, "AvgGate", "AvgUncalGate")
    assert len(pairs) >= 90
    wins, losses, p = sign_test(pairs, lambda a, b: a.success and not b.success)
    assert wins > losses
    assert p < 0.05

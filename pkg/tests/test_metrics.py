import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from errors import InvalidInputError
from metrics import (EpisodeResult, ablation_deltas, aggregate_metrics, check_partition, compare_tables,
                     count_detection_fn, count_detection_fp, format_ablation, format_metrics_table, load_results,
                     metrics_table, spl, write_metrics_csv, write_results_jsonl)

_OUTCOMES = {"success": dict(success=True), "found_fp": dict(found_fp=True), "found_fn": dict(found_fn=True)}


def result(i, outcome="success", strategy="WeightedAveraging", kind="WeightedAveraging", policy="ShortestPath",
           profile="default", path=2.0, shortest=1.0, fp=0, fn=0, **kw):
    flags = _OUTCOMES.get(outcome, {})
    return EpisodeResult(episode_id=f"ep{i:05d}", scene_id="s", strategy=strategy, strategy_kind=kind,
                         policy=policy, profile=profile, target_class=2, valid=outcome != "invalid",
                         det_fp_count=fp, det_fn_count=fn, path_length_m=path, shortest_length_m=shortest,
                         **flags, **kw)


def test_outcome_flags_must_partition():
    with pytest.raises(InvalidInputError):
        EpisodeResult("e", "s", "Latest", "Latest", "ShortestPath", "default", 2)
    with pytest.raises(InvalidInputError):
        EpisodeResult("e", "s", "Latest", "Latest", "ShortestPath", "default", 2, success=True, found_fp=True)
    invalid = EpisodeResult("e", "s", "Latest", "Latest", "ShortestPath", "default", 2, valid=False)
    assert invalid.outcome == "invalid"


def test_success_shorter_than_shortest_length_is_rejected():
    with pytest.raises(InvalidInputError, match="exceeds"):
        result(0, path=2.25, shortest=3.0)
    assert result(1, "found_fp", path=0.5, shortest=3.0).found_fp
    assert result(2, path=3.0, shortest=3.0).success


def test_detection_fp_counts_components_outside_boxes():
    rendered = np.zeros((12, 12), dtype=bool)
    bbox = np.zeros_like(rendered)
    bbox[1:3, 1:3] = True
    rendered[1, 1] = True
    assert count_detection_fp(rendered, bbox) == 0

    rendered[8, 8] = True
    rendered[8, 10] = True
    assert count_detection_fp(rendered, bbox) == 1
    assert count_detection_fp(rendered, bbox, dilation_cells=0) == 2

    rendered[1, 9] = True
    assert count_detection_fp(rendered, bbox) == 2


def test_detection_fn_per_box():
    gt = np.zeros((6, 6), dtype=bool)
    rendered = np.zeros_like(gt)
    gt[1, 1] = gt[4, 4] = True
    rendered[4, 4] = True
    boxes = [(0, 0, 2, 2), (3, 3, 5, 5), (0, 3, 1, 5)]
    assert count_detection_fn(rendered, gt, boxes) == 1
    assert count_detection_fn(gt, gt, boxes) == 0


def test_spl():
    results = [result(0, path=2.0, shortest=1.0), result(1, "found_fp"), result(2, path=1.0, shortest=1.0),
               result(3, "invalid")]
    assert spl(results) == pytest.approx((0.5 + 1.0) / 3)
    with pytest.raises(InvalidInputError):
        spl([result(0, "invalid")])


@given(st.lists(st.tuples(st.sampled_from(["success", "found_fp", "found_fn", "invalid"]),
                          st.floats(0.0, 20.0), st.floats(0.0, 20.0)), min_size=1, max_size=30))
def test_aggregates_partition_and_bound_spl(episodes):
    # a successful path is never shorter than the shortest walk into the success region
    results = [result(i, o, path=max(p, s) if o == "success" else p, shortest=s) for i, (o, p, s) in enumerate(episodes)]
    if all(o == "invalid" for o, _, _ in episodes):
        with pytest.raises(InvalidInputError):
            aggregate_metrics(results)
        return
    row = aggregate_metrics(results)
    assert row.sr + row.fpr + row.fnr == pytest.approx(100.0)
    assert 0.0 <= row.spl <= row.sr / 100.0 + 1e-12
    assert row.n_invalid == sum(o == "invalid" for o, _, _ in episodes)
    assert check_partition([row]) == []


def test_aggregate_metrics_values():
    results = [result(0, fp=2, fn=1), result(1, "found_fp", fp=4), result(2, "found_fn"), result(3, "success")]
    row = aggregate_metrics(results)
    assert (row.sr, row.fpr, row.fnr) == (50.0, 25.0, 25.0)
    assert row.mean_fp == 1.5 and row.mean_fn == 0.25
    assert row.n_episodes == 4 and row.n_invalid == 0


def test_metrics_table_groups_and_sorts():
    results = [result(0, strategy="Latest", kind="Latest"), result(1, "found_fp"),
               result(2, strategy="Latest", kind="Latest", profile="noisy"), result(3, "found_fn"),
               result(4, "invalid", strategy="LogOdds", kind="LogOdds")]
    rows = metrics_table(results)
    assert [r.group_key for r in rows] == [("Latest", "ShortestPath", "default"), ("Latest", "ShortestPath", "noisy"),
                                           ("WeightedAveraging", "ShortestPath", "default")]
    assert rows[2].fpr == 50.0 and rows[2].fnr == 50.0
    with pytest.raises(InvalidInputError):
        metrics_table([])


def test_metrics_csv_and_text(tmp_path):
    rows = metrics_table([result(0), result(1, "found_fp", fp=3)])
    path = tmp_path / "metrics.csv"
    write_metrics_csv(rows, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "strategy,policy,profile,episodes,invalid,SR,FPR,FNR,#FP,#FN,SPL"
    assert lines[1] == "WeightedAveraging,ShortestPath,default,2,0,50.0,50.0,0.0,1.5,0.0,0.250"
    text = format_metrics_table(rows)
    assert text.splitlines()[0].startswith("strategy")
    assert "50.0" in text


def test_results_jsonl_round_trip(tmp_path):
    results = [result(3, "found_fn", config={"kind": "LogOdds"}), result(1), result(2, "invalid")]
    path = str(tmp_path / "results.jsonl")
    write_results_jsonl(results, path)
    loaded = load_results(path)
    assert [r.episode_id for r in loaded] == ["ep00001", "ep00002", "ep00003"]
    assert loaded[2] == results[0]


def test_load_results_rejects_garbage(tmp_path):
    path = tmp_path / "results.jsonl"
    path.write_text('{"episode_id": "x"}\nnot json\n')
    with pytest.raises(InvalidInputError):
        load_results(str(path))


def test_ablation_deltas():
    def variant(i, name, cal, unc, outcome):
        return result(i, outcome, strategy=name, use_calibration=cal, use_uncertainty_found=unc)

    rows = metrics_table([
        variant(0, "WeightedAveraging", True, True, "success"),
        variant(1, "WeightedAveraging", True, True, "success"),
        variant(2, "WeightedAveraging-nocal", False, True, "success"),
        variant(3, "WeightedAveraging-nocal", False, True, "found_fp"),
        variant(4, "WeightedAveraging-nounc", True, False, "found_fp"),
        variant(5, "WeightedAveraging-nounc", True, False, "found_fp"),
    ])
    deltas = {d.variant: d for d in ablation_deltas(rows)}
    assert set(deltas) == {"WeightedAveraging-nocal", "WeightedAveraging-nounc"}
    assert deltas["WeightedAveraging-nocal"].delta_sr == -50.0
    assert deltas["WeightedAveraging-nounc"].delta_fpr == 100.0
    assert "+100.0" in format_ablation(list(deltas.values()))


def test_compare_tables():
    first = metrics_table([result(0), result(1, "found_fp")])
    second = metrics_table([result(0), result(1), result(2, strategy="Latest", kind="Latest")])
    text = compare_tables([first, second], ["a", "b"])
    lines = text.splitlines()
    assert "SR[a]" in lines[0] and "dSR[b]" in lines[0]
    assert any(line.startswith("Latest") and "-" in line for line in lines[1:])
    assert any("+50.0" in line for line in lines[1:])
    with pytest.raises(InvalidInputError):
        compare_tables([], [])

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from calibration import (LogitDataset, calibrated_probabilities, expected_calibration_error, fit_temperature,
                         format_reliability_table, load_logit_file, mean_nll, normalized_entropy, reliability_diagram,
                         save_logit_file, scale_logits, softmax, uncertainty_ece)
from errors import InvalidInputError, InvalidParameterError
from scene_sim import simulate_calibration_stream
from schemas import NoiseModel

logit_rows = arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(2, 6)),
                    elements=st.floats(-30, 30, allow_nan=False))


def test_softmax_examples():
    assert softmax([0.0, 0.0]) == pytest.approx([0.5, 0.5])
    assert softmax([math.log(3.0), 0.0]) == pytest.approx([0.75, 0.25])
    p = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(p))
    assert p[0] == pytest.approx(1.0)
    assert p[1] == pytest.approx(0.0, abs=1e-300)


def test_softmax_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        softmax([np.nan, 0.0])
    with pytest.raises(InvalidInputError):
        softmax([np.inf, 0.0])


def test_scale_logits():
    assert scale_logits([2.0, 4.0], 1.0) == pytest.approx([2.0, 4.0])
    assert scale_logits([2.0, 4.0], 2.0) == pytest.approx([1.0, 2.0])
    p = softmax(scale_logits([5.0, 0.0, 0.0], 20.0))
    assert np.all(np.abs(p - 1.0 / 3.0) < 0.05)
    for t in (0.0, -1.0, float("nan")):
        with pytest.raises(InvalidParameterError):
            scale_logits([1.0, 2.0], t)


def test_normalized_entropy_examples():
    assert normalized_entropy(np.full(5, 0.2)) == pytest.approx(1.0)
    assert normalized_entropy([0.0, 1.0, 0.0]) == pytest.approx(0.0)
    assert normalized_entropy([0.5, 0.5, 0.0, 0.0]) == pytest.approx(0.5)


@given(logit_rows)
def test_softmax_is_on_the_simplex(logits):
    p = softmax(logits)
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-12)


@given(logit_rows, st.floats(0.05, 20.0))
def test_entropy_range_and_argmax_invariance(logits, t):
    probs, u = calibrated_probabilities(logits, t)
    assert np.all(u >= 0.0) and np.all(u <= 1.0)
    # near-ties may resolve differently after scaling
    distinct = np.sort(logits, axis=-1)
    unique_top = distinct[:, -1] - distinct[:, -2] > 1e-6
    assert np.array_equal(probs.argmax(axis=-1)[unique_top], logits.argmax(axis=-1)[unique_top])


@pytest.mark.parametrize("k", [2.0, 3.0, 5.0])
def test_temperature_recovers_overconfidence(k):
    noise = NoiseModel(overconfidence_factor=k)
    dataset = simulate_calibration_stream(noise, 5000, np.random.default_rng(7), 6)
    t = fit_temperature(dataset.logits, dataset.labels)
    assert abs(t - k) <= 0.1 * k

    before = expected_calibration_error(softmax(dataset.logits), dataset.labels)
    after = expected_calibration_error(softmax(scale_logits(dataset.logits, t)), dataset.labels)
    assert after < before
    assert after < 0.05


def test_calibrated_stream_fits_unit_temperature():
    noise = NoiseModel(overconfidence_factor=1.0)
    dataset = simulate_calibration_stream(noise, 5000, np.random.default_rng(3), 6)
    assert fit_temperature(dataset.logits, dataset.labels) == pytest.approx(1.0, rel=0.1)


def test_fitted_temperature_matches_dense_grid_minimum():
    dataset = simulate_calibration_stream(NoiseModel(), 2000, np.random.default_rng(11), 5)
    t = fit_temperature(dataset.logits, dataset.labels)
    grid = np.linspace(0.5, 6.0, 1101)
    best = grid[int(np.argmin([mean_nll(dataset.logits, dataset.labels, g) for g in grid]))]
    assert abs(t - best) < 0.02
    assert mean_nll(dataset.logits, dataset.labels, t) <= mean_nll(dataset.logits, dataset.labels, 1.0)


def test_single_confident_correct_example_goes_to_lower_bound():
    t = fit_temperature([[1.0, 0.0]], [0])
    assert t == pytest.approx(0.05, abs=1e-3)


def test_fit_temperature_rejects_empty():
    with pytest.raises(InvalidInputError):
        fit_temperature(np.zeros((0, 3)), np.zeros(0, dtype=int))


def test_ece_examples():
    one_hot = np.eye(4)
    labels = np.arange(4)
    assert expected_calibration_error(one_hot, labels) == pytest.approx(0.0)
    assert uncertainty_ece(one_hot, labels) == pytest.approx(0.0)

    preds = np.array([[0.8, 0.2], [0.8, 0.2]])
    assert expected_calibration_error(preds, [0, 1], n_bins=1) == pytest.approx(0.3)


def test_uncertainty_ece_of_uniform_predictions():
    c = 4
    preds = np.full((8, c), 1.0 / c)
    labels = np.array([0, 1, 2, 3, 0, 2, 3, 1])
    # argmax is class 0; two of eight labels are 0
    correct = 2 / 8
    assert uncertainty_ece(preds, labels, n_bins=1) == pytest.approx(correct)


def test_ece_of_sampled_calibrated_predictions():
    rng = np.random.default_rng(5)
    n = 10000
    confidence = rng.uniform(0.5, 1.0, n)
    correct = rng.random(n) < confidence
    preds = np.stack([confidence, 1.0 - confidence], axis=1)
    labels = np.where(correct, 0, 1)
    assert expected_calibration_error(preds, labels) < 0.03


def test_uncertainty_ece_matches_dense_oracle():
    dataset = simulate_calibration_stream(NoiseModel(), 3000, np.random.default_rng(2), 6)
    probs = softmax(dataset.logits)
    confidence = 1.0 - normalized_entropy(probs)
    correct = probs.argmax(axis=1) == dataset.labels
    index = np.clip(np.floor(confidence * 10).astype(int), 0, 9)
    oracle = 0.0
    for b in range(10):
        members = index == b
        if members.any():
            oracle += members.sum() / len(probs) * abs(correct[members].mean() - confidence[members].mean())
    assert uncertainty_ece(probs, dataset.labels) == pytest.approx(oracle, abs=1e-6)


def test_ece_length_mismatch():
    with pytest.raises(InvalidInputError):
        expected_calibration_error(np.eye(3), [0, 1])


def test_reliability_diagram_bins():
    report = reliability_diagram(np.eye(3), np.arange(3), n_bins=10)
    occupied = [b for b in report.bins if b.count]
    assert len(occupied) == 1
    assert occupied[0].accuracy == 1.0 and occupied[0].lower == pytest.approx(0.9)

    report = reliability_diagram(np.array([[0.8, 0.2], [0.8, 0.2]]), [0, 1], n_bins=1)
    (single,) = report.bins
    assert (single.confidence_mean, single.accuracy, single.count) == (pytest.approx(0.8), 0.5, 2)
    assert report.n_samples == 2
    assert "ECE 0.3000" in format_reliability_table(report)


def test_logit_file_round_trip(tmp_path):
    dataset = simulate_calibration_stream(NoiseModel(), 50, np.random.default_rng(0), 4)
    path = str(tmp_path / "stream.sflg")
    save_logit_file(path, dataset)
    loaded = load_logit_file(path)
    assert loaded.logits.shape == (50, 4)
    assert np.array_equal(loaded.labels, dataset.labels)
    assert np.allclose(loaded.logits, dataset.logits.astype(np.float32))


def test_logit_file_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.sflg"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(InvalidInputError):
        load_logit_file(str(path))


def test_logit_file_missing_path(tmp_path):
    with pytest.raises(OSError):
        load_logit_file(str(tmp_path / "missing.sflg"))


@settings(max_examples=25)
@given(st.lists(st.tuples(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.integers(0, 2)),
                min_size=1, max_size=20))
def test_dataset_from_pairs(pairs):
    dataset = LogitDataset.from_pairs(pairs)
    assert len(dataset) == len(pairs)
    assert dataset.n_classes == 3

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svdcl.linalg import make_rng
from svdcl.metrics import (DetectConfig, FeatureBlock, MetricSeries,
                           avg_similarity, compute_series, detect_transitions,
                           feature_variance, jaggedness, moving_average,
                           mutual_similarity, plateau_similarity,
                           quadrant_contrast, similarity_minimum)


def unit_block(b, d, seed, *stream):
    x = make_rng(seed, *stream).standard_normal((b, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def loop_similarity(fi, fj, convention):
    b, d = fi.shape
    if convention == "paired":
        total = 0.0
        for r in range(b):
            for k in range(d):
                total += fi[r, k] * fj[r, k]
        return total / b
    total = 0.0
    for r in range(b):
        for q in range(b):
            for k in range(d):
                total += fi[r, k] * fj[q, k]
    return total / (b * b)


def loop_variance(f):
    b, d = f.shape
    total = 0.0
    for k in range(d):
        mean = sum(f[r, k] for r in range(b)) / b
        total += sum((f[r, k] - mean) ** 2 for r in range(b)) / b
    return total


def test_similarity_identical_rows_is_one():
    f = np.tile([0.6, 0.8], (5, 1))
    assert avg_similarity(f, f) == pytest.approx(1.0, abs=1e-15)
    assert avg_similarity(f, f, "gram") == pytest.approx(1.0, abs=1e-15)


def test_similarity_antipodal_is_minus_one():
    f = unit_block(7, 3, 0)
    assert avg_similarity(f, -f) == pytest.approx(-1.0, abs=1e-15)


@pytest.mark.parametrize("convention", ["paired", "gram"])
@pytest.mark.parametrize("seed", range(5))
def test_similarity_matches_loop_oracle(convention, seed):
    fi, fj = unit_block(4, 2, seed, 0), unit_block(4, 2, seed, 1)
    assert avg_similarity(fi, fj, convention) == pytest.approx(loop_similarity(fi, fj, convention), abs=1e-14)


def test_similarity_errors():
    with pytest.raises(ValueError):
        avg_similarity(unit_block(3, 2, 0), unit_block(4, 2, 0))
    with pytest.raises(ValueError):
        avg_similarity(unit_block(3, 2, 0), unit_block(3, 2, 1), "literal")


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32), b=st.integers(2, 12), d=st.integers(1, 6))
def test_self_similarity_bounded_by_one(seed, b, d):
    f = unit_block(b, d, seed)
    g = unit_block(b, d, seed, 1)
    assert avg_similarity(f, f) == pytest.approx(1.0, abs=1e-12)
    assert -1 - 1e-9 <= avg_similarity(f, g) <= 1 + 1e-9
    assert -1 - 1e-9 <= avg_similarity(f, g, "gram") <= 1 + 1e-9
    coincide = np.allclose(f, g, atol=1e-12)
    assert (avg_similarity(f, g) >= 1.0 - 1e-12) == coincide


def test_variance_closed_forms():
    assert feature_variance(np.tile([0.6, 0.8], (4, 1))) == 0.0
    assert feature_variance(np.array([[1.0], [-1.0]])) == 1.0
    with pytest.raises(ValueError):
        feature_variance(np.ones((1, 3)))


def test_variance_matches_two_pass_oracle():
    f = make_rng(3).standard_normal((6, 3))
    assert feature_variance(f) == pytest.approx(loop_variance(f), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32))
def test_variance_permutation_invariant(seed):
    f = unit_block(9, 4, seed)
    perm = np.random.default_rng(seed).permutation(9)
    assert feature_variance(f[perm]) == pytest.approx(feature_variance(f), abs=1e-14)
    assert feature_variance(f) >= 0


def test_mutual_two_identical_points():
    f = unit_block(5, 3, 1)
    m = mutual_similarity(FeatureBlock([0.0, 1.0], [f, f.copy()]))
    np.testing.assert_allclose(m, np.full((2, 2), avg_similarity(f, f)))
    assert np.array_equal(m, m.T)


def test_mutual_orthogonal_points():
    feats = [np.tile(np.eye(3)[k], (4, 1)) for k in range(3)]
    m = mutual_similarity(FeatureBlock([0.0, 1.0, 2.0], feats))
    np.testing.assert_allclose(m, np.eye(3), atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32), n=st.integers(2, 8),
       convention=st.sampled_from(["paired", "gram"]))
def test_series_band_symmetry_and_bounds(seed, n, convention):
    block = FeatureBlock(np.arange(n) * 0.1, [unit_block(6, 3, seed, i) for i in range(n)])
    series = compute_series(block, convention)
    assert np.array_equal(series.mutual, series.mutual.T)
    for i in range(n - 1):
        assert abs(series.mutual[i, i + 1] - series.similarity[i]) <= 1e-12
    assert np.all(np.abs(series.mutual) <= 1 + 1e-9)
    assert np.all(series.variance >= 0)
    np.testing.assert_allclose(series.pair_coords, (np.arange(n - 1) + 0.5) * 0.1)


def test_feature_block_validation():
    with pytest.raises(ValueError):
        FeatureBlock([0.0], [np.ones((2, 2))])
    with pytest.raises(ValueError):
        FeatureBlock([0.0, 1.0], [unit_block(2, 2, 0), unit_block(3, 2, 0)])
    with pytest.raises(ValueError):
        mutual_similarity(FeatureBlock([0.0], [unit_block(2, 2, 0)]))


def test_feature_block_from_labels():
    feats = unit_block(6, 2, 0)
    labels = np.array([2.0, 1.0, 2.0, 1.0, 2.0, 1.0])
    block = FeatureBlock.from_dataset_features(labels, feats)
    np.testing.assert_array_equal(block.coords, [1.0, 2.0])
    np.testing.assert_array_equal(block.features[0], feats[1::2])


def test_moving_average_and_jaggedness():
    np.testing.assert_allclose(moving_average([1.0, 2.0, 3.0, 4.0], 3), [1.5, 2.0, 3.0, 3.5])
    assert jaggedness(np.full(20, 0.7)) == pytest.approx(0.0, abs=1e-15)
    ramp = np.linspace(0, 1, 20)
    assert np.allclose(moving_average(ramp, 5)[2:-2], ramp[2:-2])
    zigzag = np.array([0.0, 1.0] * 10)
    assert jaggedness(zigzag) > 0.3


def test_quadrant_contrast_block_matrix():
    coords = np.array([1.0, 2.0, 3.0, 4.0])
    m = np.array([[1.0, 1.0, 0.2, 0.2]] * 2 + [[0.2, 0.2, 1.0, 1.0]] * 2)
    assert quadrant_contrast(m, coords, 2.5) == pytest.approx(0.8)
    with pytest.raises(ValueError):
        quadrant_contrast(m, coords, 10.0)


def series_from(sim, var, coords=None):
    n = len(var)
    coords = np.arange(n, dtype=float) if coords is None else coords
    return MetricSeries(np.asarray(coords), np.asarray(sim, dtype=float),
                        np.asarray(var, dtype=float), np.eye(n))


def test_flat_curves_detect_nothing():
    assert detect_transitions(series_from(np.ones(20), np.zeros(21))) == []


@pytest.mark.parametrize("k", [3, 8, 15])
def test_v_shape_single_detection(k):
    sim = 1.0 - 0.08 * np.maximum(0, 4 - np.abs(np.arange(20) - k))
    series = series_from(sim, np.zeros(21))
    found = detect_transitions(series)
    assert len(found) == 1
    assert found[0].s == series.pair_coords[k]
    assert found[0].metrics == ["similarity"]


def test_variance_peak_and_merge():
    coords = np.linspace(-1, 1, 21)
    var = np.exp(-((coords - 0.2) / 0.2) ** 2)
    sim = 1.0 - 0.5 * np.exp(-((0.5 * (coords[1:] + coords[:-1]) - 0.15) / 0.2) ** 2)
    found = detect_transitions(series_from(sim, var, coords))
    assert len(found) == 1
    assert set(found[0].metrics) == {"similarity", "variance"}
    assert abs(found[0].s - 0.2) <= 0.1
    only_var = detect_transitions(series_from(sim, var, coords), DetectConfig(use_similarity=False))
    assert only_var[0].s == pytest.approx(0.2)
    assert only_var[0].to_json() == {"s": only_var[0].s, "metric": "variance", "score": only_var[0].score}


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32), scale=st.floats(1e-3, 1e3), shift=st.floats(-1e3, 1e3))
def test_detection_invariant_under_affine_variance(seed, scale, shift):
    rng = np.random.default_rng(seed)
    var = np.cumsum(rng.standard_normal(25)) ** 2
    series = series_from(np.ones(24), var)
    base = detect_transitions(series, DetectConfig(use_similarity=False))
    moved = detect_transitions(series_from(np.ones(24), scale * var + shift), DetectConfig(use_similarity=False))
    assert [d.s for d in moved] == [d.s for d in base]
    np.testing.assert_allclose([d.score for d in moved], [d.score for d in base], rtol=1e-6, atol=1e-9)


def test_readouts():
    sim = np.array([0.9, 0.8, 0.2, 0.85, 0.95])
    series = series_from(sim, np.zeros(6))
    assert similarity_minimum(series) == 2.5
    assert plateau_similarity(series, 2.5, 1.5) == pytest.approx(np.mean([0.9, 0.95]))
    assert math.isnan(plateau_similarity(series, 2.5, 100.0))

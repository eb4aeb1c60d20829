import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slopestrike.metrics import (
    MetricsError, confusion, error_metrics, median_heuristic_gamma, mmd, moments,
)


def test_error_metrics_perfect():
    assert error_metrics([1.0, 2.0], [1.0, 2.0]) == (0.0, 0.0, 0.0)


def test_error_metrics_constant_offset():
    truth = np.full(10, 100.0)
    mae, rmse, mape = error_metrics(truth + 1.0, truth)
    assert (mae, rmse) == (1.0, 1.0)
    assert abs(mape - 0.01) < 1e-15


def brute_error_metrics(pred, truth):
    n = len(pred)
    mae = sum(abs(p - t) for p, t in zip(pred, truth)) / n
    rmse = math.sqrt(sum((p - t) ** 2 for p, t in zip(pred, truth)) / n)
    mape = sum(abs((p - t) / t) for p, t in zip(pred, truth)) / n
    return mae, rmse, mape


def test_error_metrics_match_brute_force():
    rng = np.random.default_rng(1)
    pred = rng.normal(50, 5, 64)
    truth = rng.normal(50, 5, 64)
    got = error_metrics(pred, truth)
    want = brute_error_metrics(list(pred), list(truth))
    for g, w in zip(got, want):
        assert abs(g - w) < 1e-12


def test_error_metrics_zero_truth_names_index():
    with pytest.raises(MetricsError, match="index 1"):
        error_metrics([1.0, 2.0], [1.0, 0.0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=40),
       st.lists(st.floats(1, 100), min_size=2, max_size=40))
def test_rmse_at_least_mae(p, t):
    n = min(len(p), len(t))
    mae, rmse, _ = error_metrics(p[:n], t[:n])
    assert rmse >= mae - 1e-12


def brute_mmd(a, b):
    pooled = [tuple(v) for v in list(a) + list(b)]
    dists = []
    for i in range(len(pooled)):
        for j in range(i + 1, len(pooled)):
            dists.append(math.dist(pooled[i], pooled[j]))
    dists.sort()
    n = len(dists)
    med = dists[n // 2] if n % 2 else 0.5 * (dists[n // 2 - 1] + dists[n // 2])
    gamma = 1.0 / (2.0 * med * med)

    def k(x, y):
        return math.exp(-gamma * sum((xi - yi) ** 2 for xi, yi in zip(x, y)))

    saa = sum(k(x, y) for x in a for y in a) / (len(a) ** 2)
    sbb = sum(k(x, y) for x in b for y in b) / (len(b) ** 2)
    sab = sum(k(x, y) for x in a for y in b) / (len(a) * len(b))
    return saa + sbb - 2.0 * sab


def test_mmd_identical_samples_zero():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(20, 3))
    assert mmd(a, a.copy()) < 1e-12


def test_mmd_two_far_clusters_closed_form():
    a = np.zeros((4, 1))
    b = np.full((4, 1), 10.0)
    gamma = median_heuristic_gamma(np.concatenate([a, b]))
    # pooled distances: 12 zeros and 16 tens -> middle two are both 10
    assert abs(gamma - 1.0 / 200.0) < 1e-18
    expected = 2.0 * (1.0 - math.exp(-gamma * 100.0))
    assert abs(mmd(a, b) - expected) < 1e-12


def test_mmd_matches_double_sum_oracle():
    rng = np.random.default_rng(17)
    a = rng.normal(0.0, 1.0, size=(12, 2))
    b = rng.normal(0.4, 1.3, size=(9, 2))
    assert abs(mmd(a, b) - brute_mmd(a, b)) < 1e-10


def test_mmd_symmetry_and_permutation_invariance():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(10, 4))
    b = rng.normal(size=(11, 4))
    assert mmd(a, b) == mmd(b, a)
    perm = rng.permutation(10)
    assert mmd(a, b) == mmd(a[perm], b)


def test_mmd_identical_pooled_points_bandwidth_error():
    a = np.ones((3, 2))
    with pytest.raises(MetricsError, match="bandwidth"):
        mmd(a, a)


def test_moments_constant_sample_flagged():
    with pytest.raises(MetricsError, match="undefined"):
        moments(np.full(10, 2.0))


def test_moments_two_point_symmetric():
    rep = np.array([-1.0, 1.0] * 8)
    r = moments(rep)
    assert r.mu == 0.0 and r.skew == 0.0
    assert abs(r.kurtosis - 1.0) < 1e-12
    assert r.sigma == 1.0 and r.iqr == 2.0


def test_moments_match_brute_force():
    rng = np.random.default_rng(2)
    x = rng.normal(3.0, 2.0, 101)
    r = moments(x)
    mu = sum(x) / len(x)
    m2 = sum((v - mu) ** 2 for v in x) / len(x)
    m3 = sum((v - mu) ** 3 for v in x) / len(x)
    m4 = sum((v - mu) ** 4 for v in x) / len(x)
    assert abs(r.mu - mu) < 1e-12
    assert abs(r.sigma - math.sqrt(m2)) < 1e-12
    assert abs(r.skew - m3 / m2 ** 1.5) < 1e-12
    assert abs(r.kurtosis - m4 / m2 ** 2) < 1e-12


def test_moments_gaussian_kurtosis_near_three():
    rng = np.random.default_rng(77)
    r = moments(rng.standard_normal(100_000))
    assert abs(r.kurtosis - 3.0) / 3.0 < 0.05


def test_confusion_perfect():
    r = confusion([0, 1, 0, 1], [0, 1, 0, 1])
    assert r.accuracy == 100.0 and r.kappa == 100.0 and r.specificity == 100.0


def test_confusion_all_positive_on_balanced():
    r = confusion([0, 1] * 10, [1] * 20)
    assert r.specificity == 0.0
    assert r.kappa == 0.0


def test_confusion_matches_direct_formulas():
    rng = np.random.default_rng(3)
    y = rng.integers(0, 2, 50)
    p = rng.integers(0, 2, 50)
    r = confusion(y, p)
    tp = sum(1 for a, b in zip(y, p) if a == 1 and b == 1)
    tn = sum(1 for a, b in zip(y, p) if a == 0 and b == 0)
    fp = sum(1 for a, b in zip(y, p) if a == 0 and b == 1)
    fn = sum(1 for a, b in zip(y, p) if a == 1 and b == 0)
    assert (r.tp, r.tn, r.fp, r.fn) == (tp, tn, fp, fn)
    acc = (tp + tn) / 50
    pe = ((tp + fp) / 50) * ((tp + fn) / 50) + ((tn + fn) / 50) * ((tn + fp) / 50)
    assert abs(r.accuracy - 100 * acc) < 1e-12
    assert abs(r.kappa - 100 * (acc - pe) / (1 - pe)) < 1e-12


def test_confusion_label_independent_kappa_zero():
    # predictions constant regardless of label -> kappa exactly 0
    y = np.array([0, 0, 1, 1, 1, 0, 1, 0])
    r = confusion(y, np.ones_like(y))
    assert r.kappa == 0.0


def test_confusion_empty_rejected():
    with pytest.raises(MetricsError):
        confusion([], [])

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtident import metrics


def brute_force(cost):
    n = cost.shape[0]
    best = None
    for perm in itertools.permutations(range(n)):  # lexicographic order
        val = sum(cost[i, perm[i]] for i in range(n))
        if best is None or val < best[0] - 1e-12:
            best = (val, perm)
    return np.array(best[1]), best[0]


def test_corr_matrix_identity_and_scaling():
    Z = np.random.default_rng(0).normal(size=(100, 3))
    np.testing.assert_allclose(np.diag(metrics.corr_matrix(Z, Z)), 1.0)
    Z2 = Z.copy()
    Z2[:, 1] *= -3
    assert metrics.corr_matrix(Z, Z2)[1, 1] == pytest.approx(-1.0)


def test_corr_matrix_independent():
    rng = np.random.default_rng(1)
    C = metrics.corr_matrix(rng.normal(size=(10_000, 4)), rng.normal(size=(10_000, 4)))
    assert np.abs(C).max() < 0.05


def test_corr_matrix_constant_column_is_zero(caplog):
    Z = np.random.default_rng(2).normal(size=(50, 2))
    Zc = Z.copy()
    Zc[:, 0] = 3.0
    C = metrics.corr_matrix(Zc, Z)
    np.testing.assert_array_equal(C[0], 0.0)
    assert "constant" in caplog.text


def test_corr_matrix_errors():
    with pytest.raises(ValueError):
        metrics.corr_matrix(np.zeros((5, 2)), np.zeros((4, 2)))


def test_hungarian_examples():
    np.testing.assert_array_equal(metrics.hungarian(-np.eye(4)), np.arange(4))
    np.testing.assert_array_equal(metrics.hungarian(np.ones((5, 5))), np.arange(5))
    np.testing.assert_array_equal(metrics.hungarian(np.array([[1.0, 0.0], [0.0, 1.0]])), [1, 0])


@pytest.mark.parametrize("n", [3, 4])
def test_hungarian_matches_brute_force(n):
    rng = np.random.default_rng(n)
    for k in range(200):
        cost = rng.normal(size=(n, n))
        if k % 4 == 0:
            cost = rng.integers(0, 3, size=(n, n)).astype(float)  # many ties
        perm = metrics.hungarian(cost)
        ref_perm, ref_val = brute_force(cost)
        assert cost[np.arange(n), perm].sum() == pytest.approx(ref_val, abs=1e-12)
        np.testing.assert_array_equal(perm, ref_perm)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_hungarian_optimal_against_scipy(n, seed):
    from scipy.optimize import linear_sum_assignment

    cost = np.random.default_rng(seed).normal(size=(n, n))
    r, c = linear_sum_assignment(cost)
    perm = metrics.hungarian(cost)
    assert sorted(perm) == list(range(n))
    assert cost[np.arange(n), perm].sum() == pytest.approx(cost[r, c].sum(), abs=1e-10)


def test_hungarian_rejects_bad_input():
    with pytest.raises(ValueError):
        metrics.hungarian(np.ones((2, 3)))
    with pytest.raises(ValueError):
        metrics.hungarian(np.array([[np.inf, 0], [0, 0]]))


def test_mcc_strong_identity():
    Z = np.random.default_rng(3).normal(size=(200, 4))
    score, perm, per_dim = metrics.mcc_strong(Z, Z)
    assert score == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(perm, np.arange(4))


def test_mcc_strong_permutation_scaling():
    rng = np.random.default_rng(4)
    for _ in range(100):
        d = rng.integers(2, 7)
        Z = rng.normal(size=(300, d))
        perm = rng.permutation(d)
        S = rng.uniform(0.1, 5, size=d) * rng.choice([-1, 1], size=d)
        score, assign, _ = metrics.mcc_strong(Z[:, perm] * S, Z)
        assert abs(score - 1.0) <= 1e-9
        np.testing.assert_array_equal(assign, perm)


def test_mcc_strong_noise():
    rng = np.random.default_rng(5)
    assert metrics.mcc_strong(rng.normal(size=(1000, 5)), rng.normal(size=(1000, 5)))[0] < 0.3


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_mcc_strong_symmetric(d, seed):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(50, d))
    W = Z @ rng.normal(size=(d, d)) + rng.normal(size=(50, d))
    s1, p1, _ = metrics.mcc_strong(Z, W)
    s2, p2, _ = metrics.mcc_strong(W, Z)
    assert s1 == pytest.approx(s2, abs=1e-12)
    inv = np.empty_like(p1)
    inv[p1] = np.arange(d)
    np.testing.assert_array_equal(p2, inv)


def test_mcc_weak_linear_map():
    rng = np.random.default_rng(6)
    Z = rng.normal(size=(500, 4))
    M = rng.normal(size=(4, 4))
    assert metrics.mcc_weak(Z @ M.T, Z) == pytest.approx(1.0, abs=1e-6)
    _, _, rho = metrics.cca_variates(Z, Z)
    np.testing.assert_allclose(rho, 1.0, atol=1e-6)


def test_mcc_weak_noise():
    rng = np.random.default_rng(7)
    assert metrics.mcc_weak(rng.normal(size=(1000, 5)), rng.normal(size=(1000, 5))) < 0.3


def test_mcc_weak_invariant_to_linear_maps():
    rng = np.random.default_rng(8)
    for _ in range(20):
        Z = rng.normal(size=(400, 3))
        H = np.tanh(Z @ rng.normal(size=(3, 3))) + 0.3 * rng.normal(size=(400, 3))
        M = rng.normal(size=(3, 3)) + 2 * np.eye(3)
        assert abs(metrics.mcc_weak(H @ M.T, Z) - metrics.mcc_weak(H, Z)) <= 1e-6


def test_mcc_weak_rank_deficient():
    Z = np.random.default_rng(9).normal(size=(100, 3))
    H = np.zeros((100, 3))
    H[:, 0] = Z[:, 0]
    with pytest.raises(ValueError):
        metrics.mcc_weak(H, Z, ridge=0.0)


def test_mcc_weak_needs_rows():
    with pytest.raises(ValueError):
        metrics.mcc_weak(np.ones((3, 3)), np.ones((3, 3)))


def test_mcc_pairwise():
    Z = np.random.default_rng(10).normal(size=(100, 3))
    mean, std, scores = metrics.mcc_pairwise([Z, Z, Z])
    assert mean == pytest.approx(1.0) and std == pytest.approx(0.0, abs=1e-12) and len(scores) == 3
    mean, std, scores = metrics.mcc_pairwise([Z, Z[:, ::-1] * 2])
    assert len(scores) == 1 and std == 0.0
    rng = np.random.default_rng(11)
    mean, _, scores = metrics.mcc_pairwise([rng.normal(size=(1000, 5)) for _ in range(5)])
    assert mean < 0.3 and len(scores) == 10
    with pytest.raises(ValueError):
        metrics.mcc_pairwise([Z, Z[:50]])
    with pytest.raises(ValueError):
        metrics.mcc_pairwise([Z])


def test_indicator_accuracy():
    rng = np.random.default_rng(12)
    C = rng.integers(0, 2, size=(10, 10))
    assert metrics.indicator_accuracy(C, C) == 1.0
    assert metrics.indicator_accuracy(1 - C, C) == 0.0
    D = C.copy()
    D[3, 4] = 1 - D[3, 4]
    assert metrics.indicator_accuracy(D, C) == pytest.approx(0.99)
    with pytest.raises(ValueError):
        metrics.indicator_accuracy(C[:5], C)


def test_aligned_indicator_accuracy():
    C = np.array([[1, 0, 0], [0, 1, 1]])
    perm = np.array([2, 0, 1])  # learned i matches true perm[i]
    learned = C[:, perm]
    assert metrics.aligned_indicator_accuracy(learned, C, perm) == 1.0


def test_eval_report_validation():
    metrics.EvalReport(weak_mcc=0.5, assignment=[1, 0, 2])
    with pytest.raises(ValueError):
        metrics.EvalReport(strong_mcc=1.5)
    with pytest.raises(ValueError):
        metrics.EvalReport(assignment=[0, 0])

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtident.numerics import (
    Adam,
    NumericalDomainError,
    SeededRng,
    TrainConfig,
    cholesky,
    finite_diff_grad,
    gaussian_logpdf,
    logistic,
    rng_fork,
)
from pcg_oracle import Pcg64


def eig_logpdf(x, mean, cov):
    w, V = np.linalg.eigh(cov)
    r = V.T @ (x - mean)
    return -0.5 * (len(x) * math.log(2 * math.pi) + np.log(w).sum() + (r * r / w).sum())


def test_logpdf_standard_1d():
    assert gaussian_logpdf([0.0], [0.0], [[1.0]]) == pytest.approx(-0.9189385332, abs=1e-10)


def test_logpdf_at_mean_2d():
    assert gaussian_logpdf([1.0, 2.0], [1.0, 2.0], np.eye(2)) == pytest.approx(-1.8378770664, abs=1e-10)


def test_logpdf_matches_eigendecomposition():
    rng = np.random.default_rng(0)
    for _ in range(20):
        M = rng.normal(size=(3, 3))
        cov = M @ M.T + 0.1 * np.eye(3)
        x, mu = rng.normal(size=3), rng.normal(size=3)
        assert gaussian_logpdf(x, mu, cov) == pytest.approx(eig_logpdf(x, mu, cov), abs=1e-10)


def test_logpdf_dimension_mismatch():
    with pytest.raises(ValueError):
        gaussian_logpdf([0.0, 0.0], [0.0], np.eye(2))


def test_logpdf_integrates_to_one():
    # Quasi-Monte Carlo over a box of +-8 standard deviations.
    from scipy.stats import qmc

    cov = np.array([[1.0, 0.3], [0.3, 0.5]])
    sd = np.sqrt(np.diag(cov))
    lo, hi = -8 * sd, 8 * sd
    pts = qmc.scale(qmc.Sobol(2, seed=1).random(2**15), lo, hi)
    vals = np.exp([gaussian_logpdf(p, np.zeros(2), cov) for p in pts])
    assert vals.mean() * np.prod(hi - lo) == pytest.approx(1.0, abs=1e-2)


def test_cholesky_identity():
    np.testing.assert_array_equal(cholesky(np.eye(4)), np.eye(4))


def test_cholesky_reconstruction_example():
    cov = np.array([[4.0, 2.0], [2.0, 3.0]])
    L = cholesky(cov)
    assert np.allclose(np.tril(L), L)
    assert np.linalg.norm(L @ L.T - cov) <= 1e-12 * np.linalg.norm(cov)


def test_cholesky_indefinite_raises():
    with pytest.raises(NumericalDomainError, match="covariance"):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_cholesky_asymmetric_raises():
    with pytest.raises(NumericalDomainError):
        cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_cholesky_jitter_escalation():
    v = np.array([1.0, 1.0, 1.0])
    cov = np.outer(v, v)  # rank one, needs jitter
    L = cholesky(cov, name="rank-one")
    assert np.linalg.norm(L @ L.T - cov) < 1e-5


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_cholesky_reconstructs_random_psd(d, seed):
    M = np.random.default_rng(seed).normal(size=(d, d))
    cov = M @ M.T + np.eye(d)
    L = cholesky(cov)
    assert np.linalg.norm(L @ L.T - cov) <= 1e-10 * np.linalg.norm(cov)


def test_finite_diff_examples():
    assert finite_diff_grad(lambda x: float(x[0] ** 2), [3.0], eps=1e-5)[0] == pytest.approx(6.0, abs=1e-5)
    np.testing.assert_array_equal(finite_diff_grad(lambda x: 2.5, np.ones(4)), np.zeros(4))
    assert finite_diff_grad(lambda x: math.sin(x[0]), [0.7])[0] == pytest.approx(math.cos(0.7), abs=1e-6)


def test_finite_diff_nonfinite_raises():
    with pytest.raises(NumericalDomainError):
        finite_diff_grad(lambda x: math.log(x[0]) if x[0] > 0 else float("nan"), [0.0])


def test_finite_diff_matrix_shape():
    A = np.arange(6.0).reshape(2, 3)
    g = finite_diff_grad(lambda X: float((X * X).sum()), A)
    assert g.shape == (2, 3)
    np.testing.assert_allclose(g, 2 * A, atol=1e-6)


def test_rng_same_seed_same_stream():
    a = rng_fork(SeededRng(42), 7).random_raw(100)
    b = rng_fork(SeededRng(42), 7).random_raw(100)
    np.testing.assert_array_equal(a, b)


def test_rng_forks_distinct():
    root = SeededRng(0)
    a = rng_fork(root, 0).random_raw(10_000)
    b = rng_fork(root, 1).random_raw(10_000)
    assert not np.any(a == b)


def test_rng_fork_ignores_parent_consumption():
    root = SeededRng(3)
    before = rng_fork(root, 2).random_raw(5)
    root.normal(size=1000)
    np.testing.assert_array_equal(rng_fork(root, 2).random_raw(5), before)


@pytest.mark.parametrize("stream", [0, 1, 2, 17])
def test_rng_matches_reference_implementation(stream):
    ours = rng_fork(SeededRng(0), stream).random_raw(8)
    ref = Pcg64(0, (stream,))
    assert [int(v) for v in ours] == [ref.next64() for _ in range(8)]


def test_rng_root_and_nested_match_reference():
    ours = rng_fork(rng_fork(SeededRng(2**63 + 5), 1), 4).random_raw(8)
    ref = Pcg64(2**63 + 5, (1, 4))
    assert [int(v) for v in ours] == [ref.next64() for _ in range(8)]
    ref_root = Pcg64(123)
    assert [int(v) for v in SeededRng(123).random_raw(8)] == [ref_root.next64() for _ in range(8)]


def test_rng_rejects_out_of_range():
    with pytest.raises(ValueError):
        SeededRng(-1)
    with pytest.raises(ValueError):
        rng_fork(SeededRng(0), 2**64)


def test_logistic_stable():
    x = np.array([-1000.0, -5.0, 0.0, 5.0, 1000.0])
    out = logistic(x)
    assert np.all(np.isfinite(out))
    assert out[2] == 0.5
    np.testing.assert_allclose(out[1] + out[3], 1.0, atol=1e-15)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=10, patience=11)


def test_cosine_schedule_endpoints():
    cfg = TrainConfig(learning_rate=0.1, max_epochs=100, patience=10, final_lr_fraction=0.01)
    assert cfg.lr_at(0) == pytest.approx(0.1)
    assert cfg.lr_at(100) == pytest.approx(0.001)
    assert TrainConfig(learning_rate=0.1).lr_at(50) == pytest.approx(0.1)


def test_adam_minimises_quadratic():
    x = {"x": np.array([3.0, -2.0])}
    opt = Adam(x, lr=0.1)
    for _ in range(500):
        opt.step({"x": 2 * x["x"]})
    assert np.abs(x["x"]).max() < 1e-2

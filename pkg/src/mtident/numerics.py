"""Low-level numerical kernels: seeded randomness, Gaussian densities,
jittered Cholesky, and a central-difference gradient oracle.

All randomness in the package goes through :class:`SeededRng`, which wraps
numpy's PCG64 bit generator keyed by a :class:`numpy.random.SeedSequence`.
A child stream is identified by the root seed plus the tuple of fork ids
that led to it, so forks never depend on how much of the parent stream has
been consumed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)

# Jitter ladder for near-singular covariances: 0, 1e-10, 1e-9, ..., 1e-6.
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)

PRNG_ALGORITHM = "PCG64 (XSL-RR 128/64) seeded via numpy SeedSequence"


class NumericalDomainError(ArithmeticError):
    """A matrix or function value left the domain a kernel can handle."""


class SeededRng:
    """Deterministic random stream identified by ``(seed, path)``.

    ``path`` is the tuple of stream ids passed to :func:`rng_fork` on the way
    from the root. Two objects with equal seed and path produce identical
    output regardless of what either parent has drawn.
    """

    def __init__(self, seed: int, path: Sequence[int] = ()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.path = tuple(int(p) for p in path)
        self._seq = np.random.SeedSequence(entropy=seed, spawn_key=self.path)
        self.bit_generator = np.random.PCG64(self._seq)
        self.gen = np.random.Generator(self.bit_generator)

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, path={self.path})"

    def random_raw(self, size: int) -> np.ndarray:
        """Raw 64-bit outputs of the underlying generator."""
        return self.bit_generator.random_raw(size)

    # Thin pass-throughs, so callers never reach for numpy's global state.
    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def choice(self, a, size=None, replace=True):
        return self.gen.choice(a, size=size, replace=replace)


def rng_fork(rng: SeededRng, stream_id: int) -> SeededRng:
    """Child stream that depends only on ``rng.seed``, ``rng.path`` and ``stream_id``."""
    stream_id = int(stream_id)
    if not 0 <= stream_id < 2**64:
        raise ValueError(f"stream_id must be a 64-bit unsigned integer, got {stream_id}")
    return SeededRng(rng.seed, rng.path + (stream_id,))


def _check_symmetric(cov: np.ndarray, name: str) -> None:
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"{name} must be square, got shape {cov.shape}")
    scale = max(np.max(np.abs(cov)), 1e-300)
    if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
        raise NumericalDomainError(f"{name} is not symmetric")


def cholesky(cov: np.ndarray, jitter: float = 0.0, name: str = "covariance") -> np.ndarray:
    """Lower Cholesky factor of ``cov + jitter*I``.

    If the factorisation fails, jitter is escalated along ``JITTER_LADDER``
    (only rungs larger than the requested jitter are tried) before giving up.
    """
    cov = np.asarray(cov, dtype=np.float64)
    _check_symmetric(cov, name)
    eye = np.eye(cov.shape[0])
    ladder = [jitter] + [j for j in JITTER_LADDER if j > jitter]
    for jit in ladder:
        try:
            L = np.linalg.cholesky(cov + jit * eye if jit else cov)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.diag(L) > 0):
            return L
    raise NumericalDomainError(
        f"{name} (dim {cov.shape[0]}) is not positive definite even with jitter {ladder[-1]:g}"
    )


def batched_cholesky(covs: np.ndarray, name: str = "covariance") -> np.ndarray:
    """Cholesky of a stack ``(..., d, d)``; falls back to per-matrix escalation."""
    try:
        return np.linalg.cholesky(covs)
    except np.linalg.LinAlgError:
        flat = covs.reshape(-1, covs.shape[-2], covs.shape[-1])
        out = np.empty_like(flat)
        for i, c in enumerate(flat):
            out[i] = cholesky(c, name=f"{name}[{i}]")
        return out.reshape(covs.shape)


def gaussian_logpdf(x, mean, cov) -> float:
    """log N(x | mean, cov) via Cholesky: log-det from the pivots, quadratic form by a triangular solve."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    d = x.shape[0]
    if mean.shape != (d,) or cov.shape != (d, d):
        raise ValueError(f"dimension mismatch: x {x.shape}, mean {mean.shape}, cov {cov.shape}")
    L = cholesky(cov)
    alpha = _solve_lower(L, x - mean)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * (d * LOG_2PI + logdet + alpha @ alpha))


def _solve_lower(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    from scipy.linalg import solve_triangular

    return solve_triangular(L, b, lower=True)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-6) -> np.ndarray:
    """Central differences ``(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)``."""
    x = np.array(x, dtype=np.float64)
    shape = x.shape
    flat = x.ravel()
    grad = np.empty_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f(flat.reshape(shape))
        flat[i] = old - eps
        fm = f(flat.reshape(shape))
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalDomainError(f"non-finite function value near coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad.reshape(shape)


def logistic(x):
    """Numerically stable sigmoid."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class TrainConfig:
    """Optimiser settings shared by both training stages.

    ``max_epochs`` counts passes over the data for the regression network and
    full-batch steps for the latent model. ``batch_size`` is ignored by the
    latter.
    """

    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    # Cosine decay from learning_rate to final_lr_fraction * learning_rate
    # over max_epochs; 1.0 keeps the rate constant.
    final_lr_fraction: float = 1.0

    def lr_at(self, epoch: int) -> float:
        frac = min(epoch / self.max_epochs, 1.0)
        scale = self.final_lr_fraction + (1.0 - self.final_lr_fraction) * 0.5 * (1.0 + math.cos(math.pi * frac))
        return self.learning_rate * scale

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise ValueError("learning_rate, batch_size and max_epochs must be positive")
        if not 0 < self.patience <= self.max_epochs:
            raise ValueError("need 0 < patience <= max_epochs")

    def to_dict(self):
        return asdict(self)


class Adam:
    """Adam over a dict of named numpy arrays, updated in place (minimisation)."""

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            self.params[k] -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)

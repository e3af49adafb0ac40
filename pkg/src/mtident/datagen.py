"""Synthetic multi-task data with causal and spurious latent factors.

Per task a random subset of ``n_causal`` latent coordinates is causal for
the target: ``y = sum_j w_j z_j + noise``. The remaining coordinates are
spurious, generated from the target as ``z_j = gamma_j * y + noise``.
Observations are a mixing function of the full latent vector plus
isotropic noise; the mixing is shared across tasks.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import Dataset, TaskData
from .numerics import SeededRng, rng_fork

MIXING_KINDS = ("identity", "orthogonal", "random-linear", "random-mlp")
MAX_CONDITION = 1e6

# Top-level stream ids under the dataset seed.
STREAM_MIXING = 0
STREAM_TASKS = 1


class ConfigError(ValueError):
    pass


@dataclass
class GenConfig:
    d: int = 5
    n_causal: int = 2
    n_tasks: int = 200
    n_per_task: int = 100
    obs_dim: int | None = None
    mixing_kind: str = "random-linear"
    mlp_hidden: int | None = None
    sigma_s: float = 0.1
    sigma_o: float = 0.01
    seed: int = 1
    # Std of the causal latents. The generator pseudocode draws them with
    # std sigma_s, which makes causal and spurious coordinates share one
    # conditional variance and leaves the indicators unidentifiable; the
    # default follows the standard-Gaussian causal prior instead.
    causal_std: float = 1.0
    sigma_p_bounds: tuple[float, float] = (2.0, 3.0)
    standardize_y: bool = True

    def __post_init__(self):
        if self.obs_dim is None:
            self.obs_dim = self.d
        if self.mlp_hidden is None:
            self.mlp_hidden = 2 * self.obs_dim
        self.sigma_p_bounds = tuple(float(b) for b in self.sigma_p_bounds)
        self.validate()

    def validate(self):
        if not 1 <= self.n_causal < self.d:
            raise ConfigError(f"need 1 <= n_causal < d, got n_causal={self.n_causal}, d={self.d}")
        if self.obs_dim < self.d:
            raise ConfigError(f"obs_dim ({self.obs_dim}) must be >= d ({self.d})")
        if self.mixing_kind not in MIXING_KINDS:
            raise ConfigError(f"unknown mixing_kind {self.mixing_kind!r}; expected one of {MIXING_KINDS}")
        if self.mixing_kind in ("identity", "orthogonal") and self.obs_dim != self.d:
            raise ConfigError(f"{self.mixing_kind} mixing requires obs_dim == d")
        if self.n_tasks < 1 or self.n_per_task < 2:
            raise ConfigError("need n_tasks >= 1 and n_per_task >= 2")
        lo, hi = self.sigma_p_bounds
        if not 0 <= lo <= hi:
            raise ConfigError(f"bad sigma_p_bounds {self.sigma_p_bounds}")

    def to_dict(self):
        out = asdict(self)
        out["sigma_p_bounds"] = list(self.sigma_p_bounds)
        return out


@dataclass
class TaskGroundTruth:
    c_star: np.ndarray
    w_star: np.ndarray
    gamma_star: np.ndarray
    sigma_p_bounds: tuple[float, float] = (2.0, 3.0)

    def to_dict(self):
        return {
            "c_star": self.c_star.astype(int).tolist(),
            "w_star": self.w_star.tolist(),
            "gamma_star": self.gamma_star.tolist(),
            "sigma_p_bounds": list(self.sigma_p_bounds),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            c_star=np.asarray(d["c_star"], dtype=np.int64),
            w_star=np.asarray(d["w_star"], dtype=np.float64),
            gamma_star=np.asarray(d["gamma_star"], dtype=np.float64),
            sigma_p_bounds=tuple(d["sigma_p_bounds"]),
        )


@dataclass
class MixingFunction:
    kind: str
    matrix: np.ndarray | None = None
    layers: list = field(default_factory=list)  # [(W, b), ...] for the MLP

    def __call__(self, Z: np.ndarray) -> np.ndarray:
        if self.matrix is not None:
            return Z @ self.matrix.T
        (W1, b1), (W2, b2) = self.layers
        return np.maximum(Z @ W1.T + b1, 0.0) @ W2.T + b2


def _glorot(rng: SeededRng, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def make_mixing(cfg: GenConfig, rng: SeededRng) -> MixingFunction:
    d, n = cfg.d, cfg.obs_dim
    if cfg.mixing_kind == "identity":
        return MixingFunction("identity", matrix=np.eye(d))
    if cfg.mixing_kind == "orthogonal":
        Q, R = np.linalg.qr(rng.normal(size=(d, d)))
        return MixingFunction("orthogonal", matrix=Q * np.sign(np.diag(R)))
    if cfg.mixing_kind == "random-linear":
        while True:
            M = rng.normal(size=(n, d))
            if np.linalg.cond(M) < MAX_CONDITION:
                return MixingFunction("random-linear", matrix=M)
    h = cfg.mlp_hidden
    W1 = _glorot(rng, h, d)
    b1 = rng.uniform(-1.0, 1.0, size=h) / np.sqrt(d)
    W2 = _glorot(rng, n, h)
    b2 = np.zeros(n)
    return MixingFunction("random-mlp", layers=[(W1, b1), (W2, b2)])


def sample_task_truth(cfg: GenConfig, rng: SeededRng) -> TaskGroundTruth:
    d = cfg.d
    causal = rng.permutation(d)[: cfg.n_causal]
    c = np.zeros(d, dtype=np.int64)
    c[causal] = 1
    w = np.where(c == 1, rng.uniform(0.0, 1.0, size=d), 0.0)
    gamma = np.where(c == 0, rng.uniform(-1.0, 1.0, size=d), 0.0)
    return TaskGroundTruth(c_star=c, w_star=w, gamma_star=gamma, sigma_p_bounds=cfg.sigma_p_bounds)


def generate_task(cfg: GenConfig, truth: TaskGroundTruth, mixing: MixingFunction, rng: SeededRng):
    """Draw one task. Returns ``(TaskData, (y_mean, y_scale))``.

    ``y_mean``/``y_scale`` undo the per-task standardisation:
    ``y_raw = y * y_scale + y_mean``.
    """
    n, d = cfg.n_per_task, cfg.d
    causal = truth.c_star == 1
    Z = np.zeros((n, d))
    Z[:, causal] = rng.normal(0.0, cfg.causal_std, size=(n, int(causal.sum())))
    lo, hi = truth.sigma_p_bounds
    sigma_p = rng.uniform(lo, hi, size=n)
    y = Z[:, causal] @ truth.w_star[causal] + sigma_p * rng.normal(size=n)
    spur = ~causal
    Z[:, spur] = y[:, None] * truth.gamma_star[spur] + cfg.sigma_s * rng.normal(
        size=(n, int(spur.sum()))
    )
    X = mixing(Z) + cfg.sigma_o * rng.normal(size=(n, cfg.obs_dim))
    y_mean, y_scale = 0.0, 1.0
    if cfg.standardize_y:
        y_mean = float(y.mean())
        y_scale = float(y.std())
        y = (y - y_mean) / y_scale
    return TaskData(X=X, y=y, Z=Z), (y_mean, y_scale)


def conditional_moments(cfg: GenConfig, truth: TaskGroundTruth, y: float, y_mean=0.0, y_scale=None):
    """Mean and per-coordinate variance of ``z`` given standardised ``y``.

    Spurious coordinates are exact: ``gamma * y_raw`` plus noise. Causal
    coordinates use the best linear predictor from ``y`` and its residual
    variance, with the per-point noise variance averaged over the
    ``sigma_p`` range (the exact conditional is a scale mixture). Only the
    diagonal is returned. ``y_scale`` defaults to the population standard
    deviation of ``y_raw``.
    """
    causal = truth.c_star == 1
    w = truth.w_star
    s2 = cfg.causal_std**2
    lo, hi = truth.sigma_p_bounds
    noise_var = (lo * lo + lo * hi + hi * hi) / 3.0  # E[sigma_p^2], sigma_p ~ U(lo, hi)
    var_y = s2 * float(w @ w) + noise_var
    if y_scale is None:
        y_scale = np.sqrt(var_y)
    y_raw = y * y_scale + y_mean
    mean = np.where(causal, s2 * w * y_raw / var_y, truth.gamma_star * y_raw)
    var = np.where(causal, s2 - (s2 * w) ** 2 / var_y, cfg.sigma_s**2)
    return mean, var


def task_stream(cfg: GenConfig, t: int) -> SeededRng:
    return rng_fork(rng_fork(SeededRng(cfg.seed), STREAM_TASKS), t)


def generate_one(cfg: GenConfig, mixing: MixingFunction, t: int):
    rng = task_stream(cfg, t)
    truth = sample_task_truth(cfg, rng_fork(rng, 0))
    task, ystats = generate_task(cfg, truth, mixing, rng_fork(rng, 1))
    return truth, task, ystats


def generate_dataset(cfg: GenConfig, order=None):
    """Generate all tasks; ``order`` only changes the visiting order, never the data."""
    mixing = make_mixing(cfg, rng_fork(SeededRng(cfg.seed), STREAM_MIXING))
    order = range(cfg.n_tasks) if order is None else order
    results = {t: generate_one(cfg, mixing, t) for t in order}
    truths = [results[t][0] for t in range(cfg.n_tasks)]
    tasks = [results[t][1] for t in range(cfg.n_tasks)]
    ystats = [results[t][2] for t in range(cfg.n_tasks)]
    meta = {
        "source": "synthetic",
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "y_mean": [s[0] for s in ystats],
        "y_scale": [s[1] for s in ystats],
        "truth": [tr.to_dict() for tr in truths],
    }
    return Dataset(tasks=tasks, meta=meta), truths, mixing


def truth_arrays(truths):
    """Stack per-task truths into ``(C, W, Gamma)`` arrays of shape ``(T, d)``."""
    C = np.stack([t.c_star for t in truths])
    W = np.stack([t.w_star for t in truths])
    G = np.stack([t.gamma_star for t in truths])
    return C, W, G

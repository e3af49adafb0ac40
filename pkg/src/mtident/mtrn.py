"""Multi-task regression network: shared feature extractor, one linear head per task.

The prediction for task ``t`` is ``w_t . h(x)``. Training minimises the
Gaussian negative log-likelihood with a fixed noise scale, which is the
mean squared error up to an affine transform. Gradients are written out by
hand; the extractor is either linear or a one-hidden-layer ReLU MLP.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .numerics import LOG_2PI, Adam, NumericalDomainError, SeededRng, TrainConfig, rng_fork

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
EXTRACTOR_KINDS = ("linear", "mlp")


@dataclass
class ArchSpec:
    kind: str = "mlp"
    latent_dim: int = 5
    hidden: int | None = None  # defaults to 2 * input dim for the MLP

    def __post_init__(self):
        if self.kind not in EXTRACTOR_KINDS:
            raise ValueError(f"unknown extractor kind {self.kind!r}")

    def to_dict(self):
        return {"kind": self.kind, "latent_dim": self.latent_dim, "hidden": self.hidden}


@dataclass
class MtrnParams:
    kind: str
    tensors: dict  # extractor weights: W (linear) or W1, b1, W2, b2 (mlp)
    heads: np.ndarray  # (n_tasks, d)
    sigma_r: float = 1.0
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None

    @property
    def d(self) -> int:
        return self.heads.shape[1]

    @property
    def n_tasks(self) -> int:
        return self.heads.shape[0]

    def trainable(self) -> dict:
        out = dict(self.tensors)
        out["heads"] = self.heads
        return out

    def copy(self) -> "MtrnParams":
        return MtrnParams(
            self.kind,
            {k: v.copy() for k, v in self.tensors.items()},
            self.heads.copy(),
            self.sigma_r,
            None if self.x_mean is None else self.x_mean.copy(),
            None if self.x_scale is None else self.x_scale.copy(),
        )

    def to_dict(self) -> dict:
        arrays = dict(self.tensors)
        arrays["heads"] = self.heads
        if self.x_mean is not None:
            arrays["x_mean"] = self.x_mean
            arrays["x_scale"] = self.x_scale
        return {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "sigma_r": self.sigma_r,
            "tensors": {
                k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in arrays.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MtrnParams":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported mtrn checkpoint version {d.get('format_version')}")
        arrays = {
            k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
            for k, v in d["tensors"].items()
        }
        heads = arrays.pop("heads")
        x_mean = arrays.pop("x_mean", None)
        x_scale = arrays.pop("x_scale", None)
        return cls(d["kind"], arrays, heads, float(d["sigma_r"]), x_mean, x_scale)


def init_params(arch: ArchSpec, in_dim: int, n_tasks: int, rng: SeededRng, sigma_r=1.0) -> MtrnParams:
    d = arch.latent_dim

    def glorot(fan_out, fan_in):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_out, fan_in))

    if arch.kind == "linear":
        tensors = {"W": glorot(d, in_dim)}
    else:
        hidden = arch.hidden or 2 * in_dim
        tensors = {
            "W1": glorot(hidden, in_dim),
            "b1": np.zeros(hidden),
            "W2": glorot(d, hidden),
            "b2": np.zeros(d),
        }
    heads = glorot(n_tasks, d)
    return MtrnParams(arch.kind, tensors, heads, sigma_r)


def _normalise(params: MtrnParams, X: np.ndarray) -> np.ndarray:
    if params.x_mean is None:
        return X
    return (X - params.x_mean) / params.x_scale


def _forward(params: MtrnParams, Xn: np.ndarray):
    p = params.tensors
    if params.kind == "linear":
        return Xn @ p["W"].T, None
    pre = Xn @ p["W1"].T + p["b1"]
    return np.maximum(pre, 0.0) @ p["W2"].T + p["b2"], pre


def features(params: MtrnParams, X) -> np.ndarray:
    """Representation ``h(x)`` for one input vector or a batch of rows."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    H, _ = _forward(params, _normalise(params, np.atleast_2d(X)))
    return H[0] if single else H


def predict(params: MtrnParams, X, t) -> np.ndarray:
    """``w_t . h(x)``; ``t`` may be a scalar or one task index per row."""
    t_arr = np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr >= params.n_tasks):
        raise IndexError(f"task index out of range for {params.n_tasks} tasks")
    H = features(params, X)
    if H.ndim == 1:
        return float(H @ params.heads[int(t)])
    return np.einsum("ij,ij->i", H, params.heads[np.broadcast_to(t_arr, (H.shape[0],))])


def _loss_and_grad(params: MtrnParams, Xb, tb, yb, need_grad=True):
    """Mean Gaussian NLL over a batch and its gradient w.r.t. trainable arrays."""
    Xn = _normalise(params, Xb)
    H, pre = _forward(params, Xn)
    Wt = params.heads[tb]
    resid = np.einsum("ij,ij->i", H, Wt) - yb
    s2 = params.sigma_r**2
    n = yb.shape[0]
    loss = 0.5 * (LOG_2PI + math.log(s2)) + float(resid @ resid) / (2.0 * s2 * n)
    if not need_grad:
        return loss, None
    r = resid / (s2 * n)
    grads = {}
    g_heads = np.zeros_like(params.heads)
    np.add.at(g_heads, tb, r[:, None] * H)
    grads["heads"] = g_heads
    dH = r[:, None] * Wt
    p = params.tensors
    if params.kind == "linear":
        grads["W"] = dH.T @ Xn
    else:
        act = np.maximum(pre, 0.0)
        grads["W2"] = dH.T @ act
        grads["b2"] = dH.sum(axis=0)
        dpre = (dH @ p["W2"]) * (pre > 0)
        grads["W1"] = dpre.T @ Xn
        grads["b1"] = dpre.sum(axis=0)
    return loss, grads


def nll(params: MtrnParams, dataset: Dataset) -> float:
    """Mean over all rows of ``-log N(y | w_t . h(x), sigma_r^2)``."""
    X, rows, tasks, y = dataset.flatten()
    return nll_arrays(params, X, rows, tasks, y)


def nll_arrays(params, X, rows, tasks, y, chunk=65536) -> float:
    total = 0.0
    for s in range(0, len(y), chunk):
        sl = slice(s, s + chunk)
        loss, _ = _loss_and_grad(params, X[rows[sl]], tasks[sl], y[sl], need_grad=False)
        total += loss * len(y[sl])
    return total / len(y)


@dataclass
class TrainingTrace:
    epoch: list = field(default_factory=list)
    train_nll: list = field(default_factory=list)
    val_nll: list = field(default_factory=list)
    best_epoch: int = 0

    def to_dict(self):
        return {
            "epoch": self.epoch,
            "train_nll": self.train_nll,
            "val_nll": self.val_nll,
            "best_epoch": self.best_epoch,
        }


def holdout_split(tasks: np.ndarray, n_tasks: int, rng: SeededRng, frac: float = 0.1):
    """Boolean mask selecting ``frac`` of each task's rows for validation."""
    is_val = np.zeros(tasks.shape[0], dtype=bool)
    for t in range(n_tasks):
        idx = np.flatnonzero(tasks == t)
        k = int(round(frac * idx.size))
        if k and idx.size > 1:
            is_val[idx[rng_fork(rng, t).permutation(idx.size)[:k]]] = True
    return is_val


def train(
    dataset: Dataset,
    arch: ArchSpec,
    cfg: TrainConfig,
    standardize_inputs: bool = True,
    sigma_r: float = 1.0,
    val_frac: float = 0.1,
):
    """Fit by mini-batch Adam on the NLL, early-stopping on a per-task holdout.

    Returns ``(params, trace)``; ``params`` are the weights from the epoch
    with the lowest validation loss.
    """
    if dataset.n_tasks < 1:
        raise ValueError("dataset has no tasks")
    X, rows, tasks, y = dataset.flatten()
    root = SeededRng(cfg.seed)
    params = init_params(arch, X.shape[1], dataset.n_tasks, rng_fork(root, 0), sigma_r)
    if standardize_inputs:
        scale = X.std(axis=0)
        params.x_mean = X.mean(axis=0)
        params.x_scale = np.where(scale > 0, scale, 1.0)

    is_val = holdout_split(tasks, dataset.n_tasks, rng_fork(root, 1), val_frac)
    tr_idx = np.flatnonzero(~is_val)
    va_idx = np.flatnonzero(is_val)
    arrays = params.trainable()
    opt = Adam(arrays, lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    params.heads = arrays["heads"]

    def evaluate(idx):
        if idx.size == 0:
            return float("nan")
        return nll_arrays(params, X, rows[idx], tasks[idx], y[idx])

    trace = TrainingTrace()
    trace.epoch.append(0)
    trace.train_nll.append(evaluate(tr_idx))
    trace.val_nll.append(evaluate(va_idx))
    best_val = trace.val_nll[-1] if va_idx.size else trace.train_nll[-1]
    best = params.copy()
    stale = 0
    shuffle_rng = rng_fork(root, 2)
    for epoch in range(1, cfg.max_epochs + 1):
        opt.lr = cfg.lr_at(epoch - 1)
        order = tr_idx[rng_fork(shuffle_rng, epoch).permutation(tr_idx.size)]
        for b, s in enumerate(range(0, order.size, cfg.batch_size)):
            bi = order[s : s + cfg.batch_size]
            loss, grads = _loss_and_grad(params, X[rows[bi]], tasks[bi], y[bi])
            if not math.isfinite(loss):
                raise NumericalDomainError(f"non-finite loss at epoch {epoch}, batch {b}")
            opt.step(grads)
        trace.epoch.append(epoch)
        trace.train_nll.append(evaluate(tr_idx))
        trace.val_nll.append(evaluate(va_idx))
        current = trace.val_nll[-1] if va_idx.size else trace.train_nll[-1]
        if not math.isfinite(current):
            raise NumericalDomainError(f"non-finite loss at epoch {epoch} (evaluation)")
        if current < best_val:
            best_val, best, stale = current, params.copy(), 0
            trace.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                log.info("early stop at epoch %d (best %d)", epoch, trace.best_epoch)
                break
        log.debug("epoch %d train %.5f val %.5f", epoch, trace.train_nll[-1], trace.val_nll[-1])
    return best, trace


def dataset_features(params: MtrnParams, dataset: Dataset, chunk=65536):
    """Representations for every flattened row, with matching task ids and targets."""
    X, rows, tasks, y = dataset.flatten()
    if dataset.shared_design:
        Hx = np.concatenate([features(params, X[s : s + chunk]) for s in range(0, X.shape[0], chunk)])
        return Hx[rows], tasks, y
    H = np.concatenate([features(params, X[s : s + chunk]) for s in range(0, X.shape[0], chunk)])
    return H[rows], tasks, y


def numerical_rank(M: np.ndarray, rtol: float = 1e-8):
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0, s
    return int(np.sum(s > rtol * s[0])), s


def check_head_rank(params: MtrnParams, W_star: np.ndarray | None = None) -> dict:
    """Numerical rank of the learned heads (and of true weights if given).

    Warns when fewer than ``d`` independent heads exist, in which case the
    linear identifiability guarantee does not apply.
    """
    d = params.d
    rank, s = numerical_rank(params.heads)
    out = {
        "rank": rank,
        "latent_dim": d,
        "condition": float(s[0] / s[-1]) if s[-1] > 0 else float("inf"),
        "singular_values": s.tolist(),
    }
    if rank < d:
        warnings.warn(f"learned heads have rank {rank} < latent dim {d}", RuntimeWarning)
    if W_star is not None:
        r_star, s_star = numerical_rank(np.asarray(W_star))
        out["rank_true"] = r_star
        out["condition_true"] = float(s_star[0] / s_star[-1]) if s_star[-1] > 0 else float("inf")
        if r_star < W_star.shape[1]:
            warnings.warn(f"true heads have rank {r_star} < {W_star.shape[1]}", RuntimeWarning)
    return out

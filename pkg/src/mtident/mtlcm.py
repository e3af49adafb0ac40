"""Multi-task linear causal model over stage-one representations.

Given a representation ``h`` of an input with target ``y`` in task ``t``,
the model posits latents ``z`` with a factorised conditional prior

    z | y, t ~ N(a_t, diag(lam_t)),  a_t = y * gamma_t * (1 - c_t),
                                     lam_t = sigma_s^2 (1 - c_t) + c_t

and a linear Gaussian observation ``h = A z + N(0, sigma_o^2 I)``. The
latents integrate out exactly, so ``h | y, t ~ N(y A b_t, A diag(lam_t) A^T +
sigma_o^2 I)`` with ``b_t = gamma_t * (1 - c_t)``. Training maximises the
mean of that log density over all rows; the indicators ``c_t`` are kept soft
(logistic of free logits) during training and thresholded for reporting.

Because the density only depends on the rows of a task through
``sum h h^T``, ``sum y h``, ``sum y^2`` and the row count, the objective and
its gradient are evaluated from those per-task statistics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    LOG_2PI,
    Adam,
    NumericalDomainError,
    SeededRng,
    TrainConfig,
    batched_cholesky,
    gaussian_logpdf,
    logistic,
)

log = logging.getLogger(__name__)

MAX_A_CONDITION = 1e10
FORMAT_VERSION = 1


@dataclass
class MtlcmParams:
    A: np.ndarray
    c_logits: np.ndarray
    gamma: np.ndarray
    sigma_s: float = 0.1
    sigma_o: float = 0.01

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.c_logits.shape[0]

    @property
    def c_soft(self) -> np.ndarray:
        return logistic(self.c_logits)

    def copy(self) -> "MtlcmParams":
        return MtlcmParams(
            self.A.copy(), self.c_logits.copy(), self.gamma.copy(), self.sigma_s, self.sigma_o
        )

    def condition(self) -> float:
        return float(np.linalg.cond(self.A))

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "d": self.d,
            "n_tasks": self.n_tasks,
            "sigma_s": self.sigma_s,
            "sigma_o": self.sigma_o,
            "A": {"shape": list(self.A.shape), "data": self.A.ravel().tolist()},
            "c_logits": {"shape": list(self.c_logits.shape), "data": self.c_logits.ravel().tolist()},
            "gamma": {"shape": list(self.gamma.shape), "data": self.gamma.ravel().tolist()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MtlcmParams":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported mtlcm checkpoint version {d.get('format_version')}")

        def arr(key):
            return np.asarray(d[key]["data"], dtype=np.float64).reshape(d[key]["shape"])

        return cls(arr("A"), arr("c_logits"), arr("gamma"), float(d["sigma_s"]), float(d["sigma_o"]))


@dataclass
class PriorMoments:
    a: np.ndarray
    lam: np.ndarray  # diagonal of the prior covariance


def prior_moments(params: MtlcmParams, t: int, y: float, hard: bool = False) -> PriorMoments:
    c = params.c_soft[t]
    if hard:
        c = (c >= 0.5).astype(np.float64)
    a = y * params.gamma[t] * (1.0 - c)
    lam = params.sigma_s**2 * (1.0 - c) + c
    return PriorMoments(a=a, lam=lam)


def natural_params(pm: PriorMoments) -> np.ndarray:
    """Exponential-family natural parameters ``[a / lam ; -lam / 2]``."""
    return np.concatenate([pm.a / pm.lam, -0.5 * pm.lam])


def marginal_moments(params: MtlcmParams, y: float, t: int):
    c = params.c_soft[t]
    b = params.gamma[t] * (1.0 - c)
    lam = params.sigma_s**2 * (1.0 - c) + c
    mu = y * (params.A @ b)
    Sigma = (params.A * lam) @ params.A.T + params.sigma_o**2 * np.eye(params.d)
    return mu, 0.5 * (Sigma + Sigma.T)


def marginal_loglik(params: MtlcmParams, h, y: float, t: int) -> float:
    """log p(h | y, t) with the latents integrated out."""
    if not 0 <= t < params.n_tasks:
        raise IndexError(f"task {t} out of range for {params.n_tasks} tasks")
    mu, Sigma = marginal_moments(params, y, t)
    return gaussian_logpdf(h, mu, Sigma)


@dataclass
class TaskStats:
    """Per-task sufficient statistics of ``(h, y)`` rows."""

    n: np.ndarray  # (T,)
    Shh: np.ndarray  # (T, d, d)
    shy: np.ndarray  # (T, d)
    syy: np.ndarray  # (T,)

    @property
    def total(self) -> float:
        return float(self.n.sum())


def task_stats(H: np.ndarray, y: np.ndarray, task_idx: np.ndarray, n_tasks: int) -> TaskStats:
    d = H.shape[1]
    n = np.bincount(task_idx, minlength=n_tasks).astype(np.float64)
    Shh = np.zeros((n_tasks, d, d))
    shy = np.zeros((n_tasks, d))
    syy = np.zeros(n_tasks)
    order = np.argsort(task_idx, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(n.astype(np.int64))])
    Hs, ys = H[order], y[order]
    for t in range(n_tasks):
        sl = slice(bounds[t], bounds[t + 1])
        Ht, yt = Hs[sl], ys[sl]
        Shh[t] = Ht.T @ Ht
        shy[t] = yt @ Ht
        syy[t] = yt @ yt
    return TaskStats(n, Shh, shy, syy)


def objective_and_grad(params: MtlcmParams, stats: TaskStats, need_grad: bool = True):
    """Mean marginal log-likelihood over all rows, and its gradient.

    Returns ``(value, grads)`` where ``grads`` maps ``A``, ``c_logits`` and
    ``gamma`` to arrays of their shapes (``None`` when ``need_grad`` is false).
    """
    A = params.A
    d = A.shape[0]
    c = params.c_soft
    one_c = 1.0 - c
    s2 = params.sigma_s**2
    b = params.gamma * one_c  # (T, d)
    lam = s2 * one_c + c  # (T, d)
    m = b @ A.T  # (T, d)  per-task mean direction, mu = y * m
    Sigma = (A * lam[:, None, :]) @ A.T + params.sigma_o**2 * np.eye(d)
    L = batched_cholesky(Sigma, name="marginal covariance")
    logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    Linv = np.linalg.solve(L, np.broadcast_to(np.eye(d), Sigma.shape))
    Sinv = np.swapaxes(Linv, 1, 2) @ Linv

    # Scatter of residuals h - y m, summed over the rows of each task.
    cross = m[:, :, None] * stats.shy[:, None, :]
    S = stats.Shh - cross - np.swapaxes(cross, 1, 2) + stats.syy[:, None, None] * (m[:, :, None] * m[:, None, :])
    quad = (Sinv * S).sum(axis=(1, 2))
    ll = -0.5 * (stats.n * (d * LOG_2PI + logdet) + quad)
    N = stats.total
    value = float(ll.sum() / N)
    if not np.isfinite(value):
        raise NumericalDomainError("marginal log-likelihood is not finite")
    if not need_grad:
        return value, None

    G = -0.5 * (stats.n[:, None, None] * Sinv - Sinv @ S @ Sinv)
    g_m = (Sinv @ (stats.shy - stats.syy[:, None] * m)[:, :, None])[:, :, 0]

    GA = G @ A
    grad_A = 2.0 * (GA * lam[:, None, :]).sum(axis=0) + g_m.T @ b
    grad_lam = (A[None] * GA).sum(axis=1)
    grad_b = g_m @ A
    grad_gamma = grad_b * one_c
    grad_c = -grad_b * params.gamma + grad_lam * (1.0 - s2)
    grad_logits = grad_c * c * one_c
    grads = {"A": grad_A / N, "c_logits": grad_logits / N, "gamma": grad_gamma / N}
    return value, grads


def objective(params: MtlcmParams, H: np.ndarray, y: np.ndarray, task_idx: np.ndarray) -> float:
    stats = task_stats(H, y, task_idx, params.n_tasks)
    return objective_and_grad(params, stats, need_grad=False)[0]


HARD_LOGIT = 12.0


def _hard_task_loglik(A, c, sigma_s, sigma_o, n, Shh, shy, syy):
    """Log-likelihood of one task under hard indicators ``c``, with the
    spurious shifts profiled out by generalised least squares.

    Returns ``(loglik, gamma)``; ``gamma`` is zero on causal coordinates.
    """
    d = A.shape[0]
    lam = np.where(c, 1.0, sigma_s**2)
    Sigma = (A * lam) @ A.T + sigma_o**2 * np.eye(d)
    L = np.linalg.cholesky(Sigma)
    Sinv = np.linalg.inv(Sigma)
    gamma = np.zeros(d)
    spur = np.flatnonzero(~c)
    if spur.size and syy > 0:
        As = A[:, spur]
        gamma[spur] = np.linalg.solve(syy * As.T @ Sinv @ As, As.T @ Sinv @ shy)
    m = A @ gamma
    S = Shh - np.outer(m, shy) - np.outer(shy, m) + syy * np.outer(m, m)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    return -0.5 * (n * (d * LOG_2PI + logdet) + np.sum(Sinv * S)), gamma


def refine_hard(params: MtlcmParams, stats: TaskStats, max_sweeps: int = 50) -> MtlcmParams:
    """Snap soft indicators to binary values that maximise the hard-indicator likelihood.

    With ``A`` held fixed, each task starts from the thresholded soft
    indicators and greedily flips the single coordinate that most raises its
    log-likelihood until no flip helps. Spurious shifts are re-estimated in
    closed form for every candidate. The result stores saturated logits, so
    :func:`indicators` reports the chosen values; ``A`` is not modified.
    """
    out = params.copy()
    A = params.A
    for t in range(params.n_tasks):
        def score(c):
            return _hard_task_loglik(A, c, params.sigma_s, params.sigma_o,
                                     stats.n[t], stats.Shh[t], stats.shy[t], stats.syy[t])

        c = params.c_soft[t] >= 0.5
        best, gamma = score(c)
        for _ in range(max_sweeps):
            flips = []
            for j in range(A.shape[0]):
                c2 = c.copy()
                c2[j] = not c2[j]
                flips.append((score(c2), c2))
            (val, g2), c2 = max(flips, key=lambda item: item[0][0])
            if val <= best:
                break
            best, gamma, c = val, g2, c2
        out.c_logits[t] = np.where(c, HARD_LOGIT, -HARD_LOGIT)
        # Causal coordinates keep their soft-phase shift; it is multiplied by ~0.
        out.gamma[t] = np.where(c, params.gamma[t], gamma)
    return out


@dataclass
class TrainingTrace:
    step: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    strong_mcc: list = field(default_factory=list)

    def to_dict(self):
        out = {"step": self.step, "objective": self.objective}
        if self.strong_mcc:
            out["strong_mcc"] = self.strong_mcc
        return out


def init_params(d: int, n_tasks: int, rng: SeededRng, sigma_s=0.1, sigma_o=0.01) -> MtlcmParams:
    A = np.eye(d) + 0.01 * rng.normal(size=(d, d))
    return MtlcmParams(A, np.zeros((n_tasks, d)), np.zeros((n_tasks, d)), sigma_s, sigma_o)


def train(
    H: np.ndarray,
    y: np.ndarray,
    task_idx: np.ndarray,
    n_tasks: int,
    cfg: TrainConfig,
    rng: SeededRng,
    sigma_s: float = 0.1,
    sigma_o: float = 0.01,
    init: MtlcmParams | None = None,
    train_task_vars: bool = True,
    tol: float = 1e-10,
    trace_every: int = 10,
    monitor=None,
    precond: np.ndarray | None = None,
):
    """Maximise the mean marginal log-likelihood with full-batch Adam.

    ``train_task_vars=False`` keeps ``c_logits`` and ``gamma`` at their
    values in ``init`` and only fits ``A``. Training stops after
    ``cfg.max_epochs`` steps, or earlier once the objective has not improved
    by more than ``tol`` for ``cfg.patience`` consecutive steps.
    ``monitor(params)``, if given, is recorded into the trace as strong MCC.

    ``precond`` is a fixed invertible matrix ``P``; Adam then works on ``B``
    with ``A = P @ B``. The likelihood is unchanged, only the geometry the
    optimiser sees. A fresh initialisation starts from ``B = I + noise``.
    """
    d = H.shape[1]
    params = init.copy() if init is not None else init_params(d, n_tasks, rng, sigma_s, sigma_o)
    stats = task_stats(H, y, task_idx, n_tasks)
    if precond is None:
        arrays = {"A": params.A}
    else:
        precond = np.asarray(precond, dtype=np.float64)
        B = params.A.copy() if init is None else np.linalg.solve(precond, params.A)
        params.A = precond @ B
        arrays = {"B": B}
    if train_task_vars:
        arrays.update(c_logits=params.c_logits, gamma=params.gamma)
    opt = Adam(arrays, lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    trace = TrainingTrace()
    best, stale = -np.inf, 0
    for step in range(cfg.max_epochs):
        value, grads = objective_and_grad(params, stats)
        if step % trace_every == 0:
            cond = params.condition()
            if cond > MAX_A_CONDITION:
                raise NumericalDomainError(f"A became ill-conditioned (cond={cond:.3g}) at step {step}")
            trace.step.append(step)
            trace.objective.append(value)
            if monitor is not None:
                trace.strong_mcc.append(float(monitor(params)))
        if value > best + tol:
            best, stale = value, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
        opt.lr = cfg.lr_at(step)
        if precond is not None:
            grads = dict(grads, B=precond.T @ grads["A"])
        opt.step({k: -grads[k] for k in arrays})
        if precond is not None:
            params.A = precond @ arrays["B"]
    value, _ = objective_and_grad(params, stats, need_grad=False)
    cond = params.condition()
    if cond > MAX_A_CONDITION:
        raise NumericalDomainError(f"A became ill-conditioned (cond={cond:.3g})")
    trace.step.append(step + 1)
    trace.objective.append(value)
    if monitor is not None:
        trace.strong_mcc.append(float(monitor(params)))
    log.debug("mtlcm stopped after %d steps, objective %.6f", step + 1, value)
    return params, trace


def train_restarts(H, y, task_idx, n_tasks, cfg: TrainConfig, rng: SeededRng, n_restarts: int = 3, **kw):
    """Run :func:`train` from ``n_restarts`` independent initialisations.

    Returns ``(params, trace, objectives)`` for the run with the highest
    final objective. Each restart draws its initial ``A`` from its own
    forked stream.
    """
    from .numerics import rng_fork

    best = None
    finals = []
    for r in range(n_restarts):
        params, trace = train(H, y, task_idx, n_tasks, cfg, rng_fork(rng, r), **kw)
        finals.append(trace.objective[-1])
        if best is None or finals[-1] > best[1].objective[-1]:
            best = (params, trace)
    return best[0], best[1], finals


def center_per_task(H: np.ndarray, task_idx: np.ndarray, n_tasks: int) -> np.ndarray:
    """Subtract each task's mean representation.

    The prior has no intercept, so any per-task offset of ``h`` (for example
    from centring ``y`` within a task) would otherwise be explained by the
    spurious shift ``y * gamma``. Centring profiles that offset out.
    """
    counts = np.bincount(task_idx, minlength=n_tasks).astype(np.float64)
    sums = np.zeros((n_tasks, H.shape[1]))
    np.add.at(sums, task_idx, H)
    means = sums / np.maximum(counts, 1.0)[:, None]
    return H - means[task_idx]


def covariance_sqrt(H: np.ndarray) -> np.ndarray:
    """Symmetric square root of the sample covariance of ``H``."""
    w, V = np.linalg.eigh(np.cov(H, rowvar=False))
    return (V * np.sqrt(np.clip(w, 1e-12 * w.max(), None))) @ V.T


def fit(H, y, task_idx, n_tasks, cfg: TrainConfig, rng: SeededRng, sigma_s=0.1, sigma_o=0.01,
        n_restarts: int = 1, hard_refine: bool = False, **kw):
    """Full stage-two fit: centring, preconditioned restarts, optional hard polish.

    ``A`` is optimised as ``P @ B`` with ``P`` the covariance square root of
    ``H``, which makes the problem roughly isotropic for Adam whatever the
    scale and conditioning of the representation. Returns
    ``(params, trace, restart_objectives)``.
    """
    Hc = center_per_task(H, task_idx, n_tasks)
    P = covariance_sqrt(H)
    params, trace, finals = train_restarts(
        Hc, y, task_idx, n_tasks, cfg, rng, n_restarts=n_restarts,
        sigma_s=sigma_s, sigma_o=sigma_o, precond=P, **kw,
    )
    if hard_refine:
        params = refine_hard(params, task_stats(Hc, y, task_idx, n_tasks))
    return params, trace, finals


def recover_latents(params: MtlcmParams, H: np.ndarray) -> np.ndarray:
    """Solve ``A z = h`` for each row of ``H`` (LU solve, no explicit inverse)."""
    H = np.asarray(H, dtype=np.float64)
    single = H.ndim == 1
    try:
        Z = np.linalg.solve(params.A, np.atleast_2d(H).T).T
    except np.linalg.LinAlgError as exc:
        raise NumericalDomainError("A is singular") from exc
    if params.condition() > MAX_A_CONDITION:
        raise NumericalDomainError(f"A is numerically singular (cond={params.condition():.3g})")
    return Z[0] if single else Z


def indicators(params: MtlcmParams, threshold: float = 0.5) -> np.ndarray:
    return (params.c_soft >= threshold).astype(np.int64)


@dataclass
class VariabilityReport:
    L: np.ndarray
    invertible: bool
    condition: float
    selected: list

    def to_dict(self):
        return {
            "invertible": self.invertible,
            "condition": self.condition,
            "selected": self.selected,
            "sigma_min": float(np.linalg.svd(self.L, compute_uv=False).min()),
        }


def variability_check(points: list[PriorMoments], tol: float = 1e-8) -> VariabilityReport:
    """Search the supplied conditioning points for an invertible difference matrix.

    The first point is the reference; ``2d`` further points are picked
    greedily, each time taking the candidate that maximises the smallest
    singular value of the columns chosen so far.
    """
    if not points:
        raise ValueError("no points supplied")
    d = points[0].a.shape[0]
    k = 2 * d
    if len(points) < k + 1:
        raise ValueError(f"need at least {k + 1} points for d={d}, got {len(points)}")
    etas = np.stack([natural_params(p) for p in points])
    diffs = etas[1:] - etas[0]
    chosen: list[int] = []
    for _ in range(k):
        best_j, best_s = None, -1.0
        for j in range(diffs.shape[0]):
            if j in chosen:
                continue
            cols = diffs[chosen + [j]].T
            s = np.linalg.svd(cols, compute_uv=False).min()
            if s > best_s:
                best_j, best_s = j, s
        chosen.append(best_j)
    L = diffs[chosen].T
    sv = np.linalg.svd(L, compute_uv=False)
    invertible = bool(sv[0] > 0 and sv[-1] > tol * sv[0])
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    return VariabilityReport(L=L, invertible=invertible, condition=cond, selected=[0] + [j + 1 for j in chosen])


def variability_points(params_or_truth, ys=(-1.0, 1.0), hard=True) -> list[PriorMoments]:
    """Prior moments at a few representative ``y`` values for every task.

    Accepts either fitted :class:`MtlcmParams` or a ``(C, Gamma, sigma_s)``
    tuple of generator ground truth.
    """
    pts = []
    if isinstance(params_or_truth, MtlcmParams):
        for t in range(params_or_truth.n_tasks):
            for y in ys:
                pts.append(prior_moments(params_or_truth, t, y, hard=hard))
        return pts
    C, G, sigma_s = params_or_truth
    for t in range(C.shape[0]):
        c = C[t].astype(np.float64)
        for y in ys:
            pts.append(PriorMoments(a=y * G[t] * (1.0 - c), lam=sigma_s**2 * (1.0 - c) + c))
    return pts


def select_sigmas(
    H, y, task_idx, n_tasks, cfg: TrainConfig, rng: SeededRng, grid_s, grid_o, holdout=0.2, **kw
):
    """Pick ``(sigma_s, sigma_o)`` from a grid by held-out marginal likelihood.

    Returns ``(best_pair, scores)`` where ``scores`` maps each pair to its
    held-out mean log-likelihood. Extra keyword arguments go to :func:`train`.
    """
    from .numerics import rng_fork

    perm_rng = rng_fork(rng, 0)
    is_val = np.zeros(len(y), dtype=bool)
    for t in range(n_tasks):
        rows = np.flatnonzero(task_idx == t)
        n_val = max(1, int(round(holdout * len(rows))))
        is_val[rows[perm_rng.permutation(len(rows))[:n_val]]] = True
    scores = {}
    for s in grid_s:
        for o in grid_o:
            p, _ = train(
                H[~is_val], y[~is_val], task_idx[~is_val], n_tasks, cfg, rng_fork(rng, 1),
                sigma_s=s, sigma_o=o, **kw,
            )
            scores[(s, o)] = objective(p, H[is_val], y[is_val], task_idx[is_val])
    best = max(scores, key=scores.get)
    return best, scores

"""Identifiability scores: strong/weak/pairwise MCC and indicator accuracy."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np

log = logging.getLogger(__name__)

CCA_RIDGE = 1e-8


def corr_matrix(Z1: np.ndarray, Z2: np.ndarray) -> np.ndarray:
    """Pearson correlation between every column of ``Z1`` and every column of ``Z2``.

    Entries involving a constant column are set to 0.
    """
    Z1 = np.asarray(Z1, dtype=np.float64)
    Z2 = np.asarray(Z2, dtype=np.float64)
    if Z1.ndim != 2 or Z2.ndim != 2 or Z1.shape[0] != Z2.shape[0]:
        raise ValueError(f"shape mismatch: {Z1.shape} vs {Z2.shape}")
    if Z1.shape[0] < 2:
        raise ValueError("need at least two rows")
    A = Z1 - Z1.mean(axis=0)
    B = Z2 - Z2.mean(axis=0)
    na = np.sqrt((A * A).sum(axis=0))
    nb = np.sqrt((B * B).sum(axis=0))
    # A column whose spread is at round-off level relative to its magnitude is constant.
    dead_a = na <= 1e-12 * np.maximum(np.abs(Z1).max(axis=0), 1e-300) * np.sqrt(Z1.shape[0])
    dead_b = nb <= 1e-12 * np.maximum(np.abs(Z2).max(axis=0), 1e-300) * np.sqrt(Z2.shape[0])
    if dead_a.any() or dead_b.any():
        log.warning("constant columns scored as zero correlation: %s / %s",
                    np.flatnonzero(dead_a).tolist(), np.flatnonzero(dead_b).tolist())
    na = np.where(dead_a, 1.0, na)
    nb = np.where(dead_b, 1.0, nb)
    C = (A.T @ B) / np.outer(na, nb)
    C[dead_a, :] = 0.0
    C[:, dead_b] = 0.0
    return np.clip(C, -1.0, 1.0)


def _hungarian_duals(cost: np.ndarray):
    """Shortest-augmenting-path Hungarian method. Returns ``(assignment, u, v)``."""
    n = cost.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row matched to column j (1-based, 0 = none)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = cost[i0 - 1] - u[i0] - v[1:]
            cols = np.flatnonzero(free[1:]) + 1
            better = cur[cols - 1] < minv[cols]
            minv[cols[better]] = cur[cols - 1][better]
            way[cols[better]] = j0
            j1 = cols[np.argmin(minv[cols])]
            delta = minv[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assignment = np.empty(n, dtype=np.int64)
    assignment[p[1:] - 1] = np.arange(n)
    return assignment, u[1:], v[1:]


def _has_perfect_matching(adj: list[list[int]], rows: list[int], cols_taken: set) -> bool:
    match: dict[int, int] = {}

    def augment(r, seen):
        for c in adj[r]:
            if c in cols_taken or c in seen:
                continue
            seen.add(c)
            if c not in match or augment(match[c], seen):
                match[c] = r
                return True
        return False

    return all(augment(r, set()) for r in rows)


def hungarian(cost) -> np.ndarray:
    """Minimum-cost perfect assignment ``perm`` (row ``i`` -> column ``perm[i]``).

    Among optimal assignments the lexicographically smallest ``perm`` is
    returned. Optimal assignments are exactly the perfect matchings that use
    only edges with zero reduced cost under the optimal duals, so ties are
    resolved by a greedy search over that tight-edge graph.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost must be square, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost has non-finite entries")
    n = cost.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    _, u, v = _hungarian_duals(cost)
    reduced = cost - u[:, None] - v[None, :]
    tol = 1e-12 * max(1.0, float(np.abs(cost).max())) * n
    adj = [list(np.flatnonzero(reduced[i] <= tol)) for i in range(n)]
    perm = np.empty(n, dtype=np.int64)
    taken: set = set()
    for i in range(n):
        for c in adj[i]:
            if c in taken:
                continue
            if _has_perfect_matching(adj, list(range(i + 1, n)), taken | {c}):
                perm[i] = c
                taken.add(c)
                break
        else:  # pragma: no cover - duals guarantee a tight perfect matching
            raise RuntimeError("tight-edge graph lost its perfect matching")
    return perm


def mcc_strong(Z_rec, Z_ref):
    """Mean absolute correlation under the best one-to-one matching of dimensions.

    Returns ``(score, assignment, per_dimension)`` where ``assignment[i]`` is
    the column of ``Z_ref`` matched to column ``i`` of ``Z_rec``.
    """
    C = np.abs(corr_matrix(Z_rec, Z_ref))
    perm = hungarian(-C)
    per_dim = C[np.arange(C.shape[0]), perm]
    return float(per_dim.mean()), perm, per_dim


def _inv_sqrt(C: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(C)
    if w.min() <= 0:
        raise ValueError("covariance is rank deficient beyond the ridge")
    return (V / np.sqrt(w)) @ V.T


def cca_variates(H, Z_ref, ridge: float = CCA_RIDGE):
    """Canonical variates of ``H`` and ``Z_ref`` and their canonical correlations.

    Both blocks are centred and whitened (ridge added to each covariance) and
    the whitened cross-covariance is decomposed by SVD. Returns
    ``(H_variates, Z_variates, rho)`` with ``min(d_h, d_z)`` columns each;
    variate pair ``k`` has correlation ``rho[k]`` and is uncorrelated with
    every other pair.
    """
    H = np.asarray(H, dtype=np.float64)
    Z_ref = np.asarray(Z_ref, dtype=np.float64)
    n = H.shape[0]
    if Z_ref.shape[0] != n:
        raise ValueError(f"row mismatch: {H.shape} vs {Z_ref.shape}")
    if n <= max(H.shape[1], Z_ref.shape[1]):
        raise ValueError("need more rows than dimensions")
    Hc = H - H.mean(axis=0)
    Zc = Z_ref - Z_ref.mean(axis=0)
    Chh = Hc.T @ Hc / (n - 1) + ridge * np.eye(H.shape[1])
    Czz = Zc.T @ Zc / (n - 1) + ridge * np.eye(Z_ref.shape[1])
    Chz = Hc.T @ Zc / (n - 1)
    Wh = _inv_sqrt(Chh)
    Wz = _inv_sqrt(Czz)
    U, rho, Vt = np.linalg.svd(Wh @ Chz @ Wz, full_matrices=False)
    return Hc @ Wh @ U, Zc @ Wz @ Vt.T, rho


def mcc_weak(H, Z_ref, ridge: float = CCA_RIDGE) -> float:
    """MCC up to an invertible linear map.

    ``H`` and ``Z_ref`` are both projected onto their canonical bases, and the
    strong MCC between the paired canonical variates is returned. This is the
    mean canonical correlation.
    """
    Uh, Uz, _ = cca_variates(H, Z_ref, ridge)
    score, _, _ = mcc_strong(Uh, Uz)
    return score


def mcc_pairwise(latents: list, strong: bool = True):
    """Mean and std of MCC over all unordered pairs of runs."""
    if len(latents) < 2:
        raise ValueError("need at least two runs")
    shape = np.shape(latents[0])
    for z in latents:
        if np.shape(z) != shape:
            raise ValueError(f"shape mismatch: {np.shape(z)} vs {shape}")
    scores = []
    for a, b in combinations(range(len(latents)), 2):
        if strong:
            scores.append(mcc_strong(latents[a], latents[b])[0])
        else:
            scores.append(mcc_weak(latents[a], latents[b]))
    scores = np.asarray(scores)
    return float(scores.mean()), float(scores.std()), scores.tolist()


def indicator_accuracy(learned, truth) -> float:
    learned = np.asarray(learned)
    truth = np.asarray(truth)
    if learned.shape != truth.shape:
        raise ValueError(f"shape mismatch: {learned.shape} vs {truth.shape}")
    return float(np.mean(learned.astype(int) == truth.astype(int)))


def aligned_indicator_accuracy(learned, truth, assignment) -> float:
    """Indicator accuracy after mapping learned latent ``i`` to true latent ``assignment[i]``."""
    learned = np.asarray(learned)
    aligned = np.empty_like(learned)
    aligned[:, np.asarray(assignment)] = learned
    return indicator_accuracy(aligned, truth)


@dataclass
class EvalReport:
    weak_mcc: float | None = None
    strong_mcc: float | None = None
    indicator_accuracy: float | None = None
    per_dimension_correlations: list = field(default_factory=list)
    assignment: list = field(default_factory=list)
    variability: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("weak_mcc", "strong_mcc", "indicator_accuracy"):
            val = getattr(self, name)
            if val is not None and not -1e-12 <= val <= 1 + 1e-12:
                raise ValueError(f"{name}={val} outside [0, 1]")
        if self.assignment and sorted(self.assignment) != list(range(len(self.assignment))):
            raise ValueError("assignment is not a permutation")

    def to_dict(self):
        return asdict(self)

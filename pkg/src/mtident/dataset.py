"""Multi-task dataset container and its directory format.

A dataset directory holds ``meta.json`` plus one ``task_{i}.csv`` per task
with header ``z_0..z_{d-1}, y, x_0..x_{obs-1}`` (latent columns are absent
for real data). Floats are written with 17 significant digits so a
save/load round trip is bit exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


@dataclass
class TaskData:
    X: np.ndarray
    y: np.ndarray
    Z: np.ndarray | None = None

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.ndim != 1 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"inconsistent task shapes X{self.X.shape} y{self.y.shape}")
        if self.Z is not None and self.Z.shape[0] != self.y.shape[0]:
            raise ValueError(f"Z has {self.Z.shape[0]} rows, y has {self.y.shape[0]}")

    def __len__(self):
        return self.y.shape[0]


@dataclass
class Dataset:
    tasks: list[TaskData]
    meta: dict = field(default_factory=dict)

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def obs_dim(self) -> int:
        return self.tasks[0].X.shape[1]

    @property
    def has_latents(self) -> bool:
        return all(t.Z is not None for t in self.tasks)

    @property
    def shared_design(self) -> bool:
        """True when every task references one design matrix (real-data layout)."""
        first = self.tasks[0].X
        return all(t.X is first for t in self.tasks)

    def flatten(self):
        """Return ``(X, rows, tasks, y)``.

        ``X[rows[i]]`` is the input of flattened example ``i`` belonging to
        task ``tasks[i]``. Shared designs are not copied.
        """
        ys = np.concatenate([t.y for t in self.tasks])
        task_idx = np.concatenate(
            [np.full(len(t), i, dtype=np.int64) for i, t in enumerate(self.tasks)]
        )
        if self.shared_design:
            X = self.tasks[0].X
            rows = np.concatenate([np.arange(len(t)) for t in self.tasks])
        else:
            X = np.concatenate([t.X for t in self.tasks])
            rows = np.arange(X.shape[0])
        return X, rows, task_idx, ys

    def latents(self) -> np.ndarray:
        return np.concatenate([t.Z for t in self.tasks])


def _fmt(a: np.ndarray) -> list[str]:
    return [repr(float(v)) if np.isfinite(v) else str(float(v)) for v in a]


def save_dataset(ds: Dataset, path) -> Path:
    """Write ``ds`` to directory ``path`` (created if missing)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = dict(ds.meta)
    meta["format_version"] = FORMAT_VERSION
    meta["n_tasks"] = ds.n_tasks
    meta["has_latents"] = ds.has_latents
    meta["shared_design"] = ds.shared_design
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    for i, task in enumerate(ds.tasks):
        cols = []
        header = []
        if task.Z is not None:
            header += [f"z_{j}" for j in range(task.Z.shape[1])]
            cols.append(task.Z)
        header.append("y")
        cols.append(task.y[:, None])
        header += [f"x_{j}" for j in range(task.X.shape[1])]
        cols.append(task.X)
        block = np.hstack(cols)
        # repr() of a Python float is the shortest string that round-trips,
        # which never needs more than 17 significant digits.
        lines = [",".join(header)]
        lines += [",".join(_fmt(row)) for row in block]
        (path / f"task_{i}.csv").write_text("\n".join(lines) + "\n")
    return path


def load_dataset(path) -> Dataset:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format version {meta.get('format_version')}")
    shared = bool(meta.get("shared_design"))
    tasks = []
    for i in range(meta["n_tasks"]):
        fname = path / f"task_{i}.csv"
        with open(fname) as fh:
            header = fh.readline().strip().split(",")
        block = np.loadtxt(fname, delimiter=",", skiprows=1, ndmin=2, dtype=np.float64)
        zc = [k for k, h in enumerate(header) if h.startswith("z_")]
        xc = [k for k, h in enumerate(header) if h.startswith("x_")]
        yc = header.index("y")
        Z = block[:, zc].copy() if zc else None
        X = block[:, xc].copy()
        if shared and tasks:
            if not np.array_equal(X, tasks[0].X):
                raise ValueError(f"{fname}: design differs from task 0 in a shared-design dataset")
            X = tasks[0].X
        tasks.append(TaskData(X=X, y=block[:, yc].copy(), Z=Z))
    meta.pop("format_version", None)
    meta.pop("n_tasks", None)
    meta.pop("has_latents", None)
    meta.pop("shared_design", None)
    return Dataset(tasks=tasks, meta=meta)

"""Superconductivity tables to a shared-design multi-task dataset.

The public release ships two CSV files with the same row order:

* ``unique_m.csv``: per-material element counts (one column per element),
  plus ``critical_temp`` and the ``material`` formula string.
* ``train.csv``: ``number_of_elements``, eighty derived statistics of
  element properties, and ``critical_temp``.

Inputs are the element counts. Each derived statistic becomes one
regression task, all tasks sharing the same input rows.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset, TaskData
from .numerics import SeededRng, rng_fork

log = logging.getLogger(__name__)

N_ROWS = 21263
# Columns that are not element counts / not tasks.
FEATURE_DROP = ("critical_temp", "material")
TARGET_DROP = ("critical_temp", "number_of_elements")


class IngestError(ValueError):
    pass


@dataclass
class RealDatasetSpec:
    features_path: str
    targets_path: str
    n_expected_rows: int | None = N_ROWS
    standardize: bool = True
    sha256: dict | None = None  # optional {"features": hex, "targets": hex}

    def __post_init__(self):
        for p in (self.features_path, self.targets_path):
            if not Path(p).is_file():
                raise FileNotFoundError(p)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def read_numeric_csv(path, drop=()):
    """Parse a headed CSV into ``(columns, array)``, skipping ``drop`` columns.

    Any cell that is not a finite float raises :class:`IngestError` naming
    the file, the 1-based data row and the column.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        keep = [i for i, h in enumerate(header) if h not in drop]
        rows = []
        for r, record in enumerate(reader, start=1):
            if not record:
                continue
            if len(record) != len(header):
                raise IngestError(f"{path}: row {r} has {len(record)} cells, header has {len(header)}")
            vals = []
            for i in keep:
                try:
                    v = float(record[i])
                except ValueError:
                    v = float("nan")
                if not np.isfinite(v):
                    raise IngestError(f"{path}: row {r}, column {header[i]!r}: non-numeric value {record[i]!r}")
                vals.append(v)
            rows.append(vals)
    cols = [header[i] for i in keep]
    return cols, np.asarray(rows, dtype=np.float64).reshape(len(rows), len(cols))


def _standardize(M: np.ndarray):
    mean = M.mean(axis=0)
    scale = M.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return (M - mean) / scale, mean, scale


def load_superconductivity(spec: RealDatasetSpec) -> Dataset:
    if spec.sha256:
        for key, p in (("features", spec.features_path), ("targets", spec.targets_path)):
            want = spec.sha256.get(key)
            if want and file_sha256(p) != want:
                raise IngestError(f"{p}: content hash does not match the expected {key} hash")
    fcols, X = read_numeric_csv(spec.features_path, drop=FEATURE_DROP)
    tcols, Y = read_numeric_csv(spec.targets_path, drop=TARGET_DROP)
    if X.shape[0] != Y.shape[0]:
        raise IngestError(f"feature table has {X.shape[0]} rows, target table has {Y.shape[0]}")
    if spec.n_expected_rows is not None and X.shape[0] != spec.n_expected_rows:
        raise IngestError(f"expected {spec.n_expected_rows} rows, found {X.shape[0]}")

    Y, y_mean, y_scale = _standardize(Y)
    x_mean = np.zeros(X.shape[1])
    x_scale = np.ones(X.shape[1])
    if spec.standardize:
        X, x_mean, x_scale = _standardize(X)
    X.setflags(write=False)
    tasks = [TaskData(X=X, y=Y[:, j].copy()) for j in range(Y.shape[1])]
    meta = {
        "source": "superconductivity",
        "feature_columns": fcols,
        "target_columns": tcols,
        "dropped_target_columns": list(TARGET_DROP),
        "y_mean": y_mean.tolist(),
        "y_scale": y_scale.tolist(),
        "x_mean": x_mean.tolist(),
        "x_scale": x_scale.tolist(),
        "standardized_features": bool(spec.standardize),
    }
    log.info("loaded %d rows, %d features, %d tasks", X.shape[0], X.shape[1], len(tasks))
    return Dataset(tasks=tasks, meta=meta)


def subsample(dataset: Dataset, n_rows: int, n_tasks: int, rng: SeededRng) -> Dataset:
    """Uniform shared row subset and uniform task subset.

    Rows stay aligned across tasks. Requesting every row and every task
    returns the input order unchanged.
    """
    if not dataset.shared_design:
        raise ValueError("subsample needs a shared-design dataset")
    X = dataset.tasks[0].X
    N, T = X.shape[0], dataset.n_tasks
    if not (0 < n_rows <= N and 0 < n_tasks <= T):
        raise ValueError(f"requested {n_rows} rows / {n_tasks} tasks from {N} / {T}")
    rows = np.arange(N) if n_rows == N else np.sort(rng.choice(N, n_rows, replace=False))
    keep = np.arange(T) if n_tasks == T else np.sort(rng_fork(rng, 1).choice(T, n_tasks, replace=False))
    Xs = X[rows]
    Xs.setflags(write=False)
    tasks = [TaskData(X=Xs, y=dataset.tasks[t].y[rows].copy()) for t in keep]
    meta = dict(dataset.meta)
    meta["subsample"] = {"rows": int(n_rows), "row_ids": rows.tolist(), "task_ids": keep.tolist(), "seed": rng.seed}
    if "target_columns" in meta:
        meta["target_columns"] = [meta["target_columns"][t] for t in keep]
    return Dataset(tasks=tasks, meta=meta)

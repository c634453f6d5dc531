"""Dataset ingestion, train/validation/test splitting, synthetic problems."""

from __future__ import annotations

import csv
import datetime
from dataclasses import dataclass

import numpy as np

MIN_ROWS = 10


class DataError(ValueError):
    """Raised for malformed input data (with cell location when known)."""


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    provenance: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or self.y.ndim != 1 or self.X.shape[0] != self.y.shape[0]:
            raise DataError("X must be N x F and y length N")
        if self.X.shape[0] < MIN_ROWS:
            raise DataError(f"need at least {MIN_ROWS} rows, got {self.X.shape[0]}")
        if not np.isfinite(self.X).all() or not np.isfinite(self.y).all():
            raise DataError("dataset contains non-finite values")
        if np.var(self.y) <= 0:
            raise DataError("target variance must be positive")
        if len(self.feature_names) != self.X.shape[1]:
            raise DataError("feature_names must match the number of columns")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, rows: np.ndarray, tag: str = "subset") -> "Dataset":
        return Dataset(
            self.X[rows], self.y[rows], list(self.feature_names),
            provenance=f"{self.provenance}[{tag}]",
        )


def load_csv(
    path: str,
    target: str | int,
    date_to_day_of_year: tuple[str, ...] = (),
) -> Dataset:
    """Load a comma-separated, UTF-8, headered file into a Dataset.

    The target column is picked by name or index. Columns listed in
    date_to_day_of_year are parsed as ISO dates and replaced by the day of
    the year in [1, 366] (useful for daily time-stamped data). Parse errors
    name the offending row and column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if isinstance(target, int):
            if not 0 <= target < len(header):
                raise DataError(f"target column index {target} out of range")
            target_idx = target
        else:
            if target not in header:
                raise DataError(f"target column {target!r} not in header {header}")
            target_idx = header.index(target)
        date_cols = set()
        for name in date_to_day_of_year:
            if name not in header:
                raise DataError(f"date column {name!r} not in header")
            date_cols.add(header.index(name))
        rows: list[list[float]] = []
        for r, raw in enumerate(reader, start=2):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            if len(raw) != len(header):
                raise DataError(f"{path}: row {r} has {len(raw)} cells, expected {len(header)}")
            vals = []
            for c, cell in enumerate(raw):
                cell = cell.strip()
                if c in date_cols:
                    try:
                        day = datetime.date.fromisoformat(cell).timetuple().tm_yday
                    except ValueError:
                        raise DataError(
                            f"{path}: row {r}, column {header[c]!r}: bad date {cell!r}"
                        ) from None
                    vals.append(float(day))
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: row {r}, column {header[c]!r}: not a number: {cell!r}"
                    ) from None
                if not np.isfinite(v):
                    raise DataError(
                        f"{path}: row {r}, column {header[c]!r}: non-finite value {cell!r}"
                    )
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    data = np.array(rows, dtype=np.float64)
    y = data[:, target_idx]
    X = np.delete(data, target_idx, axis=1)
    names = [h for i, h in enumerate(header) if i != target_idx]
    return Dataset(X, y, names, provenance=path)


@dataclass(frozen=True)
class SplitPlan:
    master_seed: int
    test_fraction: float = 0.25
    folds: int = 5
    repeats: int = 6


@dataclass(frozen=True)
class SplitIndices:
    fold: int
    repeat: int
    run_seed: int
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


def run_seed_for(master_seed: int, fold: int, repeat: int) -> int:
    """Stable per-run seed; configs sharing a master seed share populations."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(1, fold, repeat))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_splits(d: Dataset, plan: SplitPlan) -> list[SplitIndices]:
    """folds x repeats splits over a fixed held-out test set.

    The test set takes floor(test_fraction * N) rows; the remainder is
    shuffled once and cut into `folds` nearly equal validation folds, each
    paired with the other folds as training data. Fully determined by the
    master seed.
    """
    rng = np.random.default_rng(np.random.SeedSequence(plan.master_seed, spawn_key=(0,)))
    perm = rng.permutation(d.n_rows)
    n_test = int(plan.test_fraction * d.n_rows)
    test = np.sort(perm[:n_test])
    rest = perm[n_test:]
    folds = np.array_split(rest, plan.folds)
    out = []
    for f in range(plan.folds):
        validation = np.sort(folds[f])
        train = np.sort(np.concatenate([folds[i] for i in range(plan.folds) if i != f]))
        for r in range(plan.repeats):
            out.append(
                SplitIndices(
                    fold=f,
                    repeat=r,
                    run_seed=run_seed_for(plan.master_seed, f, r),
                    train=train,
                    validation=validation,
                    test=test,
                )
            )
    return out


def synth_problem(name: str, n_rows: int = 200, noise: float = 0.0, seed: int = 0) -> Dataset:
    """Labeled synthetic regression problems for fast, deterministic runs.

    sin_plus_sqrt: y = sin(x0) + sqrt(|x1|), two features in U(-5, 5);
        exactly representable by a height-2 expression when a square-root
        operator is available.
    airfoil_like: five features in U(-3, 3);
        y = x0*x1 + sin(2*x2) + x3 / (0.5 + x4^2), a smooth non-separable
        target of roughly benchmark difficulty.

    noise > 0 adds centered Gaussian noise scaled by noise * std(y).
    """
    rng = np.random.default_rng(seed)
    if name == "sin_plus_sqrt":
        X = rng.uniform(-5.0, 5.0, size=(n_rows, 2))
        y = np.sin(X[:, 0]) + np.sqrt(np.abs(X[:, 1]))
    elif name == "airfoil_like":
        X = rng.uniform(-3.0, 3.0, size=(n_rows, 5))
        y = X[:, 0] * X[:, 1] + np.sin(2.0 * X[:, 2]) + X[:, 3] / (0.5 + X[:, 4] ** 2)
    else:
        raise ValueError(f"unknown synthetic problem {name!r}")
    if noise > 0:
        y = y + noise * float(np.std(y)) * rng.standard_normal(n_rows)
    names = [f"x{j}" for j in range(X.shape[1])]
    tag = f"synthetic:{name}(n={n_rows},noise={noise},seed={seed})"
    return Dataset(X, y, names, provenance=tag)

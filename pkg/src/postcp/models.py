"""Plug-in regressors, fold machinery and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class TabularDataset:
    features: np.ndarray
    responses: np.ndarray
    group: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.responses, dtype=float).ravel()
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("dataset needs at least one row and one feature")
        if X.shape[0] != y.shape[0]:
            raise ValueError("features and responses differ in row count")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "responses", y)
        if self.group is not None:
            a = np.asarray(self.group).astype(int).ravel()
            if a.shape[0] != y.shape[0]:
                raise ValueError("group column differs in row count")
            if not np.isin(a, (0, 1)).all():
                raise ValueError("group column must be binary")
            object.__setattr__(self, "group", a)

    def __len__(self):
        return self.responses.shape[0]

    def subset(self, idx) -> "TabularDataset":
        g = None if self.group is None else self.group[idx]
        return TabularDataset(self.features[idx], self.responses[idx], g)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        sd = X.std(axis=0)
        # constant columns pass through centered
        sd = np.where(sd > 0, sd, 1.0)
        return cls(X.mean(axis=0), sd)

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return (X - self.mean) / self.scale


def add_intercept(Z: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(Z.shape[0]), Z])


@dataclass(frozen=True)
class RidgeModel:
    coef: np.ndarray
    intercept: float
    scaler: Standardizer

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.intercept + self.scaler.transform(X) @ self.coef


def fit_ridge(X, y, penalty: float = 0.0, standardize: bool = True) -> RidgeModel:
    """Least squares with an unpenalized intercept.

    Minimizes ``||y - b0 - Z b||^2 + penalty ||b||^2`` where ``Z`` is the
    (optionally standardized) feature matrix.
    """
    if penalty < 0:
        raise ValueError("penalty must be nonnegative")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if standardize:
        scaler = Standardizer.fit(X)
    else:
        scaler = Standardizer(np.zeros(X.shape[1]), np.ones(X.shape[1]))
    D = add_intercept(scaler.transform(X))
    P = penalty * np.eye(D.shape[1])
    P[0, 0] = 0.0
    A = D.T @ D + P
    if penalty == 0 and np.linalg.matrix_rank(A) < A.shape[0]:
        raise np.linalg.LinAlgError("singular normal equations at zero penalty")
    beta = np.linalg.solve(A, D.T @ y)
    return RidgeModel(beta[1:], float(beta[0]), scaler)


@dataclass(frozen=True)
class KnnModel:
    X_train: np.ndarray
    y_train: np.ndarray
    k: int
    scaler: Standardizer

    def neighbors(self, X, chunk: int = 256) -> np.ndarray:
        """Indices of the k nearest training rows; ties go to lower index."""
        Q = self.scaler.transform(np.atleast_2d(np.asarray(X, dtype=float)))
        T = self.X_train
        t_sq = np.einsum("ij,ij->i", T, T)
        out = np.empty((Q.shape[0], self.k), dtype=np.int64)
        for lo in range(0, Q.shape[0], chunk):
            q = Q[lo:lo + chunk]
            d = np.sqrt(np.maximum(
                t_sq[None, :] - 2.0 * q @ T.T + np.einsum("ij,ij->i", q, q)[:, None],
                0.0))
            # stable sort keeps the lowest index among equal distances
            order = np.argsort(d, axis=1, kind="stable")
            out[lo:lo + q.shape[0]] = order[:, : self.k]
        return out

    def predict(self, X) -> np.ndarray:
        return self.y_train[self.neighbors(X)].mean(axis=1)


def fit_knn(X, y, k: int) -> KnnModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if not 1 <= k <= X.shape[0]:
        raise ValueError(f"k={k} outside [1, n={X.shape[0]}]")
    scaler = Standardizer.fit(X)
    return KnnModel(scaler.transform(X), y, int(k), scaler)


@dataclass(frozen=True)
class FoldAssignment:
    fold_of: np.ndarray
    folds: int

    def members(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == f)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.folds)


def kfold_split(n: int, folds: int, rng: np.random.Generator) -> FoldAssignment:
    if folds > n:
        raise ValueError(f"cannot split {n} points into {folds} folds")
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[rng.permutation(n)] = np.arange(n) % folds
    return FoldAssignment(fold_of, folds)


def cross_val_predict(fit, X, y, folds: FoldAssignment) -> np.ndarray:
    """Out-of-fold predictions; ``fit(X, y)`` must return a model."""
    pred = np.empty(len(y))
    for f in range(folds.folds):
        test = folds.fold_of == f
        model = fit(X[~test], y[~test])
        pred[test] = model.predict(X[test])
    return pred


def make_regressor(spec: dict | None):
    """Factory from a small config dict, e.g. ``{"name": "knn", "k": 20}``."""
    spec = dict(spec or {"name": "knn"})
    name = spec.pop("name", "knn")
    if name == "knn":
        k = int(spec.pop("k", 20))
        return lambda X, y: fit_knn(X, y, min(k, len(y)))
    if name == "ridge":
        penalty = float(spec.pop("penalty", 1.0))
        return lambda X, y: fit_ridge(X, y, penalty)
    raise ValueError(f"unknown regressor {name!r}")


def read_csv(path) -> TabularDataset:
    """Read the numeric CSV schema: column ``y`` is the response, optional
    binary column ``a`` is the group, every other column is a feature."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if "y" not in header:
            raise ValueError(f"{path}: missing response column 'y'")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} "
                                 f"fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.array(rows)
    iy = header.index("y")
    ia = header.index("a") if "a" in header else None
    feat = [j for j in range(len(header)) if j not in (iy, ia)]
    if not feat:
        raise ValueError(f"{path}: no feature columns")
    group = None
    if ia is not None:
        a = data[:, ia]
        bad = np.flatnonzero(~np.isin(a, (0.0, 1.0)))
        if bad.size:
            raise ValueError(f"{path}:{bad[0] + 2}: group column 'a' must be 0/1")
        group = a.astype(int)
    return TabularDataset(data[:, feat], data[:, iy], group)


def write_csv(path, data: TabularDataset) -> None:
    path = Path(path)
    d = data.features.shape[1]
    header = [f"x{j + 1}" for j in range(d)] + ["y"]
    cols = [data.features, data.responses[:, None]]
    if data.group is not None:
        header.append("a")
        cols.append(data.group[:, None])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in np.hstack(cols):
            w.writerow([repr(float(v)) for v in row])

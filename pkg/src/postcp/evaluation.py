"""Coverage and length metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

METRIC_HEADER = ("rep", "method", "metric", "value")


def marginal_coverage(covered) -> float:
    covered = np.asarray(covered, dtype=float)
    if covered.size == 0:
        raise ValueError("no results")
    return float(covered.mean())


def covered_by(intervals, y) -> np.ndarray:
    return np.array([iv.contains(v) for iv, v in zip(intervals, y)], dtype=bool)


@dataclass(frozen=True)
class WorstSlice:
    coverage: float
    direction: np.ndarray
    bounds: tuple


def random_directions(n_dirs: int, d: int, rng: np.random.Generator) -> np.ndarray:
    V = rng.standard_normal((n_dirs, d))
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def worst_slice(features, covered, rng: np.random.Generator, n_dirs: int = 2500,
                find_frac: float = 0.2, min_mass: float = 0.1,
                directions=None) -> WorstSlice:
    """Minimum coverage over slices {x : v'x in [a, b]}.

    A random ``find_frac`` of the points locates, for every direction, the
    window of ``ceil(min_mass * n_find)`` consecutive projections with the
    lowest coverage; its coverage is then evaluated on the remaining
    points. The full-support slice is always a candidate, so the result
    never exceeds the marginal coverage of the evaluation points.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    c = np.asarray(covered, dtype=float)
    n = c.size
    if n < 50:
        raise ValueError("need at least 50 points")
    perm = rng.permutation(n)
    n_find = int(round(find_frac * n))
    k = int(np.ceil(min_mass * n_find))
    if k < 1 or n_find < k:
        raise ValueError("too few points for the slice mass constraint")
    fi, ev = perm[:n_find], perm[n_find:]
    V = random_directions(n_dirs, X.shape[1], rng) if directions is None else np.atleast_2d(directions)
    best = WorstSlice(float(c[ev].mean()), np.zeros(X.shape[1]), (-np.inf, np.inf))
    proj_f = V @ X[fi].T
    proj_e = V @ X[ev].T
    order = np.argsort(proj_f, axis=1, kind="stable")
    ps = np.take_along_axis(proj_f, order, axis=1)
    cs = np.take_along_axis(np.broadcast_to(c[fi], proj_f.shape), order, axis=1)
    csum = np.concatenate([np.zeros((V.shape[0], 1)), np.cumsum(cs, axis=1)], axis=1)
    window = csum[:, k:] - csum[:, :-k]
    start = np.argmin(window, axis=1)               # first-found minimum
    a = ps[np.arange(V.shape[0]), start]
    b = ps[np.arange(V.shape[0]), start + k - 1]
    inside = (proj_e >= a[:, None]) & (proj_e <= b[:, None])
    cnt = inside.sum(axis=1)
    cov = np.where(cnt > 0, (inside * c[ev]).sum(axis=1) / np.maximum(cnt, 1), np.inf)
    j = int(np.argmin(cov))
    if cov[j] < best.coverage:
        best = WorstSlice(float(cov[j]), V[j], (float(a[j]), float(b[j])))
    return best


def worst_slice_coverage(features, covered, rng: np.random.Generator, **kw) -> float:
    return worst_slice(features, covered, rng, **kw).coverage


def local_coverage(order_feature, covered, window: int, positions=None,
                   points: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Coverage among the ``window`` points nearest each position.

    Positions default to ``points`` evenly spaced values over the feature's
    range. Ties in distance go to the lower index.
    """
    v = np.asarray(order_feature, dtype=float)
    c = np.asarray(covered, dtype=float)
    if window > v.size:
        raise ValueError("window exceeds the number of points")
    if positions is None:
        positions = np.linspace(v.min(), v.max(), points)
    positions = np.asarray(positions, dtype=float)
    out = np.empty(positions.size)
    for i, p in enumerate(positions):
        idx = np.argsort(np.abs(v - p), kind="stable")[:window]
        out[i] = c[idx].mean()
    return positions, out


def calibration_curve(p_values, covered, points: int = 50, window: int = 200):
    """Local coverage against local mean confidence.

    Returns ``(positions, mean_p, coverage)`` evaluated at ``points`` evenly
    spaced values over the support of ``p_values``.
    """
    p = np.asarray(p_values, dtype=float)
    c = np.asarray(covered, dtype=float)
    if p.size < window:
        raise ValueError("fewer points than the window")
    pos = np.linspace(p.min(), p.max(), points)
    mean_p, cov = np.empty(points), np.empty(points)
    for i, q in enumerate(pos):
        idx = np.argsort(np.abs(p - q), kind="stable")[:window]
        mean_p[i] = p[idx].mean()
        cov[i] = c[idx].mean()
    return pos, mean_p, cov


@dataclass(frozen=True)
class LengthSummary:
    mean_length: float
    n_infinite: int
    substitute: float


def length_summary(lengths, abs_errors) -> LengthSummary:
    """Mean length with infinite lengths replaced by twice the largest error."""
    L = np.asarray(lengths, dtype=float)
    sub = 2.0 * float(np.max(np.abs(abs_errors)))
    inf = ~np.isfinite(L)
    return LengthSummary(float(np.where(inf, sub, L).mean()), int(inf.sum()), sub)


def write_metrics(path, rows) -> None:
    """Long-format metrics: one row per (rep, method, metric)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_HEADER)
        for rep, method, metric, value in rows:
            w.writerow([rep, method, metric, repr(float(value))])


def read_metrics(path) -> list[tuple]:
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = tuple(next(r))
        if header != METRIC_HEADER:
            raise ValueError(f"unexpected header {header}")
        return [(int(a), b, c, float(d)) for a, b, c, d in r]


def write_curve(path, rows, header=("rep", "method", "position", "value")) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)

"""Numeric primitives shared by every interval construction.

Weighted empirical distributions with an explicit mass at +infinity,
conformal p-values, KL divergences between membership vectors,
multinomial draws and the log-space product weights built from them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

WEIGHT_TOL = 1e-8
# slack used when comparing cumulative weights against a level; keeps
# sums such as 9 * 0.1 from falling just short of 0.9
CUM_TOL = 1e-12


class DegenerateWeights(ValueError):
    """All unnormalized weights vanished."""


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator addressed by ``(seed, *key)``.

    Streams with different keys are statistically independent, so
    repetitions and test points can be processed in any order.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1),
                                spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class PcpConfig:
    alpha: float = 0.1
    K: int | None = None
    m: int | None = None
    s: int = 9
    folds: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.K is not None and self.K < 1:
            raise ValueError(f"K must be positive, got {self.K}")
        if self.m is not None and not 1 <= self.m <= 10**6:
            raise ValueError(f"m must lie in [1, 1e6], got {self.m}")
        if self.s < 1:
            raise ValueError(f"grid size s must be positive, got {self.s}")
        if self.folds < 2:
            raise ValueError(f"folds must be at least 2, got {self.folds}")


@dataclass(frozen=True)
class WeightedEmpiricalDist:
    """Finite residual atoms plus a point mass at +infinity.

    Weights are renormalized on construction so that the atom weights and
    ``infinity_weight`` sum to one.
    """

    residuals: np.ndarray
    weights: np.ndarray
    infinity_weight: float = 0.0

    def __post_init__(self):
        r = np.asarray(self.residuals, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        inf_w = float(self.infinity_weight)
        if r.shape != w.shape:
            raise ValueError("residuals and weights differ in length")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise ValueError("residual atoms must be finite and nonnegative")
        if np.any(w < 0) or inf_w < 0 or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        total = w.sum() + inf_w
        if r.size == 0 and inf_w == 0:
            raise ValueError("empty distribution")
        if total <= 0:
            raise ValueError("empty distribution")
        object.__setattr__(self, "residuals", r)
        object.__setattr__(self, "weights", w / total)
        object.__setattr__(self, "infinity_weight", inf_w / total)

    @classmethod
    def with_test_weight(cls, residuals, weights) -> "WeightedEmpiricalDist":
        """Build from ``n + 1`` weights whose last entry sits at +infinity."""
        weights = np.asarray(weights, dtype=float)
        return cls(residuals, weights[:-1], weights[-1])

    @classmethod
    def uniform(cls, residuals) -> "WeightedEmpiricalDist":
        n = len(residuals)
        return cls(residuals, np.full(n, 1.0 / (n + 1)), 1.0 / (n + 1))


def weighted_quantile(dist: WeightedEmpiricalDist, level: float) -> float:
    """Smallest atom whose cumulative weight reaches ``level``.

    Atoms are sorted ascending with the infinity atom last; returns
    ``inf`` when the finite atoms carry less than ``level`` in total.
    """
    if not 0.0 < level < 1.0 + CUM_TOL:
        raise ValueError(f"level must lie in (0, 1], got {level}")
    r = dist.residuals
    if r.size == 0:
        return np.inf
    order = np.argsort(r, kind="stable")
    cum = np.cumsum(dist.weights[order])
    idx = np.searchsorted(cum, level - CUM_TOL, side="left")
    if idx >= r.size:
        return np.inf
    return float(r[order[idx]])


def weighted_quantile_sorted(sorted_r: np.ndarray, cum_w: np.ndarray,
                             level: float) -> float:
    """Same convention as :func:`weighted_quantile` on presorted atoms."""
    idx = np.searchsorted(cum_w, level - CUM_TOL, side="left")
    return float(sorted_r[idx]) if idx < sorted_r.size else np.inf


def conformal_pvalue(weights, residuals, r_test: float) -> float:
    """Weighted conformal p-value; the test point's own indicator is 1."""
    w = np.asarray(weights, dtype=float)
    r = np.asarray(residuals, dtype=float)
    if w.size != r.size + 1:
        raise ValueError("need one more weight than residuals")
    if abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise ValueError(f"weights sum to {w.sum()}, not 1")
    return float(w[:-1][r >= r_test].sum() + w[-1])


def kl_divergence(p, q) -> float:
    """KL(p || q) with 0 log(0/q) = 0; infinite when q misses mass of p."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("length mismatch")
    mask = p > 0
    if np.any(q[mask] <= 0):
        return np.inf
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


@dataclass(frozen=True)
class MultinomialDraw:
    counts: np.ndarray
    m: int = field(default=0)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        m = int(self.m) if self.m else int(counts.sum())
        if np.any(counts < 0) or counts.sum() != m or m < 1:
            raise ValueError("counts must be nonnegative and sum to m >= 1")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "m", m)

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.m


def check_simplex(probs, tol: float = 1e-10) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1 or probs.size < 1:
        raise ValueError("membership vector must be a nonempty 1-d array")
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > tol:
        raise ValueError("membership vector must lie on the simplex")
    return probs


def multinomial_draw(probs, m: int, rng: np.random.Generator) -> MultinomialDraw:
    probs = check_simplex(probs, tol=1e-8)
    if m < 1:
        raise ValueError("m must be a positive integer")
    p = np.clip(probs, 0.0, None)
    counts = rng.multinomial(m, p / p.sum())
    return MultinomialDraw(counts, m)


def log_product_weights(log_pi: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Row-wise sum_k counts_k * log pi_ik, with 0 * log 0 treated as 0.

    ``log_pi`` may hold ``-inf``; columns with zero count are dropped so
    they never produce ``nan``. Works on a trailing ``(rows, K)`` layout
    with any leading batch shape when ``counts`` broadcasts against it.
    """
    counts = np.asarray(counts)
    if counts.ndim == 1:
        keep = counts > 0
        if not np.any(keep):
            return np.zeros(log_pi.shape[:-1])
        return log_pi[..., keep] @ counts[keep].astype(float)
    # batched counts: (..., K) aligned with log_pi's leading dims
    with np.errstate(invalid="ignore"):
        terms = np.where(counts[..., None, :] > 0,
                         log_pi * counts[..., None, :], 0.0)
    return terms.sum(axis=-1)


def normalize_log_weights(logw: np.ndarray) -> np.ndarray:
    """Softmax along the last axis; rows of all ``-inf`` raise."""
    top = np.max(logw, axis=-1, keepdims=True)
    if np.any(~np.isfinite(top)):
        raise DegenerateWeights("degenerate weights")
    w = np.exp(logw - top)
    return w / w.sum(axis=-1, keepdims=True)


def kl_weights(pi_matrix, draw: MultinomialDraw | np.ndarray) -> np.ndarray:
    """Normalized weights proportional to prod_k pi_k(X_i) ** L_k.

    ``pi_matrix`` holds one membership vector per row (validation points
    first, test point last).
    """
    pi = np.asarray(pi_matrix, dtype=float)
    counts = draw.counts if isinstance(draw, MultinomialDraw) else np.asarray(draw)
    if pi.ndim != 2 or pi.shape[1] != counts.size:
        raise ValueError("draw length must match the number of clusters")
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    return normalize_log_weights(log_product_weights(log_pi, counts))


def kl_limit_weights(pi_matrix, pi_test, m: float) -> np.ndarray:
    """Deterministic weights proportional to exp(-m KL(pi_test || pi_i))."""
    pi = np.asarray(pi_matrix, dtype=float)
    logw = np.array([-m * kl_divergence(pi_test, row) for row in pi])
    return normalize_log_weights(logw)


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    sq = float(np.sum(w * w))
    if sq == 0.0:
        raise ValueError("zero weight vector")
    return 1.0 / sq

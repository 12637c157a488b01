"""Equalized-coverage intervals within group partitions and a dependence diagnostic."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .models import KnnModel, fit_knn, make_regressor
from .scp_baselines import PredictionInterval, batch_quantile

log = logging.getLogger(__name__)

PROPENSITY_FLOOR = 1e-4


@dataclass(frozen=True)
class PropensityModel:
    """Group-membership probability from the share of positive neighbors."""

    knn: KnnModel
    floor: float = PROPENSITY_FLOOR

    def predict(self, X) -> np.ndarray:
        return np.clip(self.knn.predict(X), self.floor, 1.0 - self.floor)


def fit_propensity(X, group, k: int = 50) -> PropensityModel:
    group = np.asarray(group, dtype=float)
    return PropensityModel(fit_knn(X, group, min(k, len(group))))


def _binomial_logw(e, L, m):
    """``L log e + (m - L) log(1 - e)`` with ``0 log 0 = 0``."""
    e = np.asarray(e, dtype=float)
    L = np.asarray(L, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        le, l1e = np.log(e), np.log1p(-e)
        return np.where(L > 0, L * le, 0.0) + np.where(m - L > 0, (m - L) * l1e, 0.0)


def equalized_pcp_intervals(residuals, groups, e_val, e_test, a_test, mu_test,
                            alpha: float, m: int, rng: np.random.Generator):
    """Equalized-coverage intervals for a batch of test points.

    Each test point keeps only the validation points of its own group and
    weights them by ``e^L (1 - e)^(m - L)`` where ``L`` counts successes in
    ``m`` Bernoulli draws with probability ``e_test``. Returns the intervals
    and the draws ``L``.
    """
    residuals = np.asarray(residuals, dtype=float)
    groups = np.asarray(groups).astype(int)
    e_val = np.asarray(e_val, dtype=float)
    e_test = np.atleast_1d(np.asarray(e_test, dtype=float))
    a_test = np.atleast_1d(np.asarray(a_test)).astype(int)
    mu_test = np.broadcast_to(np.asarray(mu_test, dtype=float), e_test.shape)
    if m < 1:
        raise ValueError("m must be positive")
    L = rng.binomial(m, e_test)
    out = [None] * e_test.size
    for a in (0, 1):
        sel = np.flatnonzero(a_test == a)
        if sel.size == 0:
            continue
        cell = groups == a
        if not cell.any():
            raise ValueError("empty partition cell")
        r = residuals[cell]
        order = np.argsort(r, kind="stable")
        logw = np.column_stack([
            _binomial_logw(e_val[cell][None, :], L[sel][:, None], m),
            _binomial_logw(e_test[sel], L[sel], m)])
        top = logw.max(axis=1, keepdims=True)
        degenerate = ~np.isfinite(top[:, 0])
        W = np.exp(logw - np.where(np.isfinite(top), top, 0.0))
        W /= W.sum(axis=1, keepdims=True)
        q = batch_quantile(r[order], W[:, :-1][:, order], 1.0 - alpha)
        for row, t in enumerate(sel):
            flags = ()
            radius = q[row]
            if degenerate[row]:
                radius, flags = np.inf, ("degenerate-weights",)
            out[t] = PredictionInterval.symmetric(
                mu_test[t], radius,
                {"L": int(L[t]), "e_tilde": L[t] / m, "e_test": float(e_test[t])}, flags)
    return out, L


def equalized_pcp_interval(residuals, groups, e_val, e_test: float, a_test: int,
                           mu_hat_at_x: float, alpha: float, m: int,
                           rng: np.random.Generator) -> PredictionInterval:
    return equalized_pcp_intervals(residuals, groups, e_val, [e_test], [a_test],
                                   [mu_hat_at_x], alpha, m, rng)[0][0]


def subpopulation_overrepresentation_gap(e_values, group, theta: float) -> float:
    """P(e >= theta | A = 1) - P(e >= theta), both empirical."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    e = np.asarray(e_values, dtype=float)
    a = np.asarray(group).astype(int)
    if not np.any(a == 1):
        raise ValueError("empty group")
    high = e >= theta
    return float(high[a == 1].mean() - high.mean())


@dataclass(frozen=True)
class CovarianceStatistic:
    covariance: float
    standard_error: float

    @property
    def z(self) -> float:
        if self.standard_error == 0:
            return 0.0
        return self.covariance / self.standard_error


def generalized_covariance(upper_bounds, group, features, regressor_factory=None,
                           rng: np.random.Generator | None = None,
                           fit_fraction: float = 0.5) -> CovarianceStatistic:
    """Covariance of the residuals of U on X and of A on X.

    A random ``fit_fraction`` of the points fits both conditional
    expectations; the covariance and its standard error are computed on the
    rest. Infinite bounds are replaced by the largest finite bound.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    U = np.asarray(upper_bounds, dtype=float).copy()
    A = np.asarray(group, dtype=float)
    X = np.atleast_2d(np.asarray(features, dtype=float))
    if X.shape[0] != U.size:
        X = X.T
    finite = np.isfinite(U)
    if not finite.any():
        return CovarianceStatistic(0.0, 0.0)
    U[~finite] = U[finite].max()
    if np.ptp(U) == 0:
        return CovarianceStatistic(0.0, 0.0)
    fit = regressor_factory or make_regressor({"name": "knn", "k": 50})
    n = U.size
    perm = rng.permutation(n)
    cut = int(round(fit_fraction * n))
    tr, ev = perm[:cut], perm[cut:]
    ru = U[ev] - fit(X[tr], U[tr]).predict(X[ev])
    ra = A[ev] - fit(X[tr], A[tr]).predict(X[ev])
    prod = ru * ra
    cov = float(prod.mean())
    se = float(prod.std(ddof=1) / np.sqrt(prod.size))
    return CovarianceStatistic(cov, se)


def gen_fairness_data(n: int, rng: np.random.Generator, gap: float = 3.0):
    """Two-group data with known propensity and a planted accuracy gap.

    ``X ~ U[-3, 3]^2``; the group follows ``e(X) = logistic(1.5 X_1)``;
    the noise scale is ``1 + gap * 1{X_1 < 0}``, so the rare members of
    group 1 (low propensity) are predicted much worse than the group's
    typical member. The response mean is ``X_1 + X_2``.
    """
    from .models import TabularDataset
    X = rng.uniform(-3.0, 3.0, size=(n, 2))
    e = 1.0 / (1.0 + np.exp(-1.5 * X[:, 0]))
    a = (rng.random(n) < e).astype(int)
    scale = 1.0 + gap * (X[:, 0] < 0)
    y = X[:, 0] + X[:, 1] + scale * rng.standard_normal(n)
    return TabularDataset(X, y, a), e

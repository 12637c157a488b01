"""Split conformal prediction, its group-partition variant and RLCP."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import (CUM_TOL, WeightedEmpiricalDist, effective_sample_size,
                   weighted_quantile)

log = logging.getLogger(__name__)

RLCP_TARGET_ESS = 100.0
RLCP_ESS_TOL = 5.0


@dataclass(frozen=True)
class PredictionInterval:
    center: float
    lower: float
    upper: float
    trace: dict | None = None
    flags: tuple = field(default=())

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError("lower bound exceeds upper bound")

    @classmethod
    def symmetric(cls, center: float, radius: float, trace=None, flags=()):
        return cls(float(center), float(center - radius), float(center + radius),
                   trace, tuple(flags))

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.lower) and np.isfinite(self.upper))

    @property
    def radius(self) -> float:
        return 0.5 * (self.upper - self.lower)

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def contains(self, y) -> bool:
        return bool(self.lower <= y <= self.upper)


def scp_radius(residuals, alpha: float) -> float:
    return weighted_quantile(WeightedEmpiricalDist.uniform(residuals), 1.0 - alpha)


def scp_interval(residuals, mu_hat_at_x: float, alpha: float) -> PredictionInterval:
    """Uniform weights 1/(n+1) on the residuals and on +infinity."""
    residuals = np.asarray(residuals, dtype=float)
    if residuals.size < 1:
        raise ValueError("need at least one residual")
    return PredictionInterval.symmetric(mu_hat_at_x, scp_radius(residuals, alpha))


def scp_partition_interval(residuals, groups, group_of_test: int,
                           mu_hat_at_x: float, alpha: float) -> PredictionInterval:
    """SCP restricted to validation points sharing the test point's group."""
    residuals = np.asarray(residuals, dtype=float)
    cell = residuals[np.asarray(groups) == group_of_test]
    if cell.size == 0:
        raise ValueError("empty partition cell")
    return scp_interval(cell, mu_hat_at_x, alpha)


def batch_quantile(sorted_r: np.ndarray, W_sorted: np.ndarray, level: float) -> np.ndarray:
    """Row-wise weighted quantile for weights already aligned with ``sorted_r``.

    ``W_sorted`` holds the finite-atom weights (rows normalized together
    with an implicit infinity atom); returns ``inf`` where the finite
    atoms never reach ``level``.
    """
    cum = np.cumsum(W_sorted, axis=-1)
    idx = np.sum(cum < level - CUM_TOL, axis=-1)
    padded = np.append(sorted_r, np.inf)
    return padded[idx]


# ------------------------------------------------------------------ RLCP


def _rlcp_logw(beta, a, b, c):
    """Log-weights -beta ||X_i - x_tilde||^2 / 2 with x_tilde = x + z / sqrt(beta).

    ``a = ||X_i - x||^2``, ``b = (X_i - x)' z`` and ``c = ||z||^2``.
    """
    sb = np.sqrt(beta)
    return -0.5 * (beta * a - 2.0 * sb * b + c)


def _ess_from_logw(logw):
    logw = logw - logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=-1, keepdims=True)
    return 1.0 / np.sum(w * w, axis=-1), w


def rlcp_intervals(Z_val, residuals, Z_test, mu_test, alpha: float,
                   bandwidth: float | str = "auto", rng=None,
                   target_ess: float = RLCP_TARGET_ESS, tol: float = RLCP_ESS_TOL,
                   max_iter: int = 60) -> list[PredictionInterval]:
    """Randomly localized intervals for a batch of test points.

    ``Z_val`` and ``Z_test`` must already be standardized. With
    ``bandwidth="auto"`` the precision ``beta`` is bisected on the log scale
    until the effective sample size over the n + 1 weights lies within
    ``target_ess +- tol``; when no bracket exists the closest endpoint is
    used and the interval is flagged.
    """
    Z_val = np.atleast_2d(np.asarray(Z_val, dtype=float))
    Z_test = np.atleast_2d(np.asarray(Z_test, dtype=float))
    residuals = np.asarray(residuals, dtype=float)
    mu_test = np.broadcast_to(np.asarray(mu_test, dtype=float), (Z_test.shape[0],))
    rng = np.random.default_rng() if rng is None else rng
    T, n = Z_test.shape[0], Z_val.shape[0]
    chunk = max(1, 4_000_000 // max(n * Z_val.shape[1], 1))
    if T > chunk:
        out = []
        for lo in range(0, T, chunk):
            out += rlcp_intervals(Z_val, residuals, Z_test[lo:lo + chunk],
                                  mu_test[lo:lo + chunk], alpha, bandwidth, rng,
                                  target_ess, tol, max_iter)
        return out
    if bandwidth != "auto" and float(bandwidth) == 0.0:
        r = scp_radius(residuals, alpha)
        return [PredictionInterval.symmetric(mu, r, {"beta": 0.0}) for mu in mu_test]
    z = rng.standard_normal(Z_test.shape)
    diff = Z_val[None, :, :] - Z_test[:, None, :]                  # (T, n, d)
    a = np.concatenate([np.einsum("tnd,tnd->tn", diff, diff), np.zeros((T, 1))], 1)
    b = np.concatenate([np.einsum("tnd,td->tn", diff, z), np.zeros((T, 1))], 1)
    c = np.einsum("td,td->t", z, z)[:, None]
    flags = [[] for _ in range(T)]
    if bandwidth == "auto":
        lo = np.full(T, -25.0)
        hi = np.full(T, 25.0)
        ess_lo, _ = _ess_from_logw(_rlcp_logw(np.exp(lo)[:, None], a, b, c))
        ess_hi, _ = _ess_from_logw(_rlcp_logw(np.exp(hi)[:, None], a, b, c))
        bracketed = (ess_lo >= target_ess - tol) & (ess_hi <= target_ess + tol)
        mid = 0.5 * (lo + hi)
        done = np.zeros(T, dtype=bool)
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            ess, _ = _ess_from_logw(_rlcp_logw(np.exp(mid)[:, None], a, b, c))
            done |= np.abs(ess - target_ess) <= tol
            go_up = (ess > target_ess) & ~done
            go_down = (ess < target_ess) & ~done
            lo = np.where(go_up, mid, lo)
            hi = np.where(go_down, mid, hi)
            if done.all():
                break
        log_beta = mid
        for t in np.flatnonzero(~bracketed):
            # no bracket: keep whichever endpoint lands closest to the target
            log_beta[t] = -25.0 if abs(ess_lo[t] - target_ess) < abs(ess_hi[t] - target_ess) else 25.0
            flags[t].append("bandwidth-unbracketed")
        for t in np.flatnonzero(bracketed & ~done):
            flags[t].append("bandwidth-tolerance-missed")
        beta = np.exp(log_beta)
    else:
        beta = np.full(T, float(bandwidth))
    ess, w = _ess_from_logw(_rlcp_logw(beta[:, None], a, b, c))
    order = np.argsort(residuals, kind="stable")
    q = batch_quantile(residuals[order], w[:, :-1][:, order], 1.0 - alpha)
    return [PredictionInterval.symmetric(mu_test[t], q[t],
                                         {"beta": float(beta[t]), "ess": float(ess[t])},
                                         flags[t]) for t in range(T)]


def rlcp_interval(Z_val, residuals, z_test, mu_hat_at_x: float, alpha: float,
                  bandwidth: float | str = "auto", rng=None) -> PredictionInterval:
    """Single-point wrapper around :func:`rlcp_intervals`."""
    return rlcp_intervals(Z_val, residuals, np.atleast_2d(z_test), [mu_hat_at_x],
                          alpha, bandwidth, rng)[0]


def realized_ess(interval: PredictionInterval) -> float:
    return float(interval.trace["ess"]) if interval.trace else float("nan")


__all__ = ["PredictionInterval", "scp_interval", "scp_partition_interval",
           "rlcp_interval", "rlcp_intervals", "batch_quantile", "effective_sample_size"]

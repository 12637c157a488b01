"""Selection of the cluster count K and the precision m on the fitting split."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import normalize_log_weights, rng_stream
from .mixture import cluster_reconstruct

log = logging.getLogger(__name__)

R2_GAIN = 0.05
K_MAX = 10
M_RANGE = (5, 500)
ESS_TARGET = 100.0
SELF_WEIGHT_MAX = 1.0 / 30.0


@dataclass
class HyperSelection:
    K: int
    m: int
    r2_by_K: dict = field(default_factory=dict)
    ess_trace: dict = field(default_factory=dict)
    flags: tuple = ()

    def to_json(self) -> str:
        return json.dumps({
            "K": self.K, "m": self.m,
            "r2_by_K": {str(k): v for k, v in self.r2_by_K.items()},
            "ess_trace": {str(k): list(v) for k, v in self.ess_trace.items()},
            "flags": list(self.flags),
        }, indent=2)


def select_K(tau_prime, K_max: int = K_MAX, rng: np.random.Generator | None = None,
             gain: float = R2_GAIN, **cluster_kw) -> tuple[int, dict]:
    """Smallest K whose successor improves the reconstruction R^2 by < ``gain``.

    Fits are computed lazily, so only K + 1 reconstructions are run.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    if K_max < 1:
        raise ValueError("K_max must be positive")
    r2 = {}

    def score(K):
        if K not in r2:
            r2[K] = cluster_reconstruct(tau_prime, K, rng, **cluster_kw).r2(tau_prime)
        return r2[K]

    K = 1
    while K < K_max:
        if score(K + 1) - score(K) < gain:
            break
        K += 1
    score(K)
    return K, r2


class DrawBank:
    """Nested multinomial draws sharing one uniform matrix across m.

    Row ``i`` uses the first ``m`` uniforms of its row, mapped through the
    inverse CDF of ``pi[i]``, so the draw for m is a sub-sample of the draw
    for any larger m.
    """

    def __init__(self, pi, m_max: int, seed: int = 0):
        self.pi = np.asarray(pi, dtype=float)
        n, K = self.pi.shape
        uniforms = rng_stream(seed, 7).random((n, m_max))
        cdf = np.cumsum(self.pi, axis=1)
        cdf[:, -1] = 1.0
        # category of each uniform, precomputed once
        self.cat = (uniforms[:, :, None] >= cdf[:, None, :-1]).sum(axis=2)
        self.K = K

    def counts(self, m: int) -> np.ndarray:
        n = self.cat.shape[0]
        out = np.zeros((n, self.K), dtype=np.int64)
        np.add.at(out, (np.repeat(np.arange(n), m), self.cat[:, :m].ravel()), 1)
        return out


def ess_statistics(pi, counts) -> tuple[float, float]:
    """Mean effective sample size and mean self-weight of the prime weights.

    Row ``i`` weights every prime point ``j`` (itself included) by
    ``prod_k pi_jk ** counts_ik``.
    """
    with np.errstate(divide="ignore"):
        log_pi = np.log(np.asarray(pi, dtype=float))
    c = counts.astype(float)
    if np.isneginf(log_pi).any():
        # 0 * log 0 contributes nothing
        log_pi = np.where(np.isneginf(log_pi), -1e300, log_pi)
        logw = c @ log_pi.T
        logw = np.where(np.isfinite(logw), logw, -np.inf)
    else:
        logw = c @ log_pi.T
    W = normalize_log_weights(logw)
    ess = 1.0 / np.sum(W * W, axis=1)
    return float(ess.mean()), float(np.mean(np.diag(W)))


def select_m(pi_prime, m_range=M_RANGE, seed: int = 0, ess_target: float = ESS_TARGET,
             self_weight_max: float = SELF_WEIGHT_MAX) -> tuple[int, dict, tuple]:
    """Largest m in ``m_range`` where mean ESS >= target or mean self-weight is small.

    The predicate is assumed nonincreasing in m and located by integer
    bisection; draws are nested across m through a shared uniform matrix.
    """
    lo, hi = int(m_range[0]), int(m_range[1])
    if not 1 <= lo <= hi:
        raise ValueError("invalid m range")
    bank = DrawBank(pi_prime, hi, seed)
    trace = {}

    def pred(m):
        if m not in trace:
            trace[m] = ess_statistics(bank.pi, bank.counts(m))
        ess, self_w = trace[m]
        return ess >= ess_target or self_w <= self_weight_max

    if pred(hi):
        return hi, trace, ()
    if not pred(lo):
        log.warning("ESS predicate fails at m=%d", lo)
        return lo, trace, ("low-ESS regime",)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return lo, trace, ()


def ess_predicate(pi_prime, m: int, seed: int = 0, ess_target: float = ESS_TARGET,
                  self_weight_max: float = SELF_WEIGHT_MAX, m_max: int = M_RANGE[1]) -> bool:
    """The selection predicate at a single m, with the same nested draws."""
    bank = DrawBank(pi_prime, max(m, m_max), seed)
    ess, self_w = ess_statistics(bank.pi, bank.counts(m))
    return ess >= ess_target or self_w <= self_weight_max

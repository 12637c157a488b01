"""Synthetic data generators with known structure."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import TabularDataset

FEATURE_DIM = 6
FEATURE_RANGE = 8.0


def drift(v):
    v = np.asarray(v, dtype=float)
    return -3.0 * v + v**2 - 5.0 * v * np.sin(v)


def noise_scale(v, mode: int):
    """Conditional noise standard deviation as a function of the first feature."""
    v = np.asarray(v, dtype=float)
    if mode == 1:
        return 4.0 + 2.0 * (v - 2.0) ** 2
    if mode == 2:
        return 4.0 * (1.0 + 3.0 * (v <= 5.0))
    raise ValueError(f"unknown setting {mode}")


def gen_setting(mode: int, n: int, rng: np.random.Generator) -> TabularDataset:
    """Six uniform features on [0, 8]; the response depends on the first only."""
    if n < 1:
        raise ValueError("n must be positive")
    X = rng.uniform(0.0, FEATURE_RANGE, size=(n, FEATURE_DIM))
    v = X[:, 0]
    y = drift(v) + noise_scale(v, mode) * rng.standard_normal(n)
    return TabularDataset(X, y)


@dataclass(frozen=True)
class CounterexampleData:
    x: np.ndarray          # binary feature
    residuals: np.ndarray
    pi: np.ndarray         # (n, 2) membership rows

    @staticmethod
    def pi_map(symmetric: bool = False) -> np.ndarray:
        """Rows are the membership vectors for x = 0 and x = 1."""
        row0 = [0.5, 0.5] if symmetric else [0.8, 0.2]
        return np.array([row0, [1.0, 0.0]])


def gen_counterexample(n: int, rng: np.random.Generator, rho: float = 0.4,
                       symmetric: bool = False) -> CounterexampleData:
    """Binary feature with residual means 5 (x = 0) and 10 (x = 1).

    Negative residual draws are redrawn, which almost never happens.
    """
    x = (rng.random(n) < rho).astype(int)
    mean = np.where(x == 1, 10.0, 5.0)
    r = mean + rng.standard_normal(n)
    bad = r < 0
    while np.any(bad):
        r[bad] = mean[bad] + rng.standard_normal(bad.sum())
        bad = r < 0
    return CounterexampleData(x, r, CounterexampleData.pi_map(symmetric)[x])


@dataclass(frozen=True)
class KnownMixtureData:
    features: np.ndarray
    residuals: np.ndarray
    pi_star: np.ndarray
    component: np.ndarray

    def dataset(self) -> TabularDataset:
        # a zero predictor makes the absolute response equal the residual
        return TabularDataset(self.features, self.residuals)


def pi_from_features(features) -> np.ndarray:
    """Inverse of the additive log-ratio link (last component is the base)."""
    F = np.atleast_2d(np.asarray(features, dtype=float))
    z = np.column_stack([F, np.zeros(F.shape[0])])
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def gen_known_mixture(n: int, K_star: int, dirichlet_params=None,
                      cluster_dists=None, rng: np.random.Generator | None = None,
                      one_hot: bool = False) -> KnownMixtureData:
    """Residuals drawn from a K-component mixture with known memberships.

    Memberships come from ``Dirichlet(dirichlet_params)`` (or are one-hot
    when ``one_hot``). Features are the additive log-ratios of the
    memberships, so ``pi_star`` is a deterministic function of the
    features. ``cluster_dists`` lists ``(loc, scale)`` pairs; component
    ``k`` draws ``|loc + scale * N(0, 1)|``.
    """
    rng = np.random.default_rng() if rng is None else rng
    if dirichlet_params is None:
        dirichlet_params = np.ones(K_star)
    lam = np.asarray(dirichlet_params, dtype=float)
    if lam.size != K_star:
        raise ValueError("dirichlet_params must have length K_star")
    if cluster_dists is None:
        cluster_dists = [(0.0, 1.0 + 2.0 * k) for k in range(K_star)]
    locs = np.array([c[0] for c in cluster_dists], dtype=float)
    scales = np.array([c[1] for c in cluster_dists], dtype=float)
    if K_star == 1:
        pi = np.ones((n, 1))
        features = rng.standard_normal((n, 1))
    else:
        if one_hot:
            labels = rng.choice(K_star, size=n, p=lam / lam.sum())
            # a large finite log-ratio keeps the link invertible in floats
            pi = np.full((n, K_star), 1e-12)
            pi[np.arange(n), labels] = 1.0
            pi /= pi.sum(axis=1, keepdims=True)
        else:
            pi = rng.dirichlet(lam, size=n)
            pi = np.maximum(pi, 1e-300)
            pi /= pi.sum(axis=1, keepdims=True)
        features = np.log(pi[:, :-1]) - np.log(pi[:, -1:])
        pi = pi_from_features(features)
    comp = (rng.random(n)[:, None] > np.cumsum(pi, axis=1)).sum(axis=1)
    comp = np.minimum(comp, K_star - 1)
    r = np.abs(locs[comp] + scales[comp] * rng.standard_normal(n))
    return KnownMixtureData(features, r, pi, comp)


@dataclass(frozen=True)
class HSamples:
    values: np.ndarray
    counts: np.ndarray
    rounded: bool
    lam_bar: float
    m: int

    @property
    def rate(self) -> float:
        """Rate of the limiting exponential law, 1 + lam_bar / m."""
        return 1.0 + self.lam_bar / self.m


def target_counts(lam, m: int) -> tuple[np.ndarray, bool]:
    """Round m * lam / sum(lam) to integers summing to m.

    The rounding remainder goes to the largest component.
    """
    lam = np.asarray(lam, dtype=float)
    exact = m * lam / lam.sum()
    counts = np.rint(exact).astype(np.int64)
    counts[np.argmax(lam)] += m - counts.sum()
    return counts, not np.allclose(exact, counts)


def h_samples(lam, m: int, n_samples: int, rng: np.random.Generator,
              round_counts: bool = True) -> HSamples:
    """Draws of H - H_min for the Dirichlet posterior.

    ``H = -sum_k L_k log pi_k`` with ``pi ~ Dirichlet(lam + L)`` and
    ``H_min = -m sum_k p_k log p_k`` where ``p = L / m``. With
    ``round_counts=False`` the real-valued ``L = m lam / sum(lam)`` is used.
    """
    lam = np.asarray(lam, dtype=float)
    if round_counts:
        L, rounded = target_counts(lam, m)
        L = L.astype(float)
    else:
        L, rounded = m * lam / lam.sum(), False
    pi = rng.dirichlet(lam + L, size=n_samples)
    with np.errstate(divide="ignore"):
        logpi = np.log(pi)
    keep = L > 0
    H = -(logpi[:, keep] @ L[keep])
    p = L[keep] / L.sum()
    H_min = -L.sum() * np.sum(p * np.log(p))
    return HSamples(H - H_min, L, rounded, float(lam.sum()), int(m))

"""Membership probabilities by matching residual CDFs.

Three stages: a grid of residual quantiles, cross-fitted linear
density-ratio models estimating P(R <= xi_t | X) at every grid point, and a
reconstruction of the fitted CDF vectors as convex combinations of K
cluster CDFs.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .models import FoldAssignment, Standardizer, add_intercept, kfold_split

log = logging.getLogger(__name__)

STAB = 1e-8
PENALTY_GRID = (1e-4, 1e-2, 1.0, 1e2, 1e4)
SCHEMA_VERSION = 1


class DegenerateStratum(ValueError):
    """All indicators equal; the density ratio is undefined."""


# ---------------------------------------------------------------- gridding


@dataclass(frozen=True)
class ResidualGrid:
    xi: np.ndarray
    source: np.ndarray | None = None

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float).ravel()
        if xi.size < 1 or np.any(np.diff(xi) <= 0):
            raise ValueError("grid must be nonempty and strictly increasing")
        object.__setattr__(self, "xi", xi)

    @property
    def s(self) -> int:
        return self.xi.size

    def segment_of(self, r) -> np.ndarray:
        """1-based segment index j with r in [xi_{j-1}, xi_j)."""
        return np.searchsorted(self.xi, r, side="right") + 1

    def segment_bits(self, j: int) -> np.ndarray:
        """Indicators 1{r <= xi_t} shared by every r in segment j."""
        return (np.arange(1, self.s + 1) >= j).astype(np.int8)

    def segment_bounds(self, j: int) -> tuple[float, float]:
        lo = 0.0 if j == 1 else float(self.xi[j - 2])
        hi = np.inf if j == self.s + 1 else float(self.xi[j - 1])
        return lo, hi


def make_grid(cv_residuals, s: int = 9) -> ResidualGrid:
    """Empirical quantiles of the residuals at levels 1/(s+1), ..., s/(s+1)."""
    r = np.asarray(cv_residuals, dtype=float).ravel()
    if s < 1:
        raise ValueError("s must be positive")
    if np.unique(r).size < 2:
        raise ValueError("residuals have fewer than 2 distinct values")
    levels = np.arange(1, s + 1) / (s + 1)
    xi = np.unique(np.quantile(r, levels, method="inverted_cdf"))
    if xi.size < s:
        log.warning("grid collapsed from %d to %d points", s, xi.size)
    return ResidualGrid(xi, r)


# ----------------------------------------------------------- ratio models


@dataclass(frozen=True)
class RatioModel:
    """Closed-form least-squares density ratio for one grid point.

    ``beta = ((n - n_t) / n_t) G^{-1} b`` with ``G`` the Gram matrix of the
    rows above the threshold (plus ``ridge * I``) and ``b`` the feature sum
    of the rows at or below it.
    """

    beta: np.ndarray
    n_t: int
    n: int
    gram_inv: np.ndarray
    below_sum: np.ndarray
    ridge: float
    refit: bool = False

    def g(self, x) -> np.ndarray:
        return np.maximum(np.asarray(x, dtype=float) @ self.beta, 0.0)


def _ratio_beta(gram_inv, below_sum, n_t, n):
    if n_t == 0 or n_t == n:
        raise DegenerateStratum(f"n_t={n_t} of n={n}")
    return (n - n_t) / n_t * (gram_inv @ below_sum)


def fit_ratio_model(X, indicators, penalty: float = 0.0,
                    ridge: float | None = None) -> RatioModel:
    """Fit the ratio model on design rows ``X`` (include a constant column).

    ``ridge`` overrides the Gram stabilization, which otherwise is
    ``penalty + 1e-8 * trace / d``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    ind = np.asarray(indicators).astype(bool).ravel()
    n, d = X.shape
    n_t = int(ind.sum())
    if n_t == 0 or n_t == n:
        raise DegenerateStratum(f"n_t={n_t} of n={n}")
    above = X[~ind]
    G = above.T @ above
    if ridge is None:
        ridge = penalty + STAB * np.trace(G) / d
    gram_inv = np.linalg.inv(G + ridge * np.eye(d))
    b = X[ind].sum(axis=0)
    return RatioModel(_ratio_beta(gram_inv, b, n_t, n), n_t, n, gram_inv, b,
                      float(ridge))


def smw_update(model: RatioModel, x_new, indicator_new: int,
               sign: int = 1) -> RatioModel:
    """Add (``sign=1``) or remove (``sign=-1``) one row in O(d^2).

    Rows above the threshold enter the Gram matrix through a rank-one
    Sherman-Morrison update; rows below only shift the feature sum. When
    the update is numerically unstable the Gram matrix is rebuilt from
    the cached inverse and inverted directly.
    """
    x = np.asarray(x_new, dtype=float).ravel()
    n = model.n + sign
    n_t, b, Ginv, refit = model.n_t, model.below_sum, model.gram_inv, False
    if indicator_new:
        n_t += sign
        b = b + sign * x
    else:
        u = Ginv @ x
        denom = 1.0 + sign * (x @ u)
        if denom <= 1e-10:
            G = np.linalg.inv(Ginv) + sign * np.outer(x, x)
            Ginv = np.linalg.inv(G)
            refit = True
        else:
            Ginv = Ginv - sign * np.outer(u, u) / denom
    return RatioModel(_ratio_beta(Ginv, b, n_t, n), n_t, n, Ginv, b,
                      model.ridge, refit)


def tau_from_g(g, n_t, n) -> np.ndarray:
    """Bayes-rule CDF estimate n_t g / (n - n_t + n_t g)."""
    g = np.maximum(g, 0.0)
    num = n_t * g
    return num / (n - n_t + num)


def tau_estimate(model: RatioModel, x) -> np.ndarray:
    return tau_from_g(model.g(x), model.n_t, model.n)


# ------------------------------------------------------- cross-fitting


def select_penalty(Z, indicators, folds: int = 5, rng=None,
                   grid=PENALTY_GRID) -> float:
    """Penalty minimizing the out-of-fold squared error of the CDF estimate."""
    rng = np.random.default_rng(0) if rng is None else rng
    ind = np.asarray(indicators).astype(bool)
    fa = kfold_split(len(ind), folds, rng)
    losses = []
    for lam in grid:
        err = 0.0
        for f in range(folds):
            test = fa.fold_of == f
            try:
                mdl = fit_ratio_model(Z[~test], ind[~test], penalty=lam)
                pred = tau_estimate(mdl, Z[test])
            except DegenerateStratum:
                pred = np.full(test.sum(), ind[~test].mean())
            err += np.sum((pred - ind[test]) ** 2)
        losses.append(err)
    return float(grid[int(np.argmin(losses))])


@dataclass
class CrossFitTau:
    """Cross-fitted CDF estimators on the validation set.

    Holds, for every fold ``f`` and grid point ``t``, the ratio model fitted
    on all validation rows outside ``f``. Adding a test point to every fold
    model that excludes it is a rank-one update, so the fitted CDF matrix of
    the n + 1 points for both values of the test indicator costs O(n s d)
    per test point.
    """

    scaler: Standardizer
    grid: ResidualGrid
    folds: FoldAssignment
    Z: np.ndarray            # (n, d) design with intercept
    gram_inv: np.ndarray     # (F, s, d, d)
    h: np.ndarray            # (F, s, d) = G^{-1} b
    N: np.ndarray            # (F,) rows outside the fold
    Nt: np.ndarray           # (F, s) rows at or below xi_t outside the fold
    degenerate: np.ndarray   # (F, s)
    tau_val: np.ndarray      # (n, s) cross-fitted estimates
    H: np.ndarray            # (n, s) z_i' h_{f(i), t}
    M: np.ndarray            # (n, s, d) G^{-1}_{f(i), t} z_i
    penalty: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    def design(self, X) -> np.ndarray:
        return add_intercept(self.scaler.transform(np.atleast_2d(X)))

    @classmethod
    def fit(cls, X, residuals, grid: ResidualGrid, folds: FoldAssignment,
            penalty=0.0, scaler: Standardizer | None = None) -> "CrossFitTau":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        R = np.asarray(residuals, dtype=float).ravel()
        scaler = Standardizer.fit(X) if scaler is None else scaler
        Z = add_intercept(scaler.transform(X))
        n, d = Z.shape
        s, F = grid.s, folds.folds
        penalty = np.broadcast_to(np.asarray(penalty, dtype=float), (s,)).copy()
        below = (R[:, None] <= grid.xi[None, :]).astype(float)   # (n, s)
        onehot = np.zeros((F, n))
        onehot[folds.fold_of, np.arange(n)] = 1.0
        outer = Z[:, :, None] * Z[:, None, :]                    # (n, d, d)
        # per-fold sufficient statistics, then complements
        G_fold = np.einsum("fi,it,ijk->ftjk", onehot, 1.0 - below, outer,
                           optimize=True)
        b_fold = np.einsum("fi,it,ij->ftj", onehot, below, Z, optimize=True)
        nt_fold = onehot @ below                                  # (F, s)
        n_fold = onehot.sum(axis=1)
        G = G_fold.sum(axis=0)[None] - G_fold
        b = b_fold.sum(axis=0)[None] - b_fold
        Nt = nt_fold.sum(axis=0)[None] - nt_fold
        N = n - n_fold
        trace = np.trace(G, axis1=-2, axis2=-1)
        ridge = penalty[None, :] + STAB * trace / d
        Gs = G + ridge[..., None, None] * np.eye(d)
        gram_inv = np.linalg.inv(Gs)
        h = np.einsum("ftjk,ftk->ftj", gram_inv, b)
        degenerate = (Nt == 0) | (Nt == N[:, None])
        fi = folds.fold_of
        H = np.einsum("id,itd->it", Z, h[fi])
        M = np.einsum("itjk,ik->itj", gram_inv[fi], Z)
        coef = _safe_coef(N[:, None] - Nt, Nt)
        g = coef[fi] * H
        tau = tau_from_g(g, Nt[fi], N[fi][:, None])
        tau = np.where(degenerate[fi], (Nt / N[:, None])[fi], tau)
        if degenerate.any():
            log.info("%d degenerate fold strata use constant estimates",
                     int(degenerate.sum()))
        return cls(scaler, grid, folds, Z, gram_inv, h, N.astype(float),
                   Nt, degenerate, tau, H, M, penalty)

    def test_fold(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Fold of each test point: uniform among the smallest folds."""
        sizes = self.folds.sizes()
        smallest = np.flatnonzero(sizes == sizes.min())
        return smallest[rng.integers(0, smallest.size, size=size)]

    def augmented(self, X_test, test_folds) -> tuple[np.ndarray, np.ndarray]:
        """CDF matrices of the n + 1 points for each test point.

        Returns ``(tau_above, tau_below)``, both of shape ``(T, n + 1, s)``:
        column ``t`` is computed with the test indicator ``1{R <= xi_t}``
        set to 0 and 1 respectively. The last row is the test point, whose
        own estimate comes from the fold models that exclude it.
        """
        zt = self.design(X_test)
        ft = np.asarray(test_folds)
        T = zt.shape[0]
        n, s = self.n, self.grid.s
        fi = self.folds.fold_of
        N, Nt = self.N, self.Nt
        u = np.einsum("ftjk,Tk->Tftj", self.gram_inv, zt)
        c = np.einsum("Tftj,Tj->Tft", u, zt)
        xh = np.einsum("ftj,Tj->Tft", self.h, zt)
        P = np.einsum("itd,Td->Tit", self.M, zt)
        # rows of the test point's own fold keep their base estimates
        same = fi[None, :] == ft[:, None]                       # (T, n)
        xh_i = xh[:, fi, :]                                     # (T, n, s)
        c_i = c[:, fi, :]
        Nf = N[fi][None, :, None]
        Ntf = Nt[fi][None]
        deg = self.degenerate[fi][None]
        H = self.H[None]
        # test indicator 0: the point joins the Gram matrix
        g0 = _safe_coef(Nf + 1 - Ntf, Ntf) * (H - P * xh_i / (1.0 + c_i))
        t0 = tau_from_g(g0, Ntf, Nf + 1)
        t0 = np.where(deg, Ntf / (Nf + 1), t0)
        # test indicator 1: the point joins the feature sum
        g1 = (Nf - Ntf) / (Ntf + 1) * (H + P)
        t1 = tau_from_g(g1, Ntf + 1, Nf + 1)
        t1 = np.where(deg, (Ntf + 1) / (Nf + 1), t1)
        base = self.tau_val[None]
        t0 = np.where(same[..., None], base, t0)
        t1 = np.where(same[..., None], base, t1)
        tau_test = self.own_fold_tau(zt, ft)
        above = np.concatenate([t0, tau_test[:, None, :]], axis=1)
        below = np.concatenate([t1, tau_test[:, None, :]], axis=1)
        return above, below

    def own_fold_tau(self, zt, ft) -> np.ndarray:
        """Estimates at design rows ``zt`` from the models excluding folds ``ft``."""
        N, Nt = self.N, self.Nt
        coef = _safe_coef(N[:, None] - Nt, Nt)
        g = coef[ft] * np.einsum("Tj,Ttj->Tt", zt, self.h[ft])
        tau = tau_from_g(g, Nt[ft], N[ft][:, None])
        return np.where(self.degenerate[ft], Nt[ft] / N[ft][:, None], tau)

    def segment_matrix(self, above, below, j: int) -> np.ndarray:
        """CDF matrix for responses whose residual falls in segment j."""
        bits = self.grid.segment_bits(j).astype(bool)
        return np.where(bits, below, above)


def _safe_coef(num, den):
    den = np.asarray(den, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def fit_tau_matrix(X_val, residuals, grid: ResidualGrid, x_test, folds: int = 20,
                   rng: np.random.Generator | None = None, penalty=0.0):
    """Cross-fitted CDF matrix of the n + 1 points for one test point.

    Returns ``(tau_above, tau_below, model)`` with the two ``(n + 1, s)``
    variants for the imputed test indicator set to 0 and 1.
    """
    rng = np.random.default_rng() if rng is None else rng
    fa = kfold_split(len(residuals), folds, rng)
    model = CrossFitTau.fit(X_val, residuals, grid, fa, penalty)
    ft = model.test_fold(rng, 1)
    above, below = model.augmented(np.atleast_2d(x_test), ft)
    return above[0], below[0], model


def cross_fit_tau(X, residuals, grid: ResidualGrid, folds: int,
                  rng: np.random.Generator, penalty=0.0) -> np.ndarray:
    """Out-of-fold CDF estimates ``(n, s)`` without a test point."""
    fa = kfold_split(len(residuals), folds, rng)
    return CrossFitTau.fit(X, residuals, grid, fa, penalty).tau_val


# -------------------------------------------------------------- clustering


def kmeans_pp(points: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding by D^2 sampling."""
    n = points.shape[0]
    centers = np.empty((K, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for k in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers[k] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[k]) ** 2, axis=1))
    return centers


def _recon_loss(tau, pi, gamma):
    resid = tau - pi @ gamma
    return np.einsum("...ij,...ij->...", resid, resid)


def _pi_step(tau, log_pi, gamma, steps: int):
    """Exponentiated-gradient updates of every membership row.

    Step size 0.5 / ||gamma gamma'||_2 keeps each step a descent step.
    """
    A = gamma @ np.swapaxes(gamma, -1, -2)                     # (..., K, K)
    Bm = tau @ np.swapaxes(gamma, -1, -2)                      # (..., N, K)
    eta = 0.5 / np.maximum(np.linalg.norm(A, ord=2, axis=(-2, -1)), 1e-12)
    eta = np.asarray(eta)[..., None, None]
    pi = np.exp(log_pi)
    ones = np.ones((A.shape[-1], 1))   # row sums as a matmul, faster for tiny K
    for _ in range(steps):
        log_pi = log_pi - eta * (2.0 * (pi @ A - Bm))
        # rows are normalized every step and the step is bounded, so the
        # unnormalized exponent cannot overflow
        pi = np.exp(log_pi)
        total = pi @ ones
        pi /= total
        log_pi -= np.log(total)
    return log_pi


def _gamma_step(tau, pi, gamma_prev, clamp: bool):
    """Least-squares centers given memberships, optionally clamped to [0, 1].

    A clamped solution is moved back toward the previous centers by an
    exact line search so the loss cannot increase.
    """
    PtP = np.swapaxes(pi, -1, -2) @ pi
    K = PtP.shape[-1]
    tr = np.trace(PtP, axis1=-2, axis2=-1)[..., None, None]
    PtP = PtP + 1e-12 * np.maximum(tr, 1e-300) * np.eye(K)
    gamma = np.linalg.solve(PtP, np.swapaxes(pi, -1, -2) @ tau)
    if not clamp:
        return gamma
    clamped = np.clip(gamma, 0.0, 1.0)
    moved = np.any(clamped != gamma, axis=(-2, -1))
    if not np.any(moved):
        return gamma
    direction = clamped - gamma_prev
    E = tau - pi @ gamma_prev
    PD = pi @ direction
    num = np.einsum("...ij,...ij->...", E, PD)
    den = np.einsum("...ij,...ij->...", PD, PD)
    a = np.clip(np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0), 0.0, 1.0)
    lined = gamma_prev + a[..., None, None] * direction
    return np.where(moved[..., None, None], lined, clamped)


@dataclass
class ClusterFit:
    pi: np.ndarray
    gamma: np.ndarray
    loss: float
    losses: list = field(default_factory=list)
    iterations: int = 0
    flags: tuple = ()

    def r2(self, tau) -> float:
        return reconstruction_r2(tau, self.loss)


def reconstruction_r2(tau, loss: float) -> float:
    """1 - loss / total variance of the entries around their grand mean."""
    tau = np.asarray(tau)
    tot = float(np.sum((tau - tau.mean()) ** 2))
    if tot <= 0:
        return 1.0
    return 1.0 - loss / tot


def alternate(tau, gamma, log_pi, max_iters: int = 200, tol: float = 1e-6,
              inner_steps: int = 50, clamp: bool = True, record: bool = False):
    """Alternating minimization of ||tau - pi gamma||^2.

    Works on a leading batch axis when ``gamma`` is ``(B, K, s)``; ``tau``
    may be shared ``(N, s)`` or batched ``(B, N, s)``. Each batch element
    stops once the relative loss change falls below ``tol``.
    """
    batched = gamma.ndim == 3
    if not batched:
        gamma, log_pi = gamma[None], log_pi[None]
        tau = tau[None] if tau.ndim == 2 else tau
    B = gamma.shape[0]
    tau_b = np.broadcast_to(tau, (B,) + tau.shape[-2:]) if tau.shape[0] != B else tau
    gamma, log_pi = gamma.copy(), log_pi.copy()
    loss = _recon_loss(tau_b, np.exp(log_pi), gamma)
    history = [loss.copy()] if record else []
    active = np.ones(B, dtype=bool)
    iters = np.zeros(B, dtype=int)
    for _ in range(max_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        tb, g = tau_b[idx], gamma[idx]
        lp = _pi_step(tb, log_pi[idx], g, inner_steps)
        pi = np.exp(lp)
        if record:
            mid = _recon_loss(tb, pi, g)
        g = _gamma_step(tb, pi, g, clamp)
        new = _recon_loss(tb, pi, g)
        log_pi[idx], gamma[idx] = lp, g
        rel = np.abs(loss[idx] - new) / np.maximum(loss[idx], 1e-300)
        loss[idx] = new
        iters[idx] += 1
        active[idx[rel < tol]] = False
        if record:
            history.append((idx.copy(), mid, new.copy()))
    if not batched:
        return gamma[0], log_pi[0], float(loss[0]), history, int(iters[0])
    return gamma, log_pi, loss, history, iters


def cluster_reconstruct(tau, K: int, rng: np.random.Generator, max_iters: int = 200,
                        tol: float = 1e-6, inner_steps: int = 50, restarts: int = 3,
                        clamp: bool = True) -> ClusterFit:
    """Fit memberships ``pi`` (rows on the simplex) and centers ``gamma``.

    Centers start from k-means++ seeds; the best of ``restarts`` runs of
    alternating optimization is returned.
    """
    tau = np.asarray(tau, dtype=float)
    if K < 1:
        raise ValueError("K must be positive")
    if not np.all(np.isfinite(tau)):
        raise ValueError("tau rows must be finite")
    N = tau.shape[0]
    flags = []
    n_distinct = np.unique(np.round(tau, 12), axis=0).shape[0]
    if K > n_distinct:
        flags.append("duplicate-centers")
        log.warning("K=%d exceeds %d distinct rows", K, n_distinct)
    if K == 1:
        gamma = tau.mean(axis=0, keepdims=True)
        if clamp:
            gamma = np.clip(gamma, 0.0, 1.0)
        pi = np.ones((N, 1))
        loss = float(_recon_loss(tau, pi, gamma))
        return ClusterFit(pi, gamma, loss, [loss], 0, tuple(flags))
    seeds = np.stack([kmeans_pp(tau, K, rng) for _ in range(restarts)])
    log_pi0 = np.full((restarts, N, K), -np.log(K))
    gamma, log_pi, loss, hist, iters = alternate(
        tau, seeds, log_pi0, max_iters, tol, inner_steps, clamp, record=True)
    best = int(np.argmin(loss))
    losses = [float(hist[0][best])]
    for idx, mid, new in hist[1:]:
        pos = np.flatnonzero(idx == best)
        if pos.size:
            losses += [float(mid[pos[0]]), float(new[pos[0]])]
    return ClusterFit(np.exp(log_pi[best]), gamma[best], float(loss[best]),
                      losses, int(iters[best]), tuple(flags))


# --------------------------------------------------------- fitted summary


@dataclass(frozen=True)
class MembershipModel:
    grid: ResidualGrid
    gamma: np.ndarray
    pi: np.ndarray
    tau: np.ndarray
    loss: float

    def to_json(self) -> str:
        return json.dumps({
            "schema_version": SCHEMA_VERSION,
            "grid": self.grid.xi.tolist(),
            "gamma": np.asarray(self.gamma).tolist(),
            "pi": np.asarray(self.pi).tolist(),
            "loss": float(self.loss),
        })

    @classmethod
    def from_json(cls, text: str) -> "MembershipModel":
        d = json.loads(text)
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {d.get('schema_version')}")
        pi = np.asarray(d["pi"], dtype=float)
        return cls(ResidualGrid(d["grid"]), np.asarray(d["gamma"], dtype=float),
                   pi, np.empty((pi.shape[0], 0)), float(d["loss"]))

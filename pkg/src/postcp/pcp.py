"""Posterior conformal intervals.

A fitted :class:`PcpModel` holds everything computed from the training and
validation splits. Intervals for new points are assembled by weighting
validation residuals with the membership-product weights of a multinomial
draw from the test point's estimated memberships.

Three membership modes are supported:

``"project"`` (default)
    Cluster centers are fitted once on the validation CDF matrix. Every one
    of the n + 1 rows is mapped to the simplex by the same
    exponentiated-gradient projection onto those centers. The test row's
    cross-fitted CDF vector does not depend on its own response, so one draw
    serves every response segment.
``"augmented"``
    Validation rows use the rank-one updated CDF estimates that include the
    test point with the segment's imputed indicators, then are projected
    onto the fixed centers. Segments are processed backward with early stop.
``"refit"``
    As ``"augmented"``, but the centers and memberships of all n + 1 rows are
    re-optimized per segment, warm-started from the validation fit.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import (PcpConfig, WeightedEmpiricalDist, kl_divergence, kl_limit_weights,
                   kl_weights, multinomial_draw, normalize_log_weights, rng_stream,
                   weighted_quantile, DegenerateWeights)
from .hyper import HyperSelection, select_K, select_m
from .mixture import (ClusterFit, CrossFitTau, MembershipModel, _pi_step, alternate,
                      cluster_reconstruct, make_grid, select_penalty)
from .models import Standardizer, add_intercept, cross_val_predict, kfold_split, make_regressor
from .scp_baselines import PredictionInterval, batch_quantile

log = logging.getLogger(__name__)

PROJECT_STEPS = 200
MODES = ("project", "augmented", "refit")


# ------------------------------------------------------------ union logic


@dataclass
class PcpTrace:
    segment_radius: dict = field(default_factory=dict)   # j -> weighted quantile
    counts: dict = field(default_factory=dict)           # j -> draw counts
    j_star: int = 0
    flags: list = field(default_factory=list)
    pieces: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "segment_radius": {str(k): _jsonable(v) for k, v in self.segment_radius.items()},
            "counts": {str(k): list(map(int, v)) for k, v in self.counts.items()},
            "j_star": self.j_star, "flags": self.flags,
            "pieces": [[_jsonable(a), _jsonable(b)] for a, b in self.pieces],
        })


def _jsonable(x):
    x = float(x)
    return "inf" if np.isinf(x) else x


def segment_bounds(xi, j: int) -> tuple[float, float]:
    s = len(xi)
    lo = 0.0 if j == 1 else float(xi[j - 2])
    hi = np.inf if j == s + 1 else float(xi[j - 1])
    return lo, hi


def segment_piece(xi, j: int, q: float):
    """Residual range of segment j kept by radius q, or ``None`` if empty."""
    lo, hi = segment_bounds(xi, j)
    if q < lo:
        return None
    return lo, min(q, hi)


def union_radius(xi, radius_of, early_stop: bool = True):
    """Combine per-segment radii into one interval radius.

    ``radius_of(j)`` returns the weighted quantile for segment j and is
    evaluated lazily from j = s + 1 downward. With ``early_stop`` the first
    nonempty segment j* ends the scan and every lower segment is included
    whole. Returns ``(radius, j_star, gapped, pieces)``.
    """
    s = len(xi)
    pieces, j_star = [], 0
    for j in range(s + 1, 0, -1):
        piece = segment_piece(xi, j, radius_of(j))
        if piece is None:
            continue
        if j_star == 0:
            j_star = j
            if early_stop:
                pieces.append(piece)
                pieces += [segment_bounds(xi, k) for k in range(j - 1, 0, -1)]
                break
        pieces.append(piece)
    pieces.sort()
    radius = max(p[1] for p in pieces)
    gapped = any(b[0] > a[1] for a, b in zip(pieces, pieces[1:]))
    return radius, j_star, gapped, pieces


# --------------------------------------------------------- oracle versions


def oracle_pcp_interval(pi_star, residuals, mu_hat_at_x: float, alpha: float, m: int,
                        rng: np.random.Generator) -> PredictionInterval:
    """Interval with known memberships; the last row of ``pi_star`` is the test point."""
    pi_star = np.asarray(pi_star, dtype=float)
    draw = multinomial_draw(pi_star[-1], m, rng)
    w = kl_weights(pi_star, draw)
    q = weighted_quantile(WeightedEmpiricalDist.with_test_weight(residuals, w), 1 - alpha)
    return PredictionInterval.symmetric(mu_hat_at_x, q, {"counts": draw.counts.tolist()})


def oracle_radii(pi_val, pi_test, residuals, alpha: float, m: float, rng,
                 randomized: bool = True, max_cells: int = 4_000_000) -> np.ndarray:
    """Vectorized radii for many test points sharing one validation set.

    Test points are processed in chunks of at most ``max_cells`` weights.
    With ``randomized=False`` the weights are ``exp(-m KL(pi_test || pi_i))``
    and ``m`` may be any positive real.
    """
    pi_val = np.asarray(pi_val, dtype=float)
    pi_test = np.atleast_2d(np.asarray(pi_test, dtype=float))
    residuals = np.asarray(residuals, dtype=float)
    with np.errstate(divide="ignore"):
        log_all_val = np.log(pi_val)
        log_all_test = np.log(pi_test)
    order = np.argsort(residuals, kind="stable")
    sorted_r = residuals[order]
    if randomized:
        counts = rng.multinomial(int(m), pi_test)
    step = max(1, max_cells // max(1, residuals.size))
    out = np.empty(pi_test.shape[0])
    for lo in range(0, pi_test.shape[0], step):
        sl = slice(lo, lo + step)
        if randomized:
            logw_val = _masked_matmul(counts[sl], log_all_val)
            logw_test = _masked_matmul(counts[sl], log_all_test[sl], rowwise=True)
        else:
            logw_val = -m * _kl_matrix(pi_test[sl], pi_val)
            logw_test = np.zeros(logw_val.shape[0])
        W = normalize_log_weights(np.column_stack([logw_val, logw_test]))
        out[sl] = batch_quantile(sorted_r, W[:, :-1][:, order], 1.0 - alpha)
    return out


def _masked_matmul(counts, log_pi, rowwise: bool = False):
    c = counts.astype(float)
    finite = np.where(np.isneginf(log_pi), 0.0, log_pi)
    if rowwise:
        out = np.sum(c * finite, axis=1)
        hit = np.any((c > 0) & np.isneginf(log_pi), axis=1)
    else:
        out = c @ finite.T
        hit = (c > 0).astype(float) @ np.isneginf(log_pi).T.astype(float) > 0
    return np.where(hit, -np.inf, out)


def _kl_matrix(P, Q):
    """KL(P_t || Q_i) for all pairs, infinite where Q misses mass of P."""
    with np.errstate(divide="ignore", invalid="ignore"):
        logP = np.where(P > 0, np.log(P), 0.0)
        logQ = np.log(Q)
    ent = np.sum(P * logP, axis=1)[:, None]
    cross = _masked_matmul(P, logQ)
    return ent - cross


def nonrandomized_kl_interval(pi, residuals, mu_hat_at_x: float, alpha: float,
                              m: float) -> PredictionInterval:
    """Deterministic weights exp(-m KL(pi_test || pi_i)); last row is the test point."""
    pi = np.asarray(pi, dtype=float)
    w = kl_limit_weights(pi, pi[-1], m)
    q = weighted_quantile(WeightedEmpiricalDist.with_test_weight(residuals, w), 1 - alpha)
    return PredictionInterval.symmetric(mu_hat_at_x, q)


def finite_length_probability(pi_points, tilde_pi_test, m: int, lambda_bar: float,
                              alpha: float) -> float:
    """Leading term of the probability that the interval is finite.

    ``min{(alpha / (1 - alpha)) sum_i exp(-m KL(tilde_pi || pi_i)), 1}``
    raised to the power ``(m + lambda_bar) / m``.
    """
    pts = np.atleast_2d(np.asarray(pi_points, dtype=float))
    kl = np.array([kl_divergence(tilde_pi_test, p) for p in pts])
    total = np.sum(np.exp(-m * kl))
    base = min(alpha / (1.0 - alpha) * total, 1.0)
    return float(base ** ((m + lambda_bar) / m))


# ------------------------------------------------------------ fitted model


def project_memberships(tau, gamma, steps: int = PROJECT_STEPS) -> np.ndarray:
    """Map CDF rows to the simplex by exponentiated gradient from uniform.

    Each row is treated identically and independently, so the map is
    symmetric in the rows it is applied to. Returns log memberships.
    """
    tau = np.asarray(tau, dtype=float)
    K = gamma.shape[-2]
    log_pi = np.full(tau.shape[:-1] + (K,), -np.log(K))
    if K == 1:
        return log_pi
    return _pi_step(tau, log_pi, gamma, steps)


@dataclass
class PcpModel:
    config: PcpConfig
    mu_hat: object
    grid: object
    crossfit: CrossFitTau
    cluster: ClusterFit
    log_pi_val: np.ndarray
    residuals: np.ndarray
    hyper: HyperSelection | None = None
    mode: str = "project"
    project_steps: int = PROJECT_STEPS
    refit_iters: int = 3

    @property
    def K(self) -> int:
        return self.cluster.gamma.shape[0]

    @property
    def m(self) -> int:
        return int(self.config.m)

    def membership_model(self, include_tau: bool = True) -> MembershipModel:
        tau = self.crossfit.tau_val if include_tau else np.empty((0, self.grid.s))
        return MembershipModel(self.grid, self.cluster.gamma, np.exp(self.log_pi_val),
                               tau, self.cluster.loss)

    @classmethod
    def fit(cls, train, val, config: PcpConfig, regressor=None, mode: str = "project",
            mu_hat=None, project_steps: int = PROJECT_STEPS, refit_iters: int = 3,
            tune_penalty: bool = True, K_max: int = 10) -> "PcpModel":
        """Fit the predictor, grid, CDF estimators, hyperparameters and clusters.

        ``train`` provides the predictor, the residual grid and (when
        ``config.K`` or ``config.m`` is unset) the hyperparameter selection;
        ``val`` provides the residuals and membership estimates used for
        intervals.
        """
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        seed = config.seed
        fit_fn = regressor if callable(regressor) else make_regressor(regressor)
        Xp, yp = train.features, train.responses
        if mu_hat is None:
            mu_hat = fit_fn(Xp, yp)
        folds_p = kfold_split(len(yp), config.folds, rng_stream(seed, 1))
        r_prime = np.abs(yp - cross_val_predict(fit_fn, Xp, yp, folds_p))
        grid = make_grid(r_prime, config.s)
        scaler_p = Standardizer.fit(Xp)
        Zp = add_intercept(scaler_p.transform(Xp))
        if tune_penalty:
            penalty = np.array([
                select_penalty(Zp, r_prime <= xi, rng=rng_stream(seed, 2, t))
                for t, xi in enumerate(grid.xi)])
        else:
            penalty = np.zeros(grid.s)
        hyper = None
        K, m = config.K, config.m
        if K is None or m is None:
            tau_p = CrossFitTau.fit(Xp, r_prime, grid, folds_p, penalty, scaler_p).tau_val
            if K is None:
                K, r2 = select_K(tau_p, K_max, rng_stream(seed, 3))
            else:
                r2 = {}
            cl_p = cluster_reconstruct(tau_p, K, rng_stream(seed, 4))
            flags = ()
            if m is None:
                pi_p = np.exp(project_memberships(tau_p, cl_p.gamma))
                m, trace, flags = select_m(pi_p, seed=seed)
            else:
                trace = {}
            hyper = HyperSelection(K, m, r2, trace, tuple(flags))
            config = PcpConfig(config.alpha, K, m, config.s, config.folds, config.seed)
        R = np.abs(val.responses - mu_hat.predict(val.features))
        folds_v = kfold_split(len(R), config.folds, rng_stream(seed, 5))
        cf = CrossFitTau.fit(val.features, R, grid, folds_v, penalty)
        cl = cluster_reconstruct(cf.tau_val, config.K, rng_stream(seed, 6))
        log_pi_val = project_memberships(cf.tau_val, cl.gamma, project_steps)
        return cls(config, mu_hat, grid, cf, cl, log_pi_val, R, hyper, mode,
                   project_steps, refit_iters)

    # ------------------------------------------------------------ intervals

    def intervals(self, X_test, seed: int | None = None, offset: int = 0,
                  early_stop: bool = True, chunk: int = 100) -> list[PredictionInterval]:
        """PCP intervals for every row of ``X_test``.

        Test point ``offset + t`` draws from its own random stream, so
        results do not depend on how the rows are batched.
        """
        X_test = np.atleast_2d(np.asarray(X_test, dtype=float))
        seed = self.config.seed if seed is None else seed
        mu = self.mu_hat.predict(X_test)
        out = []
        for lo in range(0, X_test.shape[0], chunk):
            Xc = X_test[lo:lo + chunk]
            ids = np.arange(lo, lo + Xc.shape[0]) + offset
            if self.mode == "project":
                out += self._project_chunk(Xc, mu[lo:lo + chunk], ids, seed)
            else:
                out += self._segment_chunk(Xc, mu[lo:lo + chunk], ids, seed, early_stop)
        return out

    def interval(self, x_test, rng_seed: int | None = None, index: int = 0,
                 early_stop: bool = True) -> PredictionInterval:
        return self.intervals(np.atleast_2d(x_test), rng_seed, index, early_stop)[0]

    def _test_folds(self, ids, seed):
        return np.array([self.crossfit.test_fold(rng_stream(seed, 11, int(i)), 1)[0]
                         for i in ids])

    def _weights_quantile(self, log_pi_rows, counts, sorted_idx):
        """log_pi_rows: (T, n+1, K); counts: (T, K)."""
        c = counts.astype(float)
        logw = np.einsum("tik,tk->ti", log_pi_rows, c)
        degenerate = ~np.isfinite(logw.max(axis=1))
        logw[degenerate] = 0.0
        W = normalize_log_weights(logw)
        q = batch_quantile(self.residuals[sorted_idx], W[:, :-1][:, sorted_idx],
                           1.0 - self.config.alpha)
        return q, W, degenerate

    def _draw(self, log_pi_test, ids, seed, j):
        pi = np.exp(log_pi_test)
        pi /= pi.sum(axis=1, keepdims=True)
        return np.stack([multinomial_draw(p, self.m, rng_stream(seed, 12, int(i), j)).counts
                         for p, i in zip(pi, ids)])

    def _project_chunk(self, Xc, mu, ids, seed):
        cf = self.crossfit
        ft = self._test_folds(ids, seed)
        zt = cf.design(Xc)
        # the test row is estimated by the fold models that exclude it
        tau_test = cf.own_fold_tau(zt, ft)
        lp_test = project_memberships(tau_test, self.cluster.gamma, self.project_steps)
        counts = self._draw(lp_test, ids, seed, 0)
        T = Xc.shape[0]
        rows = np.concatenate([np.broadcast_to(self.log_pi_val, (T,) + self.log_pi_val.shape),
                               lp_test[:, None, :]], axis=1)
        order = np.argsort(self.residuals, kind="stable")
        q, _, deg = self._weights_quantile(rows, counts, order)
        res = []
        for t in range(T):
            flags = ("degenerate-weights",) if deg[t] else ()
            radius = np.inf if deg[t] else q[t]
            trace = {"counts": counts[t].tolist(), "pi_test": np.exp(lp_test[t]).tolist()}
            res.append(PredictionInterval.symmetric(mu[t], radius, trace, flags))
        return res

    def _segment_chunk(self, Xc, mu, ids, seed, early_stop):
        cf, grid = self.crossfit, self.grid
        ft = self._test_folds(ids, seed)
        above, below = cf.augmented(Xc, ft)
        T = Xc.shape[0]
        order = np.argsort(self.residuals, kind="stable")
        cache = {}

        def segment(j):
            if j not in cache:
                tau_j = cf.segment_matrix(above, below, j)
                log_pi = self._segment_memberships(tau_j, seed, j)
                counts = self._draw(log_pi[:, -1], ids, seed, j)
                q, _, deg = self._weights_quantile(log_pi, counts, order)
                q = np.where(deg, np.inf, q)
                cache[j] = (q, counts, deg)
            return cache[j]

        # evaluate segments backward for all points together, stopping once
        # every point has found its first nonempty segment
        s = grid.s
        done = np.zeros(T, dtype=bool)
        for j in range(s + 1, 0, -1):
            q, _, _ = segment(j)
            lo, _ = segment_bounds(grid.xi, j)
            done |= q >= lo
            if early_stop and done.all():
                break
        res = []
        for t in range(T):
            trace = PcpTrace()

            def radius_of(j, t=t, trace=trace):
                q, counts, deg = segment(j)
                trace.segment_radius[j] = float(q[t])
                trace.counts[j] = counts[t]
                if deg[t]:
                    trace.flags.append(f"degenerate-weights@{j}")
                return q[t]

            radius, j_star, gapped, pieces = union_radius(grid.xi, radius_of, early_stop)
            trace.j_star, trace.pieces = j_star, pieces
            flags = tuple(trace.flags) + (("gapped",) if gapped else ())
            res.append(PredictionInterval.symmetric(mu[t], radius, trace, flags))
        return res

    def _segment_memberships(self, tau_j, seed, j):
        gamma = self.cluster.gamma
        if self.mode == "augmented":
            return project_memberships(tau_j, gamma, self.project_steps)
        T = tau_j.shape[0]
        lp0 = np.concatenate(
            [np.broadcast_to(self.log_pi_val, (T,) + self.log_pi_val.shape),
             project_memberships(tau_j[:, -1], gamma, self.project_steps)[:, None]], axis=1)
        g0 = np.broadcast_to(gamma, (T,) + gamma.shape).copy()
        _, log_pi, _, _, _ = alternate(tau_j, g0, lp0, max_iters=self.refit_iters)
        return log_pi


def pcp_interval(model: PcpModel, x_test, rng_seed: int | None = None,
                 index: int = 0) -> PredictionInterval:
    """Single PCP interval from a fitted model."""
    return model.interval(x_test, rng_seed, index)


def scp_equivalent_weights(n: int) -> np.ndarray:
    """Uniform weights that make any weighted construction reduce to SCP."""
    return np.full(n + 1, 1.0 / (n + 1))


__all__ = ["PcpModel", "PcpTrace", "pcp_interval", "oracle_pcp_interval",
           "nonrandomized_kl_interval", "finite_length_probability", "union_radius",
           "project_memberships", "oracle_radii", "DegenerateWeights"]

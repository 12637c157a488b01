"""Reproducible studies behind the acceptance checks and the scripts.

Each function draws everything from ``rng_stream(seed, ...)`` so a study
is a pure function of its arguments.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .classify import gen_calibrated_classifier, level_adaptive_sets
from .core import PcpConfig, rng_stream
from .evaluation import calibration_curve, local_coverage
from .experiment import PcpSection, run_methods
from .fairness import (equalized_pcp_intervals, fit_propensity, gen_fairness_data,
                       generalized_covariance)
from .models import make_regressor
from .pcp import PcpModel, _kl_matrix, oracle_radii
from .scp_baselines import scp_radius
from .synthetic import gen_counterexample, gen_known_mixture, gen_setting, h_samples

LOCAL_BAND = (0.85, 0.95)


def _map(fn, items, jobs):
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


# ------------------------------------------------------ setting 1 studies


def _setting_rep(args):
    rep, seed, sizes, methods, mode = args
    rng = rng_stream(seed, rep)
    tr, va, te = (gen_setting(mode, n, rng) for n in sizes)
    res, _ = run_methods(tr, va, te, methods, 0.1, PcpSection(), int(seed * 1000 + rep))
    return te.features[:, 0], {k: r.covered for k, r in res.items()}


def marginal_study(reps: int = 100, seed: int = 0, sizes=(1000, 1000, 1000),
                   methods=("scp", "rlcp", "pcp"), mode: int = 1, jobs: int = 1) -> dict:
    """Per-repetition marginal coverage for each method."""
    out = _map(_setting_rep, [(r, seed, sizes, methods, mode) for r in range(reps)], jobs)
    return {m: np.array([o[1][m].mean() for o in out]) for m in methods}


@dataclass
class LocalCurves:
    positions: np.ndarray
    curves: dict            # method -> (reps, points) local coverage

    def mean(self, method) -> np.ndarray:
        return self.curves[method].mean(axis=0)

    def in_band(self, method, band=LOCAL_BAND) -> float:
        c = self.mean(method)
        return float(np.mean((c >= band[0]) & (c <= band[1])))

    def single_run_in_band(self, method, band=LOCAL_BAND) -> np.ndarray:
        c = self.curves[method]
        return np.mean((c >= band[0]) & (c <= band[1]), axis=1)


def local_study(reps: int = 10, seed: int = 1, sizes=(1000, 1000, 5000), window: int = 250,
                points: int = 50, methods=("scp", "pcp"), mode: int = 1,
                jobs: int = 1) -> LocalCurves:
    """Local coverage along the first feature, one curve per repetition."""
    pos = np.linspace(0.0, 8.0, points)
    out = _map(_setting_rep, [(r, seed, sizes, methods, mode) for r in range(reps)], jobs)
    curves = {m: np.array([local_coverage(v, cov[m], window, pos)[1] for v, cov in out])
              for m in methods}
    return LocalCurves(pos, curves)


def contiguous_exits(curve, positions, band=LOCAL_BAND) -> list[tuple[float, float]]:
    """Maximal runs of positions where the curve leaves the band."""
    out_ = (curve < band[0]) | (curve > band[1])
    runs, start = [], None
    for i, flag in enumerate(out_):
        if flag and start is None:
            start = i
        if not flag and start is not None:
            runs.append((positions[start], positions[i - 1]))
            start = None
    if start is not None:
        runs.append((positions[start], positions[-1]))
    return runs


def _pac_rep(args):
    rep, seed, n, n_test = args
    rng = rng_stream(seed, rep)
    tr, va, te = gen_setting(1, n, rng), gen_setting(1, n, rng), gen_setting(1, n_test, rng)
    res, model = run_methods(tr, va, te, ("pcp",), 0.1, PcpSection(), int(seed * 1000 + rep))
    return 1.0 - res["pcp"].covered.mean(), model.K, model.m


def pac_study(reps: int = 200, seed: int = 3, n: int = 2000, n_test: int = 1000,
              jobs: int = 1) -> np.ndarray:
    """Per-repetition miscoverage, each estimated on fresh test points.

    Returns an array of rows ``(miscoverage, K, m)``.
    """
    return np.array(_map(_pac_rep, [(r, seed, n, n_test) for r in range(reps)], jobs))


@dataclass
class TimingResult:
    sizes: np.ndarray
    seconds: np.ndarray

    @property
    def r2(self) -> float:
        slope, icpt, r, _, _ = stats.linregress(self.sizes, self.seconds)
        return float(r * r)


def timing_study(sizes=(2000, 4000, 6000, 8000, 10000), n_test: int = 1000, K: int = 3,
                 m: int = 100, seed: int = 4, repeats: int = 3) -> TimingResult:
    """Time the PCP fit plus ``n_test`` intervals at each validation size.

    The predictor is ridge regression and the hyperparameters are fixed, so
    the timing isolates the interval construction. Each size reports the
    median of ``repeats`` runs.
    """
    reg = make_regressor({"name": "ridge", "penalty": 1.0})
    secs = []
    for i, n in enumerate(sizes):
        rng = rng_stream(seed, i)
        tr, va, te = gen_setting(1, n, rng), gen_setting(1, n, rng), gen_setting(1, n_test, rng)
        mu = reg(tr.features, tr.responses)
        runs = []
        for r in range(repeats):
            t0 = time.perf_counter()
            model = PcpModel.fit(tr, va, PcpConfig(K=K, m=m, seed=seed + r), reg, mu_hat=mu)
            model.intervals(te.features)
            runs.append(time.perf_counter() - t0)
        secs.append(float(np.median(runs)))
    return TimingResult(np.asarray(sizes, dtype=float), np.array(secs))


# -------------------------------------------------- randomization studies


@dataclass
class CounterexampleResult:
    nonrandomized: float
    randomized: float
    by_x: dict


def counterexample_study(n: int = 10000, n_test: int = 10000, alpha: float = 0.1,
                         seed: int = 5, symmetric: bool = False, m: int = 1) -> CounterexampleResult:
    """Miscoverage of the deterministic KL interval and of the randomized one."""
    rng = rng_stream(seed, 0)
    val = gen_counterexample(n, rng, symmetric=symmetric)
    te = gen_counterexample(n_test, rng, symmetric=symmetric)
    miss = {}
    for key, rnd in (("nonrandomized", False), ("randomized", True)):
        q = oracle_radii(val.pi, te.pi, val.residuals, alpha, m, rng_stream(seed, 1), rnd)
        miss[key] = te.residuals > q
    by_x = {k: [float(v[te.x == x].mean()) for x in (0, 1)] for k, v in miss.items()}
    return CounterexampleResult(float(miss["nonrandomized"].mean()),
                                float(miss["randomized"].mean()), by_x)


def counterexample_bound(rho: float = 0.4, a: float = 0.8, alpha: float = 0.1) -> float:
    """Population miscoverage of the deterministic KL interval, m = 1.

    For x = 1 the weights are 1 on the x = 1 points and ``a`` on the x = 0
    points, whose residuals all lie below; for x = 0 only the x = 0 points
    carry weight. Valid when the x = 0 share of the weight stays below
    ``1 - alpha``.
    """
    mass1 = rho / (rho + a * (1.0 - rho))
    low = 1.0 - mass1
    miss1 = 1.0 - (1.0 - alpha - low) / mass1
    return rho * miss1 + (1.0 - rho) * alpha


@dataclass
class HCheck:
    lam: tuple
    ks: float
    mean: float
    se: float
    target_mean: float
    exact_mean: float
    counts: np.ndarray
    rounded: bool

    @property
    def mean_z(self) -> float:
        return (self.mean - self.target_mean) / self.se


def exact_h_mean(lam, L) -> float:
    """Exact mean of H - H_min under Dirichlet(lam + L) via digamma."""
    lam = np.asarray(lam, dtype=float)
    L = np.asarray(L, dtype=float)
    keep = L > 0
    total = lam.sum() + L.sum()
    eh = float(np.sum(L[keep] * (special.digamma(total) - special.digamma(lam[keep] + L[keep]))))
    p = L[keep] / L.sum()
    return eh + L.sum() * float(np.sum(p * np.log(p)))


def h_study(lams=((2, 2, 20), (2, 5, 5), (1, 1, 1)), m: int = 20, n_samples: int = 5000,
            seed: int = 6, round_counts: bool = False) -> list[HCheck]:
    """KS distance of H - H_min to the limiting exponential law."""
    out = []
    for i, lam in enumerate(lams):
        hs = h_samples(lam, m, n_samples, rng_stream(seed, i), round_counts)
        ks = stats.kstest(hs.values, stats.expon(scale=1.0 / hs.rate).cdf).statistic
        v = hs.values
        out.append(HCheck(tuple(lam), float(ks), float(v.mean()),
                          float(v.std(ddof=1) / np.sqrt(v.size)), 1.0 / hs.rate,
                          exact_h_mean(lam, hs.counts), hs.counts, hs.rounded))
    return out


# ------------------------------------------------------ coverage bounds


@dataclass
class BoundCheck:
    miscoverage: np.ndarray
    bound: np.ndarray
    se: np.ndarray

    @property
    def excess(self) -> np.ndarray:
        return self.miscoverage - (self.bound + 3.0 * self.se)


MIXTURE_COMPONENTS = ((0.0, 1.0), (0.0, 3.0), (4.0, 2.0))


def bound_study(one_hot: bool, n: int = 500, m: float = 20, n_draws: int = 2000,
                buckets: int = 50, alpha: float = 0.1, seed: int = 7,
                dirichlet=(1.0, 1.0, 1.0), components=MIXTURE_COMPONENTS) -> BoundCheck:
    """Conditional miscoverage of the KL interval against its gap bounds.

    Validation memberships are fixed and ``buckets`` test memberships are
    drawn from the same law. For every test point the residuals of all n + 1
    points are redrawn ``n_draws`` times from the known mixture, so the
    estimate is conditional on the features. The dense regime uses
    ``alpha + 2 sum_i w_i ||pi_i - pi_test||_1``; the one-hot regime uses
    ``alpha sum_k pi_k(test) / sum_{i<=n} w_i pi_ik`` over the components
    the test point occupies.
    """
    rng = rng_stream(seed, int(one_hot))
    K = len(components)
    val = gen_known_mixture(n, K, dirichlet, components, rng, one_hot=one_hot)
    test = gen_known_mixture(buckets, K, dirichlet, components, rng, one_hot=one_hot)
    P = val.pi_star
    locs = np.array([c[0] for c in components])
    scales = np.array([c[1] for c in components])
    mis, bnd, se = np.empty(buckets), np.empty(buckets), np.empty(buckets)
    for b in range(buckets):
        pt = test.pi_star[b]
        lw = np.append(-m * _kl_matrix(pt[None], P)[0], 0.0)
        w = np.exp(lw - lw.max())
        w /= w.sum()
        if one_hot:
            # floor-level entries stand for exact zeros of the one-hot law
            occ = pt > 1e-6
            bnd[b] = alpha * np.sum(pt[occ] / (w[:-1] @ P[:, occ]))
        else:
            bnd[b] = alpha + 2.0 * np.sum(w[:-1] * np.abs(P - pt).sum(axis=1))
        allpi = np.vstack([P, pt])
        u = rng.random((n_draws, n + 1, 1))
        comp = np.minimum((u > np.cumsum(allpi, axis=1)[None]).sum(axis=2), K - 1)
        R = np.abs(locs[comp] + scales[comp] * rng.standard_normal((n_draws, n + 1)))
        order = np.argsort(R[:, :n], axis=1, kind="stable")
        Rs = np.take_along_axis(R[:, :n], order, axis=1)
        cum = np.cumsum(w[:-1][order], axis=1)
        idx = np.sum(cum < 1.0 - alpha - 1e-12, axis=1)
        q = np.where(idx < n, Rs[np.arange(n_draws), np.minimum(idx, n - 1)], np.inf)
        mis[b] = np.mean(R[:, n] > q)
        p = min(bnd[b], 1.0)
        se[b] = np.sqrt(p * (1.0 - p) / n_draws)
    return BoundCheck(mis, bnd, se)


# -------------------------------------------------------------- fairness


@dataclass
class FairnessResult:
    pcp_subgroup: float
    partition_subgroup: float
    subgroup_size: int
    covariance: np.ndarray
    covariance_partition: np.ndarray

    @staticmethod
    def _z(c):
        return float(c.mean() / (c.std(ddof=1) / np.sqrt(c.size)))

    @property
    def z(self) -> float:
        """Mean covariance over repetitions in units of its standard error."""
        return self._z(self.covariance)

    @property
    def z_partition(self) -> float:
        return self._z(self.covariance_partition)


def fairness_study(reps: int = 20, seed: int = 8, m: int = 50, theta: float = 0.5,
                   sizes=(2000, 2000, 5000), alpha: float = 0.1) -> FairnessResult:
    """Coverage in the (A = 1, e~ < theta) subgroup and the covariance diagnostic.

    Counts in the subgroup are pooled over repetitions. The covariance is
    computed per repetition on the test points, half of which fit the two
    conditional expectations.
    """
    reg = make_regressor({"name": "knn", "k": 20})
    hit_p = hit_s = total = 0
    cov_p, cov_s = [], []
    for rep in range(reps):
        rng = rng_stream(seed, rep)
        tr, va, te = (gen_fairness_data(n, rng)[0] for n in sizes)
        mu = reg(tr.features, tr.responses)
        prop = fit_propensity(tr.features, tr.group)
        R = np.abs(va.responses - mu.predict(va.features))
        mt = mu.predict(te.features)
        ivs, L = equalized_pcp_intervals(R, va.group, prop.predict(va.features),
                                         prop.predict(te.features), te.group, mt, alpha, m,
                                         rng_stream(seed, rep, 1))
        covered = np.array([iv.contains(y) for iv, y in zip(ivs, te.responses)])
        radius = {a: scp_radius(R[va.group == a], alpha) for a in (0, 1)}
        r_part = np.array([radius[a] for a in te.group])
        covered_part = np.abs(te.responses - mt) <= r_part
        sub = (te.group == 1) & (L / m < theta)
        hit_p += covered[sub].sum()
        hit_s += covered_part[sub].sum()
        total += sub.sum()
        upper = np.array([iv.upper for iv in ivs])
        cov_p.append(generalized_covariance(upper, te.group, te.features,
                                            rng=rng_stream(seed, rep, 2)).covariance)
        cov_s.append(generalized_covariance(mt + r_part, te.group, te.features,
                                            rng=rng_stream(seed, rep, 2)).covariance)
    return FairnessResult(hit_p / total, hit_s / total, int(total), np.array(cov_p),
                          np.array(cov_s))


# -------------------------------------------------------- classification


@dataclass
class ClassificationResult:
    positions: np.ndarray
    mean_level: np.ndarray
    curve: np.ndarray
    bucket_level: np.ndarray
    bucket_miscoverage: np.ndarray
    bucket_se: np.ndarray
    bucket_size: np.ndarray

    @property
    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.curve - self.mean_level)))

    @property
    def bucket_excess(self) -> np.ndarray:
        alpha = 1.0 - self.bucket_level
        return self.bucket_miscoverage - (alpha + 3.0 * self.bucket_se)


def classification_study(n_val: int = 5000, n_test: int = 20000, n_classes: int = 10,
                         m: int = 20, window: int = 1000, points: int = 50,
                         seed: int = 9) -> ClassificationResult:
    """Calibration of level-adaptive sets on a calibrated synthetic classifier.

    The curve compares local coverage with the local mean of the realized
    level ``max(L) / m`` over the ``window`` nearest test points.
    """
    rng = rng_stream(seed, 0)
    Pv, yv = gen_calibrated_classifier(n_val, n_classes, rng)
    Pt, yt = gen_calibrated_classifier(n_test, n_classes, rng)
    sets = level_adaptive_sets(Pv, yv, Pt, m, rng_stream(seed, 1))
    covered = np.array([y in s for s, y in zip(sets, yt)], dtype=float)
    level = np.array([s.realized_level for s in sets])
    pos, mean_p, curve = calibration_curve(level, covered, points, window)
    lv = np.unique(level)
    size = np.array([np.sum(level == v) for v in lv])
    mis = np.array([1.0 - covered[level == v].mean() for v in lv])
    alpha = 1.0 - lv
    se = np.sqrt(alpha * (1.0 - alpha) / size)
    return ClassificationResult(pos, mean_p, curve, lv, mis, se, size)

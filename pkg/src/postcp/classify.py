"""Level-adaptive prediction sets for classification and an isotonic baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MultinomialDraw, check_simplex


def sorted_cumulative(probs) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative sorted probability at each label's rank.

    Returns ``(cum, order)`` where ``cum[..., y]`` is the total probability
    of the labels ranked at or above ``y`` (descending, ties by index).
    """
    P = np.asarray(probs, dtype=float)
    order = np.argsort(-P, axis=-1, kind="stable")
    cs = np.cumsum(np.take_along_axis(P, order, axis=-1), axis=-1)
    cum = np.empty_like(cs)
    np.put_along_axis(cum, order, cs, axis=-1)
    return cum, order


def conformity_score(eta, label: int, p_test: float) -> float:
    """Probability mass ranked at or above ``label`` minus ``p_test``.

    ``label`` is a 0-based class index.
    """
    eta = check_simplex(eta, tol=1e-8)
    cum, _ = sorted_cumulative(eta)
    return float(cum[label] - p_test)


def conformity_scores(P, labels, p_test=0.0) -> np.ndarray:
    cum, _ = sorted_cumulative(P)
    return cum[np.arange(len(labels)), np.asarray(labels)] - p_test


@dataclass(frozen=True)
class PredictionSet:
    labels: tuple
    realized_level: float
    draw: MultinomialDraw | None = None
    flags: tuple = ()

    def __contains__(self, y) -> bool:
        return int(y) in self.labels

    @property
    def size(self) -> int:
        return len(self.labels)


def level_adaptive_sets(val_probs, val_labels, test_probs, m: int,
                        rng: np.random.Generator, alpha_override: float | None = None,
                        randomize: bool = True) -> list[PredictionSet]:
    """Prediction sets at the draw-dependent level for a batch of test points.

    For each test point a draw ``L ~ Multinomial(m, eta_test)`` sets the
    miscoverage level ``1 - max(L) / m`` and the weights
    ``prod_k eta_k(X_i) ** L_k``. Label ``y`` enters the set when its
    weighted conformal p-value exceeds the level. The test point's own
    atom sits at the largest possible score. With ``randomize`` the
    test-point mass is scaled by one uniform per test point, which makes
    the coverage exact at the level rather than conservative.
    """
    Pv = np.asarray(val_probs, dtype=float)
    Pt = np.atleast_2d(np.asarray(test_probs, dtype=float))
    cum_val = conformity_scores(Pv, val_labels)
    cum_test, _ = sorted_cumulative(Pt)
    with np.errstate(divide="ignore"):
        log_v = np.log(Pv)
        log_t = np.log(Pt)
    T, C = Pt.shape
    counts = np.stack([rng.multinomial(m, p / p.sum()) for p in Pt])
    u = rng.random(T) if randomize else np.ones(T)
    out = []
    order = np.argsort(cum_val, kind="stable")
    sorted_scores = cum_val[order]
    for t in range(T):
        c = counts[t].astype(float)
        keep = c > 0
        lw = log_v[order][:, keep] @ c[keep]
        lw_test = log_t[t, keep] @ c[keep]
        flags = ()
        allw = np.append(lw, lw_test)
        top = allw.max()
        if not np.isfinite(top):
            w = np.full(allw.size, 1.0 / allw.size)
            flags = ("degenerate-weights",)
        else:
            w = np.exp(allw - top)
            w /= w.sum()
        level = 1.0 - counts[t].max() / m if alpha_override is None else alpha_override
        # mass of validation scores strictly above each candidate score
        tail = np.concatenate([np.cumsum(w[:-1][::-1])[::-1], [0.0]])
        above = tail[np.searchsorted(sorted_scores, cum_test[t], side="right")]
        pval = above + u[t] * w[-1]
        labels = tuple(int(y) for y in np.flatnonzero(pval > level))
        out.append(PredictionSet(labels, 1.0 - level, MultinomialDraw(counts[t], m), flags))
    return out


def level_adaptive_set(val_probs, val_labels, eta_test, m: int, rng: np.random.Generator,
                       alpha_override: float | None = None,
                       randomize: bool = True) -> PredictionSet:
    return level_adaptive_sets(val_probs, val_labels, [eta_test], m, rng,
                               alpha_override, randomize)[0]


@dataclass(frozen=True)
class IsotonicMap:
    x: np.ndarray
    y: np.ndarray

    def __call__(self, p) -> np.ndarray:
        return np.interp(p, self.x, self.y)


def pool_adjacent_violators(y, w=None) -> tuple[np.ndarray, np.ndarray, list]:
    """Nondecreasing least-squares fit; returns block values, weights and spans."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    vals, wts, spans = [], [], []
    for i, (yi, wi) in enumerate(zip(y, w)):
        vals.append(yi)
        wts.append(wi)
        spans.append([i, i])
        while len(vals) > 1 and vals[-2] > vals[-1]:
            v2, w2, s2 = vals.pop(), wts.pop(), spans.pop()
            tot = wts[-1] + w2
            vals[-1] = (vals[-1] * wts[-1] + v2 * w2) / tot
            wts[-1] = tot
            spans[-1][1] = s2[1]
    return np.array(vals), np.array(wts), spans


def isotonic_calibrate(top_probs, correctness) -> IsotonicMap:
    """Monotone map from confidence to accuracy by pool-adjacent-violators.

    Equal confidences are merged first; breakpoints sit at the mean
    confidence of each pooled block with linear interpolation between them.
    """
    p = np.asarray(top_probs, dtype=float)
    c = np.asarray(correctness, dtype=float)
    if p.size == 0:
        raise ValueError("empty input")
    ux, inv = np.unique(p, return_inverse=True)
    cnt = np.bincount(inv).astype(float)
    mean_c = np.bincount(inv, weights=c) / cnt
    vals, wts, spans = pool_adjacent_violators(mean_c, cnt)
    xs = np.array([np.average(ux[a:b + 1], weights=cnt[a:b + 1]) for a, b in spans])
    return IsotonicMap(xs, vals)


def gen_calibrated_classifier(n: int, n_classes: int, rng: np.random.Generator,
                              concentration=(0.2, 5.0)):
    """Probability vectors with labels drawn from them, so they are calibrated.

    Each row is Dirichlet with a concentration drawn log-uniformly from
    ``concentration``, giving a wide spread of top-class confidences.
    """
    lo, hi = np.log(concentration[0]), np.log(concentration[1])
    conc = np.exp(rng.uniform(lo, hi, size=n))
    P = rng.gamma(np.repeat(conc[:, None], n_classes, axis=1))
    P = np.maximum(P, 1e-300)
    P /= P.sum(axis=1, keepdims=True)
    y = (rng.random(n)[:, None] > np.cumsum(P, axis=1)).sum(axis=1)
    return P, np.minimum(y, n_classes - 1)

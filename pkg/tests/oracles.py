"""Slow, direct reference implementations used to check the fast code.

Each oracle is written from the defining formula with plain loops and no
shared helpers from the package, so agreement is evidence of correctness
rather than of consistent reuse.
"""

from __future__ import annotations

import math

import numpy as np

TOL = 1e-12


def quantile_by_enumeration(residuals, weights, infinity_weight, level):
    """Smallest candidate v whose total weight at or below v reaches level."""
    total = float(sum(weights)) + float(infinity_weight)
    candidates = sorted(set(float(r) for r in residuals))
    for v in candidates:
        mass = sum(w for r, w in zip(residuals, weights) if r <= v) / total
        if mass >= level - TOL:
            return v
    return math.inf


def pvalue_by_loop(weights, residuals, r_test):
    out = weights[-1]
    for w, r in zip(weights[:-1], residuals):
        if r >= r_test:
            out += w
    return out


def product_weights(pi_matrix, counts):
    """prod_k pi_ik ** L_k, normalized, computed directly (no logs)."""
    raw = []
    for row in pi_matrix:
        v = 1.0
        for p, c in zip(row, counts):
            v *= p ** int(c)
        raw.append(v)
    raw = np.array(raw)
    return raw / raw.sum()


def ratio_beta_direct(X, indicators, ridge):
    """((n - n_t) / n_t) (sum_{above} x x' + ridge I)^{-1} sum_{below} x."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    G = ridge * np.eye(d)
    b = np.zeros(d)
    n_t = 0
    for x, ind in zip(X, indicators):
        if ind:
            b += x
            n_t += 1
        else:
            G += np.outer(x, x)
    return (n - n_t) / n_t * np.linalg.solve(G, b)


def knn_direct(Xtr, ytr, x, k):
    d = [(float(np.sum((row - x) ** 2)), i) for i, row in enumerate(Xtr)]
    d.sort()
    return float(np.mean([ytr[i] for _, i in d[:k]]))


def scp_order_statistic(residuals, alpha):
    """The ceil((n + 1)(1 - alpha))-th smallest residual, or inf."""
    r = sorted(residuals)
    n = len(r)
    k = math.ceil((n + 1) * (1 - alpha) - 1e-12)
    return math.inf if k > n else r[k - 1]


def kl_direct(p, q):
    out = 0.0
    for a, b in zip(p, q):
        if a > 0:
            if b == 0:
                return math.inf
            out += a * math.log(a / b)
    return out


def pav_direct(y, w):
    """Pool-adjacent-violators by repeated full scans."""
    blocks = [[float(v), float(x), 1] for v, x in zip(y, w)]
    merged = True
    while merged:
        merged = False
        for i in range(len(blocks) - 1):
            if blocks[i][0] > blocks[i + 1][0] + 1e-15:
                v1, w1, c1 = blocks[i]
                v2, w2, c2 = blocks[i + 1]
                blocks[i] = [(v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2, c1 + c2]
                del blocks[i + 1]
                merged = True
                break
    return np.repeat([b[0] for b in blocks], [b[2] for b in blocks])


def crossfit_tau_direct(Z, R, xi, fold_of, ridge_rel=1e-8):
    """Out-of-fold CDF estimates by refitting each fold complement."""
    n, d = Z.shape
    out = np.empty((n, len(xi)))
    for f in np.unique(fold_of):
        rest = fold_of != f
        for t, x in enumerate(xi):
            ind = R[rest] <= x
            n_r, n_t = rest.sum(), ind.sum()
            if n_t in (0, n_r):
                out[fold_of == f, t] = n_t / n_r
                continue
            above = Z[rest][~ind]
            G = above.T @ above
            beta = ratio_beta_direct(Z[rest], ind, ridge_rel * np.trace(G) / d)
            g = np.maximum(Z[fold_of == f] @ beta, 0.0)
            out[fold_of == f, t] = n_t * g / (n_r - n_t + n_t * g)
    return out

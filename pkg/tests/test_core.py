import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from postcp.core import (DegenerateWeights, MultinomialDraw, PcpConfig, WeightedEmpiricalDist,
                         conformal_pvalue, effective_sample_size, kl_divergence,
                         kl_limit_weights, kl_weights, multinomial_draw, rng_stream,
                         weighted_quantile)
from oracles import kl_direct, product_weights, pvalue_by_loop, quantile_by_enumeration

simplex = st.lists(st.floats(0.0, 1.0).map(lambda v: round(v, 6)), min_size=2, max_size=5).filter(
    lambda v: sum(v) > 1e-3).map(lambda v: np.array(v) / sum(v))


class TestWeightedQuantile:
    def test_infinite_when_finite_mass_short(self):
        d = WeightedEmpiricalDist([1, 2, 3, 4], [.2] * 4, .2)
        assert weighted_quantile(d, .9) == math.inf

    def test_point_mass(self):
        d = WeightedEmpiricalDist([5.0], [1.0], 0.0)
        for level in (0.01, 0.5, 0.99):
            assert weighted_quantile(d, level) == 5.0

    def test_level_reached_exactly(self):
        # nine atoms of 0.1 plus 0.1 at infinity; the ninth reaches 0.9
        d = WeightedEmpiricalDist(np.arange(1, 10), [0.1] * 9, 0.1)
        assert weighted_quantile(d, 0.9) == 9

    def test_empty_distribution(self):
        with pytest.raises(ValueError, match="empty distribution"):
            WeightedEmpiricalDist([], [], 0.0)

    def test_rejects_negative_residuals(self):
        with pytest.raises(ValueError):
            WeightedEmpiricalDist([-1.0], [1.0])

    def test_renormalizes(self):
        d = WeightedEmpiricalDist([1, 2], [2, 2], 4)
        assert np.allclose(d.weights, [.25, .25]) and d.infinity_weight == .5

    @given(st.lists(st.integers(0, 20), min_size=1, max_size=30),
           st.integers(0, 2**32 - 1), st.floats(0.05, 0.95))
    @settings(max_examples=200, deadline=None)
    def test_matches_enumeration(self, r, seed, level):
        rng = np.random.default_rng(seed)
        w = rng.integers(0, 5, size=len(r)).astype(float)
        inf_w = float(rng.integers(0, 3))
        if w.sum() + inf_w == 0:
            inf_w = 1.0
        d = WeightedEmpiricalDist(np.array(r, dtype=float), w, inf_w)
        assert weighted_quantile(d, level) == quantile_by_enumeration(r, w, inf_w, level)

    @given(st.lists(st.floats(0, 100), min_size=1, max_size=50), st.floats(0.01, 0.99))
    @settings(max_examples=100, deadline=None)
    def test_uniform_weights_give_scp_order_statistic(self, r, alpha):
        from oracles import scp_order_statistic
        d = WeightedEmpiricalDist.uniform(r)
        assert weighted_quantile(d, 1 - alpha) == scp_order_statistic(r, alpha)


class TestPvalue:
    def test_above_all_residuals(self):
        n = 7
        w = np.full(n + 1, 1 / (n + 1))
        assert conformal_pvalue(w, np.arange(n), 100.0) == pytest.approx(1 / (n + 1))

    def test_zero_score(self):
        w = np.full(4, .25)
        assert conformal_pvalue(w, [1, 2, 3], 0.0) == pytest.approx(1.0)

    def test_worked_instance(self):
        assert conformal_pvalue([.5, .3, .2], [1, 3], 2) == pytest.approx(.5)

    def test_weight_sum_checked(self):
        with pytest.raises(ValueError):
            conformal_pvalue([.5, .6], [1], 0)

    @given(st.integers(1, 30), st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_nonincreasing_and_matches_loop(self, n, seed):
        rng = np.random.default_rng(seed)
        w = rng.random(n + 1)
        w /= w.sum()
        r = rng.exponential(size=n)
        grid = np.sort(rng.exponential(size=10))
        p = [conformal_pvalue(w, r, g) for g in grid]
        assert all(a >= b - 1e-15 for a, b in zip(p, p[1:]))
        assert p[3] == pytest.approx(pvalue_by_loop(w, r, grid[3]))

    @given(st.integers(1, 15), st.integers(0, 2**32 - 1), st.floats(0.05, 0.5))
    @settings(max_examples=150, deadline=None)
    def test_duality_with_quantile(self, n, seed, alpha):
        rng = np.random.default_rng(seed)
        w = rng.integers(1, 4, size=n + 1).astype(float)
        w /= w.sum()
        r = rng.integers(0, 6, size=n).astype(float)
        q = weighted_quantile(WeightedEmpiricalDist.with_test_weight(r, w), 1 - alpha)
        for y in np.linspace(0, 7, 57):
            assume(abs(conformal_pvalue(w, r, y) - alpha) > 1e-9)
            assert (conformal_pvalue(w, r, y) > alpha) == (y <= q)


class TestKL:
    def test_identity(self):
        assert kl_divergence([.3, .7], [.3, .7]) == 0.0

    def test_values(self):
        assert kl_divergence([1, 0], [.8, .2]) == pytest.approx(math.log(1.25))
        assert kl_divergence([.8, .2], [1, 0]) == math.inf

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            kl_divergence([1, 0], [1, 0, 0])

    @given(simplex, simplex)
    def test_nonnegative_against_direct(self, p, q):
        if p.size != q.size:
            return
        v = kl_divergence(p, q)
        assert v >= 0
        assert v == pytest.approx(kl_direct(p, q), rel=1e-10, abs=1e-12)


class TestDraws:
    def test_one_hot(self):
        d = multinomial_draw([0, 1, 0], 17, np.random.default_rng(0))
        assert d.counts.tolist() == [0, 17, 0]

    def test_single_draw_is_one_hot(self):
        d = multinomial_draw([.2, .3, .5], 1, np.random.default_rng(1))
        assert sorted(d.counts.tolist()) == [0, 0, 1]

    def test_mean_frequency(self):
        rng = np.random.default_rng(2)
        f = [multinomial_draw([.5, .5], 10**5, rng).frequencies[0] for _ in range(100)]
        assert abs(np.mean(f) - .5) < .01

    def test_counts_validated(self):
        with pytest.raises(ValueError):
            MultinomialDraw(np.array([1, 1]), 3)


class TestWeights:
    def test_identical_rows_uniform(self):
        pi = np.tile([.2, .3, .5], (6, 1))
        assert np.array_equal(kl_weights(pi, np.array([3, 1, 2])), np.full(6, 1 / 6))

    def test_worked_instances(self):
        w = kl_weights([[.8, .2], [1, 0]], np.array([1, 0]))
        assert np.allclose(w, [4 / 9, 5 / 9])
        w = kl_weights([[.5, .5], [1, 0]], np.array([2, 0]))
        assert np.allclose(w, [.2, .8])

    def test_zero_membership_zero_weight(self):
        w = kl_weights([[0, 1], [.5, .5], [.5, .5]], np.array([1, 1]))
        assert w[0] == 0 and np.allclose(w[1:], .5)

    def test_degenerate(self):
        with pytest.raises(DegenerateWeights, match="degenerate weights"):
            kl_weights([[0, 1], [0, 1]], np.array([1, 0]))

    @given(st.integers(0, 2**32 - 1), st.integers(1, 40))
    @settings(max_examples=100, deadline=None)
    def test_matches_direct_products(self, seed, m):
        rng = np.random.default_rng(seed)
        pi = rng.dirichlet(np.ones(3), size=8)
        counts = rng.multinomial(m, pi[-1])
        assert np.allclose(kl_weights(pi, counts), product_weights(pi, counts), rtol=1e-9)

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        pi = rng.dirichlet(np.ones(3), size=10)
        scaled = pi * np.array([2.0, 2.0, 2.0])   # multiplies every product by 2**m
        counts = np.array([4, 0, 3])
        assert np.allclose(kl_weights(pi, counts), kl_weights(scaled, counts))

    def test_limit_weights(self):
        w = kl_limit_weights([[.8, .2], [1, 0], [1, 0]], [1, 0], 1.0)
        assert np.allclose(w, np.array([.8, 1, 1]) / 2.8)


class TestESS:
    def test_uniform(self):
        assert effective_sample_size(np.full(100, .01)) == pytest.approx(100)

    def test_one_hot_and_pair(self):
        assert effective_sample_size([0, 1, 0]) == 1
        assert effective_sample_size([.5, .5]) == 2

    def test_zero(self):
        with pytest.raises(ValueError):
            effective_sample_size([0, 0])


def test_config_validation():
    PcpConfig(alpha=.1, K=2, m=10)
    for bad in ({"alpha": 0}, {"alpha": 1}, {"m": 0}, {"m": 10**7}, {"s": 0}, {"folds": 1},
                {"K": 0}):
        with pytest.raises(ValueError):
            PcpConfig(**bad)


def test_streams_reproducible_and_distinct():
    a = rng_stream(5, 1, 2).random(3)
    assert np.array_equal(a, rng_stream(5, 1, 2).random(3))
    assert not np.array_equal(a, rng_stream(5, 2, 1).random(3))

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from postcp.classify import (conformity_score, conformity_scores, gen_calibrated_classifier,
                             isotonic_calibrate, level_adaptive_set, level_adaptive_sets,
                             pool_adjacent_violators, sorted_cumulative)
from oracles import pav_direct


class TestScores:
    def test_worked_instance(self):
        assert conformity_score([0.2, 0.5, 0.3], 2, 0.0) == pytest.approx(0.8)
        assert conformity_score([0.2, 0.5, 0.3], 2, 0.1) == pytest.approx(0.7)

    def test_top_label(self):
        assert conformity_score([0.1, 0.6, 0.3], 1, 0.25) == pytest.approx(0.35)

    def test_uniform(self):
        eta = np.full(5, 0.2)
        for y in range(5):
            assert conformity_score(eta, y, 0.05) == pytest.approx((y + 1) / 5 - 0.05)

    def test_rejects_non_simplex(self):
        with pytest.raises(ValueError):
            conformity_score([0.5, 0.6], 0, 0.0)

    def test_shift(self):
        P = np.random.default_rng(0).dirichlet(np.ones(4), size=10)
        y = np.arange(10) % 4
        assert np.allclose(conformity_scores(P, y, 0.3), conformity_scores(P, y) - 0.3)

    def test_cumulative_order(self):
        cum, order = sorted_cumulative([[0.1, 0.7, 0.2]])
        assert order[0].tolist() == [1, 2, 0]
        assert np.allclose(cum[0], [1.0, 0.7, 0.9])


@pytest.fixture(scope="module")
def classifier():
    rng = np.random.default_rng(1)
    Pv, yv = gen_calibrated_classifier(2000, 6, rng)
    Pt, yt = gen_calibrated_classifier(3000, 6, rng)
    return Pv, yv, Pt, yt


class TestSets:
    def test_nested_in_level(self, classifier):
        Pv, yv, Pt, _ = classifier
        sizes = []
        for a in (0.5, 0.3, 0.1, 0.02):
            s = level_adaptive_set(Pv, yv, Pt[0], 10, np.random.default_rng(5),
                                   alpha_override=a)
            sizes.append(set(s.labels))
        assert all(a <= b for a, b in zip(sizes, sizes[1:]))

    def test_empty_sets_possible(self, classifier):
        Pv, yv, Pt, _ = classifier
        sets = level_adaptive_sets(Pv, yv, Pt[:200], 10, np.random.default_rng(2),
                                   alpha_override=0.99)
        assert any(s.size == 0 for s in sets)

    def test_level_from_draw(self, classifier):
        Pv, yv, Pt, _ = classifier
        s = level_adaptive_set(Pv, yv, Pt[3], 20, np.random.default_rng(3))
        assert s.realized_level == pytest.approx(s.draw.counts.max() / 20)
        assert s.draw.counts.sum() == 20

    def test_one_hot_test_probs(self, classifier):
        Pv, yv, _, _ = classifier
        s = level_adaptive_set(Pv, yv, np.eye(6)[0], 5, np.random.default_rng(0))
        assert s.realized_level == 1.0 and 0 in s

    def test_marginal_coverage_matches_level(self, classifier):
        Pv, yv, Pt, yt = classifier
        sets = level_adaptive_sets(Pv, yv, Pt, 20, np.random.default_rng(4))
        cov = np.mean([y in s for s, y in zip(sets, yt)])
        level = np.mean([s.realized_level for s in sets])
        assert abs(cov - level) < 0.03

    def test_all_mass_on_test_point(self):
        # validation rows give zero probability to the drawn class
        Pv = np.array([[1.0, 0.0]] * 5)
        s = level_adaptive_set(Pv, np.zeros(5, int), [0.0, 1.0], 3, np.random.default_rng(0))
        assert s.labels == (0, 1) and not s.flags


class TestIsotonic:
    def test_two_block_violation(self):
        vals, wts, spans = pool_adjacent_violators([0.8, 0.6])
        assert vals.tolist() == pytest.approx([0.7]) and spans == [[0, 1]]

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
    @settings(max_examples=100, deadline=None)
    def test_matches_direct(self, y):
        vals, wts, spans = pool_adjacent_violators(y)
        fitted = np.repeat(vals, [b - a + 1 for a, b in spans])
        assert np.allclose(fitted, pav_direct(y, np.ones(len(y))))
        assert np.all(np.diff(vals) >= -1e-12)

    def test_calibrate_monotone(self):
        rng = np.random.default_rng(6)
        p = rng.uniform(0.3, 1, 500)
        c = rng.random(500) < p
        f = isotonic_calibrate(p, c)
        grid = np.linspace(0, 1, 101)
        assert np.all(np.diff(f(grid)) >= 0)

    def test_calibrate_ties_and_empty(self):
        f = isotonic_calibrate([0.5, 0.5, 0.9], [0, 1, 1])
        assert f(0.5) == pytest.approx(0.5) and f(0.9) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            isotonic_calibrate([], [])


def test_generated_classifier_is_calibrated():
    P, y = gen_calibrated_classifier(20000, 4, np.random.default_rng(7))
    assert np.allclose(P.sum(axis=1), 1)
    top = P.argmax(axis=1)
    conf = P.max(axis=1)
    assert abs(np.mean(top == y) - conf.mean()) < 0.01

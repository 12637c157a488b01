import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from postcp.core import PcpConfig, WeightedEmpiricalDist, kl_limit_weights, weighted_quantile
from postcp.models import make_regressor
from postcp.pcp import (PcpModel, PcpTrace, finite_length_probability, nonrandomized_kl_interval,
                        oracle_pcp_interval, oracle_radii, pcp_interval, project_memberships,
                        scp_equivalent_weights, union_radius)
from postcp.scp_baselines import scp_interval
from postcp.synthetic import gen_setting
from oracles import product_weights, quantile_by_enumeration


class TestUnion:
    xi = np.array([1.0, 2.0, 3.0])

    def test_top_segment_nonempty(self):
        radius, j_star, gapped, pieces = union_radius(self.xi, lambda j: 5.0)
        assert (radius, j_star, gapped) == (5.0, 4, False)
        assert pieces[-1] == (3.0, 5.0)

    def test_all_empty_but_first(self):
        radius, j_star, _, _ = union_radius(self.xi, lambda j: 0.5 if j == 1 else -1.0)
        assert (radius, j_star) == (0.5, 1)

    def test_gap_detected_without_early_stop(self):
        q = {4: 3.5, 3: -1.0, 2: 1.5, 1: -1.0}
        radius, j_star, gapped, _ = union_radius(self.xi, q.get, early_stop=False)
        assert radius == 3.5 and j_star == 4 and gapped

    @given(st.lists(st.floats(0, 5), min_size=4, max_size=4))
    def test_early_stop_never_shrinks(self, qs):
        q = dict(zip((1, 2, 3, 4), qs))
        with_stop = union_radius(self.xi, q.get, True)
        without = union_radius(self.xi, q.get, False)
        covered = lambda pieces, r: any(a <= r <= b for a, b in pieces)
        for r in np.linspace(0, 5, 51):
            if covered(without[3], r):
                assert covered(with_stop[3], r)
        assert with_stop[0] >= without[0]


class TestOracle:
    def test_isolated_test_point_infinite(self):
        pi = np.vstack([np.tile([0.99, 0.01], (50, 1)), [[0.01, 0.99]]])
        iv = oracle_pcp_interval(pi, np.arange(50.0), 0.0, 0.1, 200, np.random.default_rng(0))
        assert not iv.finite

    def test_identical_memberships_are_scp(self):
        rng = np.random.default_rng(1)
        r = rng.exponential(size=40)
        pi = np.tile([0.3, 0.7], (41, 1))
        iv = oracle_pcp_interval(pi, r, 2.0, 0.1, 30, rng)
        assert iv.radius == scp_interval(r, 2.0, 0.1).radius

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_matches_direct_weights(self, seed):
        rng = np.random.default_rng(seed)
        pi = rng.dirichlet([1, 1, 1], size=12)
        r = rng.integers(0, 8, size=11).astype(float)
        iv = oracle_pcp_interval(pi, r, 0.0, 0.2, 5, np.random.default_rng(seed))
        w = product_weights(pi, iv.trace["counts"])
        assert iv.radius == quantile_by_enumeration(r, w[:-1], w[-1], 0.8)

    def test_radii_match_single_calls(self):
        rng = np.random.default_rng(2)
        pi_val = rng.dirichlet([1, 1], size=30)
        pi_test = rng.dirichlet([1, 1], size=7)
        r = rng.exponential(size=30)
        q = oracle_radii(pi_val, pi_test, r, 0.1, 3.0, None, randomized=False, max_cells=60)
        for t in range(7):
            iv = nonrandomized_kl_interval(np.vstack([pi_val, pi_test[t]]), r, 0.0, 0.1, 3.0)
            assert q[t] == pytest.approx(iv.radius)

    def test_randomized_radii_chunking(self):
        pi_val = np.random.default_rng(3).dirichlet([1, 1], size=20)
        pi_test = np.random.default_rng(4).dirichlet([1, 1], size=9)
        r = np.arange(20.0)
        a = oracle_radii(pi_val, pi_test, r, 0.1, 4, np.random.default_rng(5))
        b = oracle_radii(pi_val, pi_test, r, 0.1, 4, np.random.default_rng(5), max_cells=40)
        assert np.array_equal(a, b)

    def test_nonrandomized_weights(self):
        pi = np.array([[0.8, 0.2], [1.0, 0.0]])
        w = kl_limit_weights(pi, pi[-1], 1.0)
        assert w[0] / w[1] == pytest.approx(0.8)


class TestFiniteLength:
    def test_saturates(self):
        pts = np.tile([0.5, 0.5], (20, 1))
        assert finite_length_probability(pts, [0.5, 0.5], 10, 3.0, 0.1) == 1.0

    def test_single_exact_match(self):
        p = finite_length_probability([[0.3, 0.7]], [0.3, 0.7], 10, 10.0, 0.1)
        assert p == pytest.approx((1 / 9) ** 2) and round(p, 4) == 0.0123


def test_scp_equivalent_weights():
    w = scp_equivalent_weights(9)
    r = np.arange(1, 10.0)
    q = weighted_quantile(WeightedEmpiricalDist.with_test_weight(r, w), 0.9)
    assert q == scp_interval(r, 0, 0.1).radius


def test_projection_on_simplex():
    rng = np.random.default_rng(0)
    gamma = np.array([[0.1, 0.2], [0.8, 0.9]])
    lp = project_memberships(rng.random((10, 2)), gamma)
    assert np.allclose(np.exp(lp).sum(axis=1), 1)
    assert np.array_equal(project_memberships(np.ones((3, 2)), gamma[:1]), np.zeros((3, 1)))


def test_trace_json():
    tr = PcpTrace({4: math.inf}, {4: np.array([1, 2])}, 4, ["x"], [(0.0, math.inf)])
    d = json.loads(tr.to_json())
    assert d["segment_radius"]["4"] == "inf" and d["counts"]["4"] == [1, 2]


@pytest.fixture(scope="module")
def setting_data():
    rng = np.random.default_rng(11)
    return gen_setting(1, 300, rng), gen_setting(1, 300, rng), gen_setting(1, 40, rng)


class TestModel:
    def test_single_cluster_is_scp(self, setting_data):
        train, val, test = setting_data
        model = PcpModel.fit(train, val, PcpConfig(0.1, K=1, m=50, folds=5), {"name": "knn"})
        scp = scp_interval(model.residuals, 0.0, 0.1).radius
        assert all(iv.radius == scp for iv in model.intervals(test.features))

    def test_seeded_reproducible_and_batch_free(self, setting_data):
        train, val, test = setting_data
        cfg = PcpConfig(0.1, K=2, m=20, folds=5, seed=3)
        model = PcpModel.fit(train, val, cfg, make_regressor({"name": "knn"}))
        a = model.intervals(test.features)
        b = model.intervals(test.features, chunk=7)
        assert [iv.radius for iv in a] == [iv.radius for iv in b]
        assert pcp_interval(model, test.features[5], index=5).radius == a[5].radius

    def test_project_weights_direct(self, setting_data):
        train, val, test = setting_data
        model = PcpModel.fit(train, val, PcpConfig(0.1, K=2, m=20, folds=5), None)
        iv = model.interval(test.features[0])
        pi = np.vstack([np.exp(model.log_pi_val), iv.trace["pi_test"]])
        w = product_weights(pi, iv.trace["counts"])
        q = weighted_quantile(WeightedEmpiricalDist.with_test_weight(model.residuals, w), 0.9)
        assert iv.radius == pytest.approx(q)

    @pytest.mark.parametrize("mode", ["augmented", "refit"])
    def test_segment_modes(self, setting_data, mode):
        train, val, test = setting_data
        model = PcpModel.fit(train, val, PcpConfig(0.1, K=2, m=20, folds=5), None, mode=mode)
        ivs = model.intervals(test.features[:5])
        for iv in ivs:
            assert iv.trace.j_star >= 1 and iv.radius >= 0
        stop = model.intervals(test.features[:5], early_stop=True)
        full = model.intervals(test.features[:5], early_stop=False)
        assert all(a.radius >= b.radius for a, b in zip(stop, full))

    def test_bad_mode(self, setting_data):
        train, val, _ = setting_data
        with pytest.raises(ValueError):
            PcpModel.fit(train, val, PcpConfig(0.1, K=2, m=20, folds=5), None, mode="x")

    def test_selected_hyperparameters(self, setting_data):
        train, val, _ = setting_data
        model = PcpModel.fit(train, val, PcpConfig(0.1, folds=5), None)
        assert 1 <= model.K <= 10 and 5 <= model.m <= 500
        assert model.hyper is not None and json.loads(model.hyper.to_json())["K"] == model.K
        mm = model.membership_model()
        assert mm.pi.shape == (300, model.K)

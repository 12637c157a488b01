import numpy as np
import pytest

from postcp.hyper import DrawBank, ess_predicate, ess_statistics, select_K, select_m


def clustered_tau(n_centers, separation, n=300, seed=0):
    rng = np.random.default_rng(seed)
    base = np.linspace(0.1, 0.9, 6)
    centers = np.array([np.clip(base + separation * (k - (n_centers - 1) / 2), 0, 1)
                        for k in range(n_centers)])
    labels = rng.integers(0, n_centers, n)
    return centers[labels] + rng.normal(scale=0.01, size=(n, 6))


class TestSelectK:
    def test_three_centers(self):
        rng = np.random.default_rng(1)
        centers = np.array([[0.1, 0.1, 0.2, 0.3], [0.5, 0.6, 0.7, 0.8], [0.1, 0.7, 0.8, 0.95]])
        tau = centers[rng.integers(0, 3, 300)] + rng.normal(scale=0.01, size=(300, 4))
        K, r2 = select_K(tau, rng=np.random.default_rng(0))
        assert K == 3 and r2[3] > 0.95

    def test_identical_rows(self):
        tau = np.tile([0.2, 0.4, 0.9], (50, 1))
        K, r2 = select_K(tau, rng=np.random.default_rng(0))
        assert K == 1 and r2[1] == 1.0

    def test_nondecreasing_in_separation(self):
        ks = [select_K(clustered_tau(3, sep), rng=np.random.default_rng(0))[0]
              for sep in (0.0, 0.05, 0.3)]
        assert ks == sorted(ks)

    def test_bad_kmax(self):
        with pytest.raises(ValueError):
            select_K(np.zeros((3, 2)), K_max=0)


class TestSelectM:
    def test_identical_memberships(self):
        pi = np.tile([0.3, 0.7], (200, 1))
        m, _, flags = select_m(pi)
        assert m == 500 and not flags

    def test_small_separated_clusters(self):
        pi = np.repeat(np.array([[0.98, 0.01, 0.01], [0.01, 0.98, 0.01],
                                 [0.01, 0.01, 0.98]]), 20, axis=0)
        m, trace, _ = select_m(pi)
        assert m < 100
        # past the selected m the weights collapse onto the 20-point cluster
        assert trace[max(k for k in trace if k > m)][0] < 21

    def test_bisection_correctness(self):
        rng = np.random.default_rng(3)
        pi = rng.dirichlet([2, 2], size=300)
        m, trace, _ = select_m(pi, seed=4)
        assert ess_predicate(pi, m, seed=4)
        if m < 500:
            assert not ess_predicate(pi, m + 1, seed=4)
            assert not ess_predicate(pi, min(2 * m, 500), seed=4)

    def test_invalid_range(self):
        with pytest.raises(ValueError):
            select_m(np.ones((3, 1)), m_range=(10, 5))


class TestDraws:
    def test_nested(self):
        bank = DrawBank(np.random.default_rng(0).dirichlet([1, 1, 1], size=5), 50, seed=1)
        small, big = bank.counts(10), bank.counts(40)
        assert np.all(small <= big) and np.all(big.sum(axis=1) == 40)

    def test_frequencies(self):
        bank = DrawBank(np.tile([0.2, 0.8], (2, 1)), 20000, seed=2)
        assert np.allclose(bank.counts(20000) / 20000, [0.2, 0.8], atol=0.02)

    def test_ess_uniform(self):
        pi = np.tile([0.5, 0.5], (10, 1))
        ess, self_w = ess_statistics(pi, np.tile([3, 4], (10, 1)))
        assert ess == pytest.approx(10) and self_w == pytest.approx(0.1)

    def test_ess_zero_entries(self):
        pi = np.array([[1.0, 0.0], [0.0, 1.0]])
        ess, self_w = ess_statistics(pi, np.array([[2, 0], [0, 2]]))
        assert ess == pytest.approx(1.0) and self_w == pytest.approx(1.0)

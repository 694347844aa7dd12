import itertools

import mpmath
import numpy as np
import pytest

from sizeseg.dtransform import chebyshev_dt_bruteforce
from sizeseg.stochastic import (NoiseSpec, all_masks, all_sizes, expected_loss_exact, expected_loss_mc,
                                logistic_cdf, make_rng, outcome_probs, prob_map, sample_mask, split_rng)

SIGMOID_2 = 0.8807970779778824440597291413023967952064  # mpmath, 40 digits


def brute_size(m):
    m = np.asarray(m)
    if not np.any(m < 0):
        return 2 * max(m.shape)
    return 2 * int(chebyshev_dt_bruteforce(m).max())


class TestLogisticCdf:
    def test_zero(self):
        assert logistic_cdf(0.0) == 0.5

    def test_two(self):
        assert logistic_cdf(2.0) == pytest.approx(SIGMOID_2, abs=1e-15)
        mpmath.mp.dps = 30
        assert logistic_cdf(2.0) == pytest.approx(float(1 / (1 + mpmath.exp(-2))), abs=1e-15)

    def test_symmetry(self, rng):
        a = rng.uniform(-50, 50, 10000)
        np.testing.assert_allclose(logistic_cdf(a) + logistic_cdf(-a), 1.0, atol=1e-12)
        assert logistic_cdf(-2.0) == pytest.approx(1 - logistic_cdf(2.0), abs=1e-15)

    def test_strictly_increasing(self):
        a = np.linspace(-30, 30, 2001)
        assert np.all(np.diff(logistic_cdf(a)) > 0)

    def test_extreme_inputs(self):
        with np.errstate(over="raise"):
            out = logistic_cdf(np.array([-700.0, 700.0]))
        assert out[0] >= 0 and out[1] == 1.0

    def test_location_scale(self):
        spec = NoiseSpec(mean=1.0, scale=2.0)
        assert logistic_cdf(1.0, spec) == 0.5
        assert logistic_cdf(5.0, spec) == pytest.approx(SIGMOID_2, abs=1e-15)

    def test_non_finite(self):
        with pytest.raises(ValueError):
            logistic_cdf(np.nan)

    def test_bad_scale(self):
        with pytest.raises(ValueError):
            NoiseSpec(scale=0.0)


class TestProbMap:
    def test_zero_logits(self):
        np.testing.assert_array_equal(prob_map(np.zeros((3, 4))), np.full((3, 4), 0.5))

    def test_single(self):
        assert prob_map([[2.0]])[0, 0] == pytest.approx(SIGMOID_2, abs=1e-15)

    def test_monotone_and_open_interval(self, rng):
        a = np.sort(rng.uniform(-25, 25, 50)).reshape(5, 10)
        p = prob_map(a)
        assert np.all(np.diff(p.ravel()) > 0)
        extreme = prob_map([[-1e6, 1e6]])
        assert 0 < extreme[0, 0] and extreme[0, 1] < 1


class TestSampleMask:
    def test_degenerate(self):
        p = prob_map(np.full((8, 8), 1e9))
        assert np.all(sample_mask(p, make_rng(0)) == 1)

    def test_deterministic(self):
        p = np.full((6, 6), 0.3)
        np.testing.assert_array_equal(sample_mask(p, make_rng(5)), sample_mask(p, make_rng(5)))

    def test_consumes_v_draws_row_major(self):
        p = np.linspace(0.1, 0.9, 12).reshape(3, 4)
        a, b = make_rng(9), make_rng(9)
        y = sample_mask(p, a)
        u = b.random(12).reshape(3, 4)
        np.testing.assert_array_equal(y, np.where(u < p, 1, -1))
        assert a.random() == b.random()

    def test_empirical_frequency(self):
        p = np.array([[0.05, 0.5], [0.7, 0.97]])
        rng = make_rng(1)
        n = 100_000
        hits = np.zeros_like(p)
        for _ in range(n):
            hits += sample_mask(p, rng) > 0
        sigma = np.sqrt(p * (1 - p) / n)
        assert np.all(np.abs(hits / n - p) <= 3 * sigma)

    def test_split_streams_differ(self):
        a, b = split_rng(make_rng(3), 2)
        assert a.random() != b.random()


class TestEnumeration:
    def test_all_masks_ordering(self):
        masks = all_masks((1, 3))
        assert masks.shape == (8, 1, 3)
        np.testing.assert_array_equal(masks[5], [[1, -1, 1]])  # 5 = 0b101

    def test_sizes_match_oracle(self):
        shape = (2, 3)
        for m, s in zip(all_masks(shape), all_sizes(shape)):
            assert s == brute_size(m)

    def test_outcome_probs_match_product(self, rng):
        p = rng.uniform(0.1, 0.9, (2, 2))
        for m, w in zip(all_masks(p.shape), outcome_probs(p)):
            assert w == pytest.approx(np.prod(np.where(m > 0, p, 1 - p)), rel=1e-14)

    def test_v1_constant_loss(self):
        # g(+1) = 2 (saturated), g(-1) = 0, so s = 1 gives loss 1 either way
        assert expected_loss_exact([[0.5]], 1.0) == 1.0

    def test_two_by_two_uniform(self):
        oracle = np.mean([brute_size(np.array(bits).reshape(2, 2)) ** 2
                          for bits in itertools.product([-1, 1], repeat=4)])
        assert oracle == 4.5
        assert expected_loss_exact(np.full((2, 2), 0.5), 0.0) == pytest.approx(4.5, abs=1e-14)

    def test_multilinear(self, rng):
        for _ in range(20):
            shape = tuple(rng.integers(1, 4, 2))
            p = rng.uniform(0.05, 0.95, shape)
            s = float(rng.integers(0, 8))
            i = rng.integers(p.size)
            vals = []
            for t in (0.0, 0.3, 1.0):
                q = p.copy()
                q.flat[i] = t
                vals.append(expected_loss_exact(q, s))
            assert vals[1] == pytest.approx(0.7 * vals[0] + 0.3 * vals[2], abs=1e-10)

    def test_refuses_large(self):
        with pytest.raises(ValueError):
            expected_loss_exact(np.full((3, 7), 0.5), 1.0)

    def test_monte_carlo_converges(self, rng):
        for seed in range(5):
            shape = (3, 4)
            p = rng.uniform(0.2, 0.95, shape)
            s = float(rng.integers(0, 6))
            n = 40_000
            mean, se = expected_loss_mc(p, s, n, make_rng(seed))
            assert abs(mean - expected_loss_exact(p, s)) <= 4 * se

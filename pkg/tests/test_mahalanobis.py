import numpy as np
import pytest

from smhd import volume
from smhd.mahalanobis import (
    dense_mhd_oracle,
    mhd_diag_map,
    mhd_full_map,
    smooth_mhd,
    woodbury_solve,
)
from smhd.pseudostats import summarize


def _random_case(seed, n=10, h=8, w=8, spread=0.1):
    rng = np.random.default_rng(seed)
    stack = rng.normal(0.5, spread, (n, h, w))
    x = rng.normal(0.5, 2 * spread, (h, w))
    return summarize(stack), x


def _diagonal_covariance_dist():
    """Stack whose centered columns are +/- multiples of basis vectors (D=4, N=5)."""
    mu = np.array([[0.4, 0.5], [0.6, 0.7]])
    cols = np.array([
        [0.3, 0.0, 0.0, 0.0],
        [-0.3, 0.0, 0.0, 0.0],
        [0.0, 0.2, 0.0, 0.0],
        [0.0, -0.2, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
    ])
    stack = mu.reshape(1, 2, 2) + cols.reshape(5, 2, 2)
    dist = summarize(stack)
    sigma = dist.centered @ dist.centered.T / (dist.n - 1)
    assert np.abs(sigma - np.diag(np.diag(sigma))).max() == 0.0
    return dist


class TestDiagonalMap:
    def test_zero_at_mean(self):
        dist, _ = _random_case(0)
        res = mhd_diag_map(dist, dist.mean, 1e-5)
        np.testing.assert_array_equal(res.map, np.zeros(dist.shape))
        assert res.scalar == 0.0

    def test_zero_variance_standardizes_by_lambda(self):
        g = np.full((3, 3), 0.5)
        dist = summarize(np.repeat(g[None], 4, axis=0))
        x = g.copy()
        x[1, 1] += 0.1
        res = mhd_diag_map(dist, x, 1e-5)
        assert abs(res.map[1, 1] - 0.1 / np.sqrt(1e-5)) < 1e-9
        assert abs(res.map[1, 1] - 31.6228) < 1e-3

    def test_scalar_matches_dense_diagonal_oracle(self):
        dist, x = _random_case(1)
        res = mhd_diag_map(dist, x, 1e-5)
        d = (x - dist.mean).reshape(-1)
        sigma = np.diag(dist.variance.reshape(-1) + 1e-5)
        oracle = np.sqrt(d @ np.linalg.solve(sigma, d))
        assert abs(res.scalar - oracle) / oracle < 1e-10

    def test_map_squares_sum_to_scalar(self):
        dist, x = _random_case(2)
        res = mhd_diag_map(dist, x, 1e-5)
        assert abs((res.map**2).sum() - res.scalar**2) < 1e-9 * res.scalar**2

    def test_shape_mismatch(self):
        dist, _ = _random_case(3)
        with pytest.raises(ValueError):
            mhd_diag_map(dist, np.zeros((4, 4)), 1e-5)


class TestWoodburySolve:
    def test_zero_variance_stack(self):
        g = np.full((4, 4), 0.25)
        dist = summarize(np.repeat(g[None], 5, axis=0))
        d = np.random.default_rng(4).standard_normal(16)
        np.testing.assert_allclose(woodbury_solve(dist, d, 1e-5), d / 1e-5,
                                   rtol=1e-12)

    def test_orthogonal_deviation_is_exact(self):
        # stack varies only in the first row of pixels; d lives in the rest
        rng = np.random.default_rng(5)
        stack = np.zeros((6, 4, 4))
        stack[:, 0, :] = rng.standard_normal((6, 4))
        dist = summarize(stack)
        d = np.zeros(16)
        d[4:] = rng.standard_normal(12)
        np.testing.assert_array_equal(woodbury_solve(dist, d, 1e-3), d / 1e-3)

    def test_matches_dense_solve(self):
        worst = 0.0
        for seed in range(20):
            dist, x = _random_case(seed, h=16, w=16)
            d = (x - dist.mean).reshape(-1)
            v = woodbury_solve(dist, d, 1e-5)
            sigma = dist.centered @ dist.centered.T / (dist.n - 1)
            sigma[np.diag_indices_from(sigma)] += 1e-5
            v_dense = np.linalg.solve(sigma, d)
            scale = np.abs(v_dense).max()
            worst = max(worst, np.abs(v - v_dense).max() / scale)
        assert worst < 1e-8

    def test_rejects_non_finite(self):
        dist, _ = _random_case(6)
        d = np.zeros(64)
        d[0] = np.nan
        with pytest.raises(ValueError):
            woodbury_solve(dist, d, 1e-5)

    def test_rejects_bad_lambda(self):
        dist, x = _random_case(7)
        with pytest.raises(ValueError):
            woodbury_solve(dist, (x - dist.mean).reshape(-1), 0.0)


class TestFullMap:
    def test_zero_at_mean(self):
        dist, _ = _random_case(8)
        res = mhd_full_map(dist, dist.mean, 1e-5)
        np.testing.assert_array_equal(res.map, np.zeros(dist.shape))
        assert res.scalar == 0.0

    def test_reduces_to_diagonal_for_diagonal_covariance(self):
        dist = _diagonal_covariance_dist()
        x = np.array([[0.5, 0.45], [0.58, 0.9]])
        full = mhd_full_map(dist, x, 1e-5)
        diag = mhd_diag_map(dist, x, 1e-5)
        assert abs(full.scalar - diag.scalar) < 1e-8
        np.testing.assert_allclose(full.map, diag.map, atol=1e-8)

    def test_matches_dense_oracle_16x16(self):
        dist, x = _random_case(9, h=16, w=16)
        full = mhd_full_map(dist, x, 1e-5)
        dense = dense_mhd_oracle(dist, x, 1e-5)
        assert abs(full.scalar - dense.scalar) / dense.scalar < 1e-6
        np.testing.assert_allclose(full.map, dense.map, rtol=1e-6,
                                   atol=1e-6 * dense.map.max())

    def test_decomposition_identity_both_paths(self):
        for seed in range(25):
            dist, x = _random_case(seed, n=4 + seed % 8, h=6, w=7)
            for res in (mhd_diag_map(dist, x, 1e-5), mhd_full_map(dist, x, 1e-5)):
                total = res.contributions.sum()
                assert abs(total - res.scalar**2) < 1e-9 * max(res.scalar**2, 1e-30)

    def test_positive_definite_probes(self):
        dist, _ = _random_case(10, h=5, w=5)
        rng = np.random.default_rng(11)
        for _ in range(1000):
            d = rng.standard_normal(25)
            v = woodbury_solve(dist, d, 1e-5)
            assert d @ v > 0.0

    @pytest.mark.parametrize("k", [0.1, 3.0, 100.0])
    def test_joint_scaling_invariance(self, k):
        rng = np.random.default_rng(12)
        stack = rng.normal(0.5, 0.1, (10, 8, 8))
        x = rng.normal(0.5, 0.2, (8, 8))
        base_full = mhd_full_map(summarize(stack), x, 1e-5)
        base_diag = mhd_diag_map(summarize(stack), x, 1e-5)
        scaled_dist = summarize(k * stack)
        scaled_full = mhd_full_map(scaled_dist, k * x, k**2 * 1e-5)
        scaled_diag = mhd_diag_map(scaled_dist, k * x, k**2 * 1e-5)
        assert abs(scaled_full.scalar - base_full.scalar) < 1e-9 * base_full.scalar
        assert abs(scaled_diag.scalar - base_diag.scalar) < 1e-9 * base_diag.scalar
        np.testing.assert_allclose(scaled_full.map, base_full.map, rtol=1e-9,
                                   atol=1e-9 * base_full.map.max())
        np.testing.assert_allclose(scaled_diag.map, base_diag.map, rtol=1e-9)

    def test_monotone_in_lambda(self):
        for seed in range(10):
            dist, x = _random_case(seed + 50)
            scalars = [mhd_full_map(dist, x, lam).scalar
                       for lam in (1e-6, 1e-5, 1e-4)]
            assert scalars[0] >= scalars[1] >= scalars[2]

    def test_shape_mismatch(self):
        dist, _ = _random_case(13)
        with pytest.raises(ValueError):
            mhd_full_map(dist, np.zeros((3, 3)), 1e-5)


class TestDenseOracle:
    def test_equivalence_on_100_seeded_cases(self):
        worst = 0.0
        for seed in range(100):
            dist, x = _random_case(seed, h=8, w=8)
            full = mhd_full_map(dist, x, 1e-5)
            dense = dense_mhd_oracle(dist, x, 1e-5)
            scale = max(dense.map.max(), 1e-30)
            worst = max(worst,
                        abs(full.scalar - dense.scalar) / dense.scalar,
                        np.abs(full.map - dense.map).max() / scale)
        assert worst < 1e-8

    def test_zero_at_mean(self):
        dist, _ = _random_case(14)
        res = dense_mhd_oracle(dist, dist.mean, 1e-5)
        assert res.scalar == 0.0
        np.testing.assert_array_equal(res.map, np.zeros(dist.shape))

    def test_zero_variance_scalar(self):
        g = np.full((4, 4), 0.6)
        dist = summarize(np.repeat(g[None], 3, axis=0))
        x = g + np.random.default_rng(15).normal(0, 0.1, (4, 4))
        res = dense_mhd_oracle(dist, x, 1e-5)
        d = (x - g).reshape(-1)
        assert abs(res.scalar - np.linalg.norm(d) / np.sqrt(1e-5)) < 1e-6

    def test_size_guard(self):
        stack = np.random.default_rng(16).random((3, 65, 65))
        dist = summarize(stack)
        with pytest.raises(ValueError):
            dense_mhd_oracle(dist, stack[0], 1e-5)


class TestSmoothing:
    def test_constant_map_unchanged(self):
        dist, x = _random_case(17)
        res = mhd_diag_map(dist, x, 1e-5)
        const = type(res)(map=np.full(dist.shape, 2.5), scalar=res.scalar,
                          lam=res.lam, contributions=res.contributions)
        np.testing.assert_array_equal(smooth_mhd(const, 1.0),
                                      np.full(dist.shape, 2.5))

    def test_zero_map(self):
        dist, _ = _random_case(18)
        res = mhd_full_map(dist, dist.mean, 1e-5)
        np.testing.assert_array_equal(smooth_mhd(res, 1.0), np.zeros(dist.shape))

    def test_impulse_matches_kernel_oracle(self):
        dist, x = _random_case(19, h=9, w=9)
        res = mhd_diag_map(dist, x, 1e-5)
        impulse = np.zeros((9, 9))
        impulse[4, 4] = 1.0
        shaped = type(res)(map=impulse, scalar=res.scalar, lam=res.lam,
                           contributions=res.contributions)
        k1 = volume.gaussian_kernel1d(1.0)
        oracle = np.zeros((9, 9))
        oracle[1:8, 1:8] = np.outer(k1, k1)
        np.testing.assert_allclose(smooth_mhd(shaped, 1.0), oracle, atol=1e-15)

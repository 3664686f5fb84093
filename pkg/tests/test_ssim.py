import numpy as np
import pytest

from smhd.ssim import SsimParams, s_mean, ssim_map

# closed-form value for constant images 0.3 vs 0.7 with c1 = 1e-4:
# luminance (2*0.21 + c1) / (0.09 + 0.49 + c1), structure term cancels
CONST_SSIM = (2 * 0.3 * 0.7 + 1e-4) / (0.3**2 + 0.7**2 + 1e-4)


class TestSsimMap:
    def test_self_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.random((16, 16))
            np.testing.assert_allclose(ssim_map(x, x), 1.0, atol=1e-9)

    def test_constant_images_closed_form(self):
        a = np.full((20, 20), 0.3)
        b = np.full((20, 20), 0.7)
        out = ssim_map(a, b)
        np.testing.assert_allclose(out, CONST_SSIM, atol=1e-12)
        assert abs(CONST_SSIM - 0.72425) < 1e-4

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        x = rng.random((12, 14))
        y = rng.random((12, 14))
        np.testing.assert_array_equal(ssim_map(x, y), ssim_map(y, x))

    def test_bounds(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            x = rng.random((10, 10))
            y = rng.random((10, 10))
            out = ssim_map(x, y)
            assert out.max() <= 1.0 + 1e-12
            assert out.min() >= -1.0 - 1e-12

    def test_default_stabilizers(self):
        p = SsimParams()
        assert p.c1 == (0.01 * 1.0) ** 2
        assert p.c2 == (0.03 * 1.0) ** 2
        p255 = SsimParams(data_range=255.0)
        assert p255.c1 == (0.01 * 255.0) ** 2

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ssim_map(np.zeros((4, 4)), np.zeros((4, 5)))

    def test_bad_params(self):
        with pytest.raises(ValueError):
            SsimParams(kernel_sigma=0.0)
        with pytest.raises(ValueError):
            SsimParams(c1=-1.0)


class TestSMean:
    def test_zero_for_identical(self):
        x = np.random.default_rng(3).random((16, 16))
        np.testing.assert_allclose(s_mean(x, x), 0.0, atol=1e-9)

    def test_constant_images(self):
        a = np.full((20, 20), 0.3)
        b = np.full((20, 20), 0.7)
        np.testing.assert_allclose(s_mean(a, b), 1.0 - CONST_SSIM, atol=1e-12)

    def test_range(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            out = s_mean(rng.random((9, 9)), rng.random((9, 9)))
            assert out.min() >= -1e-12
            assert out.max() <= 2.0 + 1e-12

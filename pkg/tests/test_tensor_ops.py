import numpy as np
import pytest

from plab.errors import DimensionError, ParameterError
from plab.rng import Rng
from plab.tensor import clamp01, conv2d, l2, linf, noise_like
from oracles import conv2d_naive


class TestConv2d:
    def test_identity_kernel(self):
        x = Rng(1).gauss(1.0, (3, 5, 5)).astype(np.float32)
        k = np.zeros((3, 3, 1, 1), dtype=np.float32)
        for i in range(3):
            k[i, i, 0, 0] = 1.0
        y = conv2d(x, k, stride=1, pad=0)
        assert np.allclose(y, x, atol=1e-6)

    def test_ones_kernel_on_constant(self):
        c = 0.4
        x = np.full((1, 6, 6), c, dtype=np.float32)
        k = np.ones((1, 1, 3, 3), dtype=np.float32)
        y = conv2d(x, k)
        assert y.shape == (1, 4, 4)
        assert np.allclose(y, 9 * c, atol=1e-6)

    def test_matches_naive_oracle(self):
        x = Rng(2).gauss(1.0, (1, 5, 5))
        k = Rng(3).gauss(1.0, (2, 1, 3, 3))
        y = conv2d(x, k)
        ref = conv2d_naive(x, k)
        assert np.max(np.abs(y - ref)) < 1e-5

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 0), (2, 1), (3, 2)])
    def test_matches_naive_with_stride_and_pad(self, stride, pad):
        x = Rng(4).gauss(1.0, (2, 9, 7))
        k = Rng(5).gauss(1.0, (3, 2, 3, 3))
        y = conv2d(x, k, stride=stride, pad=pad)
        ref = conv2d_naive(x, k, stride=stride, pad=pad)
        assert y.shape == ref.shape
        assert np.max(np.abs(y - ref)) < 1e-5

    def test_output_shape_formula(self):
        x = np.zeros((1, 8, 8), dtype=np.float32)
        k = np.zeros((4, 1, 3, 3), dtype=np.float32)
        assert conv2d(x, k, stride=1, pad=1).shape == (4, 8, 8)
        assert conv2d(x, k, stride=2, pad=1).shape == (4, 4, 4)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            conv2d(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)))

    def test_even_kernel_rejected(self):
        with pytest.raises(DimensionError):
            conv2d(np.zeros((1, 4, 4)), np.zeros((1, 1, 2, 2)))

    def test_bad_stride_rejected(self):
        with pytest.raises(ParameterError):
            conv2d(np.zeros((1, 4, 4)), np.zeros((1, 1, 3, 3)), stride=0)


class TestHelpers:
    def test_l2_and_linf(self):
        a = np.array([3.0, -4.0])
        assert np.isclose(l2(a), 5.0)
        assert np.isclose(linf(a), 4.0)

    def test_clamp01(self):
        a = np.array([-0.5, 0.5, 1.5])
        assert np.array_equal(clamp01(a), [0.0, 0.5, 1.0])

    def test_variance_matched_noise(self):
        n = 200_000
        for dist in ("gauss", "uniform", "laplace"):
            x = noise_like(Rng(21), dist, 0.1, (n,))
            assert abs(x.std() - 0.1) < 0.002, dist

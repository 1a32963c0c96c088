import numpy as np
import pytest

from plab.errors import DimensionError
from plab.rng import Rng
from plab.spectral import fft2, svd_small
from oracles import dft2_direct, jacobi_eigh


def rel_l2(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


class TestFFT:
    def test_constant_image_dc_only(self):
        c = 0.7
        spec = fft2(np.full((8, 8), c))
        assert np.isclose(spec[0, 0].real, c * 64, atol=1e-9)
        rest = spec.copy()
        rest[0, 0] = 0
        assert np.max(np.abs(rest)) < 1e-9

    def test_roundtrip_8x8(self):
        x = Rng(42).gauss(1.0, (8, 8))
        back = fft2(fft2(x), inverse=True).real
        assert rel_l2(back, x) < 1e-4

    def test_matches_direct_dft_4x4(self):
        x = Rng(1).gauss(1.0, (4, 4))
        assert rel_l2(fft2(x), dft2_direct(x)) < 1e-5

    def test_matches_direct_dft_rectangular(self):
        x = Rng(2).gauss(1.0, (4, 8))
        assert rel_l2(fft2(x), dft2_direct(x)) < 1e-5
        assert rel_l2(fft2(x, inverse=True), dft2_direct(x, inverse=True)) < 1e-5

    def test_conjugate_symmetry_of_real_input(self):
        x = Rng(3).gauss(1.0, (8, 8))
        spec = fft2(x)
        h, w = spec.shape
        for i in range(h):
            for j in range(w):
                assert np.isclose(spec[i, j], np.conj(spec[-i % h, -j % w]), atol=1e-9)

    @pytest.mark.parametrize("shape", [(2, 2), (4, 4), (8, 8), (16, 16), (32, 32), (64, 64), (16, 64)])
    def test_roundtrip_identity_all_pow2(self, shape):
        x = Rng(5).gauss(1.0, shape)
        back = fft2(fft2(x), inverse=True).real
        assert rel_l2(back, x) < 1e-4

    def test_parseval_fixes_normalization(self):
        x = Rng(7).gauss(1.0, (16, 16))
        spec = fft2(x)
        lhs = np.sum(np.abs(spec) ** 2)
        rhs = 16 * 16 * np.sum(x**2)
        assert np.isclose(lhs, rhs, rtol=1e-4)

    def test_non_power_of_two_rejected(self):
        with pytest.raises(DimensionError):
            fft2(np.zeros((6, 8)))
        with pytest.raises(DimensionError):
            fft2(np.zeros((8, 12)))

    def test_non_2d_rejected(self):
        with pytest.raises(DimensionError):
            fft2(np.zeros((2, 2, 2)))


class TestSVD:
    def test_identity_matrix_all_ones(self):
        u, s, v = svd_small(np.eye(4))
        assert np.allclose(s, 1.0, atol=1e-12)

    def test_rank_one(self):
        a = Rng(11).gauss(1.0, (6,))
        b = Rng(12).gauss(1.0, (5,))
        m = np.outer(a, b)
        u, s, v = svd_small(m)
        expect = np.linalg.norm(a) * np.linalg.norm(b)
        assert np.isclose(s[0], expect, rtol=1e-6)
        assert np.all(np.abs(s[1:]) < 1e-9 * expect)

    def test_squared_singulars_match_jacobi_oracle(self):
        m = Rng(13).gauss(1.0, (8, 8))
        _, s, _ = svd_small(m)
        eig, _ = jacobi_eigh(m.T @ m)
        assert np.allclose(s**2, eig, rtol=1e-6)

    @pytest.mark.parametrize("shape", [(4, 4), (8, 8), (16, 16), (64, 64), (12, 7), (7, 12)])
    def test_reconstruction_and_orthonormality(self, shape):
        m = Rng(17).gauss(1.0, shape)
        u, s, v = svd_small(m)
        h, w = shape
        r = min(h, w)
        recon = u[:, :r] @ np.diag(s) @ v[:, :r].T
        assert rel_l2(recon, m) < 1e-4
        assert np.allclose(u.T @ u, np.eye(h), atol=1e-4)
        assert np.allclose(v.T @ v, np.eye(w), atol=1e-4)
        assert np.all(np.diff(s) <= 1e-12)
        assert np.all(s >= 0)

    def test_zero_matrix(self):
        u, s, v = svd_small(np.zeros((5, 3)))
        assert not s.any()
        assert np.allclose(u.T @ u, np.eye(5), atol=1e-12)

    def test_non_2d_rejected(self):
        with pytest.raises(DimensionError):
            svd_small(np.zeros((2, 2, 2)))

    def test_oversize_rejected(self):
        with pytest.raises(DimensionError):
            svd_small(np.zeros((300, 4)))

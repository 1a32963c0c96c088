"""Spectral primitives: 2-D FFT and small-matrix SVD.

Both are self-contained so that results are reproducible bit-for-bit across
platforms with the same BLAS-free code path.

FFT convention: unnormalized forward transform
``X[k] = sum_n x[n] exp(-2*pi*i*k*n/N)`` per axis, inverse scaled by
``1/(H*W)``.  Consequently ``sum |X|^2 == H*W * sum |x|^2`` (Parseval) and
the DC coefficient of a constant image c is ``c*H*W``.
"""

import numpy as np

from plab.errors import DimensionError


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_last_axis(a: np.ndarray, sign: float) -> np.ndarray:
    """Iterative radix-2 Cooley-Tukey over the last axis of a complex array."""
    n = a.shape[-1]
    if n == 1:
        return a
    a = a[..., _bit_reverse_indices(n)]
    m = 1
    while m < n:
        w = np.exp(sign * 1j * np.pi * np.arange(m) / m)
        blk = a.reshape(a.shape[:-1] + (n // (2 * m), 2, m))
        even = blk[..., 0, :].copy()
        odd = blk[..., 1, :] * w
        blk[..., 0, :] = even + odd
        blk[..., 1, :] = even - odd
        m *= 2
    return a


def fft2(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """2-D FFT of a (H, W) array; H and W must be powers of two.

    Forward accepts real or complex input; inverse expects the complex
    spectrum and returns the (complex) signal scaled by 1/(H*W).
    """
    x = np.asarray(x)
    if x.ndim != 2:
        raise DimensionError(f"fft2 expects a 2-D array, got shape {x.shape}")
    h, w = x.shape
    if not (_is_pow2(h) and _is_pow2(w)):
        raise DimensionError(f"fft2 dimensions must be powers of two, got {h}x{w}")
    sign = 1.0 if inverse else -1.0
    a = x.astype(np.complex128)
    a = _fft_last_axis(a, sign)
    a = _fft_last_axis(a.T.copy(), sign).T
    if inverse:
        a /= h * w
    return a


def _orthonormal_completion(u_thin: np.ndarray, h: int) -> np.ndarray:
    """Extend orthonormal columns (h x r, r <= h) to a full h x h basis."""
    cols = [u_thin[:, j].copy() for j in range(u_thin.shape[1])]
    for i in range(h):
        if len(cols) == h:
            break
        v = np.zeros(h)
        v[i] = 1.0
        for _ in range(2):  # re-orthogonalize for stability
            for c in cols:
                v -= (c @ v) * c
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            cols.append(v / norm)
    return np.stack(cols, axis=1)


def svd_small(m: np.ndarray):
    """Full SVD of a small matrix via one-sided Jacobi on the smaller side.

    Returns (U, s, V) with U (H,H) and V (W,W) orthonormal, s the
    min(H,W) singular values in non-increasing order, and
    ``m == U[:, :len(s)] @ diag(s) @ V[:, :len(s)].T``.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"svd_small expects a 2-D array, got shape {m.shape}")
    h, w = m.shape
    if h == 0 or w == 0:
        raise DimensionError("svd_small requires non-empty dimensions")
    if max(h, w) > 256:
        raise DimensionError("svd_small is limited to matrices up to 256x256")
    if h < w:
        u, s, v = svd_small(m.T)
        return v, s, u

    b = m.copy()
    v = np.eye(w)
    scale = np.linalg.norm(b)
    if scale == 0.0:
        return np.eye(h), np.zeros(w), v
    tol = 1e-15
    for _ in range(60):
        rotated = False
        for p in range(w - 1):
            for q in range(p + 1, w):
                bp, bq = b[:, p], b[:, q]
                gamma = bp @ bq
                alpha = bp @ bp
                beta = bq @ bq
                if abs(gamma) <= tol * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                if zeta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s_ = c * t
                b[:, p], b[:, q] = c * bp - s_ * bq, s_ * bp + c * bq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p], v[:, q] = c * vp - s_ * vq, s_ * vp + c * vq
        if not rotated:
            break

    s = np.linalg.norm(b, axis=0)
    order = np.argsort(-s, kind="stable")
    s = s[order]
    b = b[:, order]
    v = v[:, order]
    u_cols = []
    for j in range(w):
        if s[j] > 1e-13 * scale:
            u_cols.append(b[:, j] / s[j])
        else:
            s[j] = 0.0
    if u_cols:
        u_thin = np.stack(u_cols, axis=1)
    else:
        u_thin = np.zeros((h, 0))
    u = _orthonormal_completion(u_thin, h)
    return u, s, v

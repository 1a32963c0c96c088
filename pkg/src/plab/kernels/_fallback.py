"""Pure-numpy implementations of the hot kernels.

Call-compatible with the compiled module ``plab._core``; selected by
``plab.kernels`` when the extension is unavailable or ``PLAB_PURE_PYTHON``
is set.  Floating-point results may differ from the compiled backend in the
last bits (different summation order); the raw uint64 generator stream is
bit-identical.
"""

import numpy as np

BACKEND = "fallback"

_MASK = (1 << 64) - 1


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


def xoshiro_fill(state: np.ndarray, n: int) -> np.ndarray:
    """Draw ``n`` uint64 values from xoshiro256**, advancing ``state`` in place.

    ``state`` is a uint64 array of length 4, never all zero.
    """
    s0, s1, s2, s3 = (int(v) for v in state)
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        out[i] = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
    return out


def conv2d_fwd(x: np.ndarray, k: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Cross-correlate x (B,C,H,W) with k (F,C,Kh,Kw), float64 in and out."""
    b, c, h, w = x.shape
    f, _, kh, kw = k.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    y = np.zeros((b, f, ho, wo))
    for u in range(kh):
        for v in range(kw):
            patch = xp[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride]
            y += np.einsum("bchw,fc->bfhw", patch, k[:, :, u, v], optimize=True)
    return y


def conv2d_bwd(x, k, gy, stride, pad):
    """Gradients of conv2d_fwd w.r.t. input and kernel.

    Returns (gx, gk) with the shapes of x and k.
    """
    b, c, h, w = x.shape
    f, _, kh, kw = k.shape
    ho, wo = gy.shape[2], gy.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    gxp = np.zeros_like(xp)
    gk = np.zeros_like(k)
    for u in range(kh):
        for v in range(kw):
            patch = xp[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride]
            gk[:, :, u, v] = np.einsum("bfhw,bchw->fc", gy, patch, optimize=True)
            gxp[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride] += np.einsum(
                "bfhw,fc->bchw", gy, k[:, :, u, v], optimize=True
            )
    gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
    return gx, gk


def maxpool2_fwd(x):
    """2x2/stride-2 max pooling of x (B,C,H,W); H, W even.

    Returns (y, idx) where idx in [0,4) encodes the in-block argmax in
    row-major block order (ties resolved to the first position).
    """
    b, c, h, w = x.shape
    xr = (
        x.reshape(b, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, h // 2, w // 2, 4)
    )
    idx = xr.argmax(axis=4)
    y = np.take_along_axis(xr, idx[..., None], axis=4)[..., 0]
    return y, idx.astype(np.int8)


def maxpool2_bwd(gy, idx, h, w):
    """Route gy back to the argmax positions recorded by maxpool2_fwd."""
    b, c, ho, wo = gy.shape
    gxr = np.zeros((b, c, ho, wo, 4))
    np.put_along_axis(gxr, idx[..., None].astype(np.int64), gy[..., None], axis=4)
    return (
        gxr.reshape(b, c, ho, wo, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, h, w)
    )

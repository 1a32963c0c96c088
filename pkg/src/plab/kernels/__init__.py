"""Backend selection for the hot kernels.

The compiled extension ``plab._core`` is preferred; the pure-numpy fallback
is used when the extension is missing or ``PLAB_PURE_PYTHON`` is set to a
non-empty value other than ``0``.  Both backends expose the same functions
and produce identical uint64 generator streams; float results agree to
rounding error.
"""

import os

if os.environ.get("PLAB_PURE_PYTHON", "") not in ("", "0"):
    from plab.kernels import _fallback as _impl
else:
    try:
        from plab import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        from plab.kernels import _fallback as _impl

BACKEND = _impl.BACKEND
xoshiro_fill = _impl.xoshiro_fill
conv2d_fwd = _impl.conv2d_fwd
conv2d_bwd = _impl.conv2d_bwd
maxpool2_fwd = _impl.maxpool2_fwd
maxpool2_bwd = _impl.maxpool2_bwd

__all__ = [
    "BACKEND",
    "xoshiro_fill",
    "conv2d_fwd",
    "conv2d_bwd",
    "maxpool2_fwd",
    "maxpool2_bwd",
]

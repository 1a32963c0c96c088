"""Dense-tensor conventions and the shared array-level operations.

Tensors are plain ``numpy.ndarray`` values: float32 storage at module
boundaries (images, parameters, checkpoints), float64 accumulation inside
kernels.  Arrays returned by public operations are treated as immutable;
callers copy before mutating.
"""

import numpy as np

from plab import kernels
from plab.errors import DimensionError, NumericalError, ParameterError
from plab.rng import Rng

DISTRIBUTIONS = ("gauss", "uniform", "laplace")


def sample(rng: Rng, dist, shape) -> np.ndarray:
    """I.i.d. draws from ``dist`` = (name, scale) with the distribution's
    natural scale parameter: gauss sigma, uniform bound, laplace scale."""
    name, scale = dist
    if name == "gauss":
        out = rng.gauss(scale, shape)
    elif name == "uniform":
        out = rng.uniform(scale, shape)
    elif name == "laplace":
        out = rng.laplace(scale, shape)
    else:
        raise ParameterError(f"unknown distribution {name!r}")
    return out.astype(np.float32)


def noise_like(rng: Rng, dist_name: str, sigma: float, shape) -> np.ndarray:
    """Zero-mean noise with standard deviation ``sigma`` for any of the three
    distributions: the uniform bound is sigma*sqrt(3) and the laplace scale
    sigma/sqrt(2), so all kinds share variance at equal sigma."""
    if dist_name == "gauss":
        return rng.gauss(sigma, shape)
    if dist_name == "uniform":
        return rng.uniform(sigma * np.sqrt(3.0), shape)
    if dist_name == "laplace":
        return rng.laplace(sigma / np.sqrt(2.0), shape)
    raise ParameterError(f"unknown distribution {dist_name!r}")


def conv2d(x: np.ndarray, k: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Direct 2-D convolution (cross-correlation convention, no kernel flip).

    x: (C, H, W); k: (F, C, Kh, Kw) with odd Kh, Kw.  Output (F, H', W') with
    H' = (H + 2*pad - Kh)//stride + 1 and likewise W'.
    """
    x = np.asarray(x)
    k = np.asarray(k)
    if x.ndim != 3 or k.ndim != 4:
        raise DimensionError(f"conv2d expects x (C,H,W) and k (F,C,Kh,Kw), got {x.shape}, {k.shape}")
    if x.shape[0] != k.shape[1]:
        raise DimensionError(f"channel mismatch: x has {x.shape[0]}, k expects {k.shape[1]}")
    kh, kw = k.shape[2], k.shape[3]
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"kernel sides must be odd, got {kh}x{kw}")
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    if pad < 0:
        raise ParameterError("pad must be >= 0")
    h, w = x.shape[1], x.shape[2]
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise DimensionError("kernel larger than padded input")
    y = kernels.conv2d_fwd(
        x[None].astype(np.float64), k.astype(np.float64), stride, pad
    )[0]
    return y.astype(np.float32)


def check_finite(a: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"{what} contains non-finite values")
    return a


def l2(a: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64).ravel()))


def linf(a: np.ndarray) -> float:
    a = np.asarray(a)
    return float(np.max(np.abs(a))) if a.size else 0.0


def clamp01(a: np.ndarray) -> np.ndarray:
    return np.clip(a, 0.0, 1.0)

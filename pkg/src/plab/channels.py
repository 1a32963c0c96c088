"""Input-perturbation channels and their distortion measure.

A channel transforms an image in [0,1] before the classifier sees it.  Six
families: three deterministic compressions

* ``cd`` -- color-depth quantization to ``2^b`` levels,
* ``fc`` -- frequency filtering that keeps a fraction of FFT rings,
* ``svd`` -- low-rank reconstruction keeping a fraction of singular values,

three additive-noise kinds (``gauss``, ``uniform``, ``laplace``,
variance-matched at equal sigma), plus the identity ``empty``.  All outputs
are clamped back to [0,1].

Descriptor strings: ``fc:0.5``, ``cd:4``, ``svd:0.5``, ``gauss:0.03``,
``uniform:0.04``, ``laplace:0.03``, ``empty``.
"""

from dataclasses import dataclass

import numpy as np

from plab.errors import ArgumentError, ConfigError, DimensionError, ParameterError
from plab.rng import Rng
from plab.spectral import fft2, svd_small
from plab.tensor import clamp01, noise_like

DETERMINISTIC_KINDS = ("fc", "cd", "svd", "empty")
NOISE_KINDS = ("gauss", "uniform", "laplace")
FAMILIES = ("fc", "cd", "svd") + NOISE_KINDS


@dataclass(frozen=True)
class Channel:
    kind: str
    param: float = 0.0  # kept fraction (fc) / bits (cd) / rank fraction (svd) / sigma

    def __post_init__(self):
        if self.kind == "empty":
            return
        if self.kind == "fc":
            if not 0.0 <= self.param <= 1.0:
                raise ParameterError(f"fc kept-fraction must be in [0,1], got {self.param}")
        elif self.kind == "cd":
            b = self.param
            if b != int(b) or not 1 <= b <= 8:
                raise ParameterError(f"cd bits must be an integer in [1,8], got {b}")
        elif self.kind == "svd":
            if not 0.0 < self.param <= 1.0:
                raise ParameterError(f"svd rank-fraction must be in (0,1], got {self.param}")
        elif self.kind in NOISE_KINDS:
            if self.param < 0:
                raise ParameterError(f"noise sigma must be >= 0, got {self.param}")
        else:
            raise ParameterError(f"unknown channel kind {self.kind!r}")

    @property
    def deterministic(self) -> bool:
        return self.kind in DETERMINISTIC_KINDS


EMPTY = Channel("empty")


def cd_quantize(x: np.ndarray, bits: int) -> np.ndarray:
    """Quantize values to the 2^bits-level grid on [0,1].

    Inputs are clamped to [0,1] first; ties round half away from zero.
    """
    if not 1 <= int(bits) <= 8 or int(bits) != bits:
        raise ParameterError(f"bits must be an integer in [1,8], got {bits}")
    levels = float(2 ** int(bits) - 1)
    xc = clamp01(np.asarray(x, dtype=np.float64))
    # values are >= 0, so floor(v+0.5) rounds halves away from zero
    return (np.floor(xc * levels + 0.5) / levels).astype(np.float32)


def _ring_mask(h: int, w: int, kept_fraction: float) -> np.ndarray:
    """Keep the lowest-frequency rings of an h x w spectrum.

    A coefficient's ring is max over axes of min(index, alias), i.e. square
    rings around DC; ``kept_fraction`` is the fraction of rings kept, so 1.0
    keeps everything and any positive fraction keeps at least DC.
    """
    iy = np.arange(h)
    ix = np.arange(w)
    ry = np.minimum(iy, h - iy)
    rx = np.minimum(ix, w - ix)
    ring = np.maximum.outer(ry, rx)
    n_rings = max(h // 2, w // 2) + 1
    kept = int(np.ceil(kept_fraction * n_rings))
    return ring < kept


def fc_filter(x: np.ndarray, kept_fraction: float) -> np.ndarray:
    """Frequency compression: FFT, zero all rings above the kept band,
    inverse FFT, clamp.  x is (C,H,W) with power-of-two H, W."""
    if not 0.0 <= kept_fraction <= 1.0:
        raise ParameterError(f"kept fraction must be in [0,1], got {kept_fraction}")
    x = np.asarray(x)
    if x.ndim != 3:
        raise DimensionError(f"fc_filter expects (C,H,W), got shape {x.shape}")
    _, h, w = x.shape
    mask = _ring_mask(h, w, kept_fraction)
    out = np.empty_like(x, dtype=np.float64)
    for c in range(x.shape[0]):
        spec = fft2(x[c].astype(np.float64)) * mask
        out[c] = fft2(spec, inverse=True).real
    return clamp01(out).astype(np.float32)


def fc_mask_gradient(g: np.ndarray, kept_fraction: float) -> np.ndarray:
    """Apply the fc frequency mask to a gradient.  The mask operation is a
    real-linear orthogonal projection, hence its own adjoint; clamping is
    ignored (straight-through)."""
    g = np.asarray(g)
    _, h, w = g.shape
    mask = _ring_mask(h, w, kept_fraction)
    out = np.empty_like(g, dtype=np.float64)
    for c in range(g.shape[0]):
        spec = fft2(g[c].astype(np.float64)) * mask
        out[c] = fft2(spec, inverse=True).real
    return out.astype(np.float32)


def svd_reduce(x: np.ndarray, rank_fraction: float) -> np.ndarray:
    """Low-rank compression: keep ceil(r * min(H,W)) singular values per
    channel matrix, reconstruct, clamp."""
    if not 0.0 < rank_fraction <= 1.0:
        raise ParameterError(f"rank fraction must be in (0,1], got {rank_fraction}")
    x = np.asarray(x)
    if x.ndim != 3:
        raise DimensionError(f"svd_reduce expects (C,H,W), got shape {x.shape}")
    _, h, w = x.shape
    k = int(np.ceil(rank_fraction * min(h, w)))
    out = np.empty_like(x, dtype=np.float64)
    for c in range(x.shape[0]):
        u, s, v = svd_small(x[c].astype(np.float64))
        out[c] = (u[:, :k] * s[:k]) @ v[:, :k].T
    return clamp01(out).astype(np.float32)


def apply_channel(channel: Channel, x: np.ndarray, rng: Rng | None = None) -> np.ndarray:
    """Run one image through the channel.  Deterministic kinds ignore rng;
    noise kinds draw fresh perturbations and clamp the sum to [0,1]."""
    if channel.kind == "empty":
        return np.asarray(x, dtype=np.float32)
    if channel.kind == "cd":
        return cd_quantize(x, int(channel.param))
    if channel.kind == "fc":
        return fc_filter(x, channel.param)
    if channel.kind == "svd":
        return svd_reduce(x, channel.param)
    if rng is None:
        raise ArgumentError(f"channel {channel.kind} is stochastic and needs an rng")
    eps = noise_like(rng, channel.kind, channel.param, np.asarray(x).shape)
    return clamp01(np.asarray(x, dtype=np.float64) + eps).astype(np.float32)


def channel_distortion(channel: Channel, xs, rng: Rng | None = None, trials: int = 1) -> float:
    """Mean L2 reconstruction error of the channel over an image set
    (averaged over trials for stochastic kinds)."""
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    xs = list(xs)
    if not xs:
        raise ArgumentError("channel_distortion needs at least one image")
    if channel.deterministic and trials != 1:
        raise ParameterError("deterministic channels take exactly one trial")
    total = 0.0
    count = 0
    for i, x in enumerate(xs):
        for t in range(trials):
            r = rng.derive(i * trials + t) if rng is not None else None
            y = apply_channel(channel, x, r)
            diff = y.astype(np.float64) - np.asarray(x, dtype=np.float64)
            total += float(np.linalg.norm(diff.ravel()))
            count += 1
    return total / count


def parse_channel(desc: str) -> Channel:
    """Parse a channel descriptor like ``fc:0.5`` or ``empty``."""
    desc = desc.strip()
    if desc == "empty":
        return EMPTY
    if ":" not in desc:
        raise ConfigError(f"bad channel descriptor {desc!r}")
    kind, _, arg = desc.partition(":")
    kind = kind.strip()
    try:
        value = float(arg)
    except ValueError as exc:
        raise ConfigError(f"bad channel parameter in {desc!r}") from exc
    try:
        return Channel(kind, value)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc


def format_channel(channel: Channel) -> str:
    if channel.kind == "empty":
        return "empty"
    if channel.kind == "cd":
        return f"cd:{int(channel.param)}"
    return f"{channel.kind}:{channel.param:g}"

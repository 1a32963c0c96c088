"""Dataset ingestion and synthetic data generation.

The synthetic set is the canonical substrate for experiments: each class is
a fixed geometric template (bars, disc, checkerboard, ...) plus per-pixel
gaussian noise, clamped to [0,1].  Classes are balanced and the 80/20
train/test split is deterministic in the example index, so a (seed, config)
pair always produces the identical dataset.

A loader for the flat binary image format (records of 1 label byte +
3*32*32 pixel bytes, planar RGB row-major) is provided for optional runs
on real data.
"""

from dataclasses import dataclass

import numpy as np

from plab.errors import ConfigError, FormatError
from plab.rng import Rng

RECORD_BYTES = 3073
TEMPLATE_COUNT = 10


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float32 in [0,1]
    labels: np.ndarray  # (N,) int64
    split: np.ndarray  # (N,) "train" / "test"

    def subset(self, tag: str):
        mask = self.split == tag
        return self.images[mask], self.labels[mask]

    def __len__(self):
        return len(self.images)


def _templates(h: int, w: int, lo: float, hi: float) -> np.ndarray:
    """The ten class patterns as (10, h, w) float arrays in [lo, hi]."""
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    band = max(h // 8, 1)
    masks = [
        (yy >= h // 3) & (yy < h - h // 3),  # horizontal bar
        (xx >= w // 3) & (xx < w - w // 3),  # vertical bar
        ((yy - cy) ** 2 + (xx - cx) ** 2) <= (0.3 * min(h, w)) ** 2,  # disc
        ((yy // band) + (xx // band)) % 2 == 0,  # checkerboard
        np.abs(yy - xx) <= band,  # diagonal stripe
        np.minimum.reduce([yy, xx, h - 1 - yy, w - 1 - xx]) < band,  # border ring
        ((yy >= h // 3) & (yy < h - h // 3)) | ((xx >= w // 3) & (xx < w - w // 3)),  # cross
        None,  # horizontal gradient, continuous
        ((yy < h // 2) & (xx < w // 2)) | ((yy >= h // 2) & (xx >= w // 2)),  # two corners
        (np.maximum(np.abs(yy - cy), np.abs(xx - cx)) // band) % 2 == 0,  # concentric squares
    ]
    out = np.empty((TEMPLATE_COUNT, h, w), dtype=np.float64)
    for i, mask in enumerate(masks):
        if mask is None:
            out[i] = lo + (hi - lo) * (xx / max(w - 1, 1))
        else:
            out[i] = np.where(mask, hi, lo)
    return out


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def gen_synthetic(
    n: int = 2000,
    num_classes: int = 4,
    shape=(3, 16, 16),
    noise_level: float = 0.25,
    seed: int = 0,
    contrast=(0.25, 0.75),
) -> Dataset:
    """Balanced template dataset; bit-identical for identical arguments."""
    if num_classes > TEMPLATE_COUNT:
        raise ConfigError(f"at most {TEMPLATE_COUNT} classes available, got {num_classes}")
    if num_classes < 2:
        raise ConfigError("need at least two classes")
    c, h, w = shape
    if not (_is_pow2(h) and _is_pow2(w)):
        raise ConfigError(f"spatial size must be a power of two, got {h}x{w}")
    if noise_level < 0:
        raise ConfigError("noise_level must be >= 0")
    templates = _templates(h, w, contrast[0], contrast[1])
    rng = Rng(seed, 17)
    images = np.empty((n, c, h, w), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    split = np.empty(n, dtype="<U5")
    for i in range(n):
        cls = i % num_classes
        noise = rng.derive(i).gauss(noise_level, (c, h, w))
        images[i] = np.clip(templates[cls][None] + noise, 0.0, 1.0)
        labels[i] = cls
        split[i] = "test" if (i // num_classes) % 5 == 4 else "train"
    return Dataset(images=images, labels=labels, split=split)


def load_binary_dataset(path, num_classes: int = 10, split: str = "train") -> Dataset:
    """Parse the flat binary batch format; pixel bytes map to v/255."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) == 0 or len(raw) % RECORD_BYTES != 0:
        raise FormatError(
            f"{path}: length {len(raw)} is not a positive multiple of {RECORD_BYTES}"
        )
    n = len(raw) // RECORD_BYTES
    buf = np.frombuffer(raw, dtype=np.uint8).reshape(n, RECORD_BYTES)
    labels = buf[:, 0].astype(np.int64)
    if labels.max() >= num_classes:
        raise FormatError(
            f"{path}: label byte {labels.max()} outside [0, {num_classes})"
        )
    images = (buf[:, 1:].reshape(n, 3, 32, 32).astype(np.float32)) / 255.0
    return Dataset(
        images=images,
        labels=labels,
        split=np.full(n, split, dtype="<U5"),
    )

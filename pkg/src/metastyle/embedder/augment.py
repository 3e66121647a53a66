"""Differentiable image augmentations: random crop, resize and flip."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..tensorcore import DimensionError, UsageError, index, reshape, resample
from .text import DEFAULT_TEMPLATES, check_template


@dataclass(frozen=True)
class AugmentationConfig:
    n_image_augs: int = 4
    crop_min: float = 0.7
    crop_max: float = 1.0
    flip_prob: float = 0.5
    templates: tuple = field(default=DEFAULT_TEMPLATES)

    def __post_init__(self):
        if self.n_image_augs < 1:
            raise UsageError("n_image_augs must be >= 1")
        if not 0.0 < self.crop_min <= self.crop_max <= 1.0:
            raise UsageError("crop fractions must satisfy 0 < crop_min <= crop_max <= 1")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise UsageError("flip_prob must lie in [0, 1]")
        for t in self.templates:
            check_template(t)

    @classmethod
    def identity(cls, n=1):
        return cls(n_image_augs=n, crop_min=1.0, crop_max=1.0, flip_prob=0.0)


def _interp_matrix(n, origin, extent, flip):
    """Bilinear sampling of ``n`` output pixels from ``[origin, origin+extent)``."""
    j = np.arange(n, dtype=np.float64)
    src = origin + (j + 0.5) * (extent / n) - 0.5
    src = np.clip(src, 0.0, n - 1.0)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    t = src - lo
    m = np.zeros((n, n))
    m[j.astype(int), lo] += 1.0 - t
    m[j.astype(int), hi] += t
    return m[::-1].copy() if flip else m


def crop_matrices(size, cfg, rng, count):
    """Row/column sampling matrices for ``count`` augmentations.

    Each augmentation consumes exactly four uniforms (fraction, x, y, flip)
    so the rng stream advances deterministically.
    """
    rows, cols = [], []
    for _ in range(count):
        frac, ux, uy, uf = rng.random(4)
        f = cfg.crop_min + (cfg.crop_max - cfg.crop_min) * frac
        ext = f * size
        rows.append(_interp_matrix(size, uy * (size - ext), ext, False))
        cols.append(_interp_matrix(size, ux * (size - ext), ext, uf < cfg.flip_prob))
    return np.stack(rows), np.stack(cols)


def augment_batch(images, cfg, rng):
    """``n×3×H×W`` -> ``(n·A)×3×H×W``; image ``i`` fills rows ``i·A .. i·A+A-1``."""
    if images.ndim != 4:
        raise DimensionError(f"expected n×3×H×W, got {images.shape}")
    n, c, h, w = images.shape
    if h != w:
        raise DimensionError("augmentations expect square images")
    a = cfg.n_image_augs
    rows, cols = crop_matrices(h, cfg, rng, n * a)
    from ..tensorcore import expand, transpose
    rep = reshape(transpose(expand(images, a, axis=0), (1, 0, 2, 3, 4)), (n * a, c, h, w))
    return resample(rep, rows, cols)


def augment_images(img, cfg, rng):
    """List of ``cfg.n_image_augs`` augmented copies of one image ``3×H×W``."""
    if img.ndim != 3:
        raise DimensionError(f"expected 3×H×W, got {img.shape}")
    out = augment_batch(reshape(img, (1,) + img.shape), cfg, rng)
    return [index(out, i) for i in range(cfg.n_image_augs)]

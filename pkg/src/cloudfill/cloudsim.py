"""Synthetic cloud occlusion: blob generation, masking, coverage stats.

Masks are binary (T, H, W) tensors shared across spectral channels:
a pixel is either cloud (1) or clear (0) for a whole acquisition.
Synthetic clouds are thresholded Gaussian-blurred noise blobs so the
occlusions have ragged boundaries and random textures. SAR frames are
never masked.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, ShapeError


class MaskProvenance(enum.Enum):
    REAL = "real"
    SYNTHETIC = "synthetic"
    UNION = "union"


@dataclass
class CloudMask:
    mask: Tensor   # (T, H, W), values in {0, 1}
    provenance: MaskProvenance

    @property
    def shape(self):
        return self.mask.shape


@dataclass
class CloudGenConfig:
    """Knobs for the synthetic cloud generator.

    ``cloud_size`` scales the minimum blob radius relative to the short
    image side; radii are drawn from [s, 2s] with s = cloud_size *
    min(H, W), which lands the default configuration at roughly one
    third total coverage on 60x60x6 stacks.
    """

    n_clouds: int = 10
    cloud_size: float = 0.3
    blur_sigma: float = 0.35          # relative to the blob radius
    threshold_quantile: float = 0.45
    seed: int = 0

    def __post_init__(self):
        if self.n_clouds < 0:
            raise ValueError(f"n_clouds must be >= 0, got {self.n_clouds}")
        if not (0.0 < self.cloud_size <= 1.0):
            raise ValueError(f"cloud_size must lie in (0, 1], got {self.cloud_size}")
        if self.blur_sigma <= 0:
            raise ValueError(f"blur_sigma must be positive, got {self.blur_sigma}")
        if not (0.0 <= self.threshold_quantile < 1.0):
            raise ValueError(f"threshold_quantile must lie in [0, 1), got {self.threshold_quantile}")


def _gaussian_blur2d(field: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, reflect padding, kernel truncated at 3 sigma."""
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float32)
    k = np.exp(-0.5 * (xs / np.float32(sigma)) ** 2)
    k /= k.sum()
    padded = np.pad(field.astype(np.float32, copy=False), radius, mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(padded, k.size, axis=1)
    tmp = win @ k
    win = np.lib.stride_tricks.sliding_window_view(tmp, k.size, axis=0)
    return win @ k


def generate_mask(cfg: CloudGenConfig, t_msi: int, H: int, W: int) -> CloudMask:
    """Draw ``cfg.n_clouds`` blobs, each occluding one random MSI frame.

    Per cloud: pick a frame, a uniform center and a radius in [s, 2s];
    blur white noise over the blob's bounding box with sigma =
    blur_sigma * r; keep the pixels inside the disk whose blurred value
    exceeds the disk's threshold_quantile. Clouds are drawn sequentially
    from one seeded stream, so a larger n_clouds strictly extends the
    mask drawn with a smaller one.
    """
    if H < 8 or W < 8:
        raise ValueError(f"mask extent too small: {H}x{W} (need >= 8)")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, t_msi, H, W]))
    mask = np.zeros((t_msi, H, W), dtype=np.float32)
    s = cfg.cloud_size * min(H, W)
    for _ in range(cfg.n_clouds):
        t = int(rng.integers(t_msi))
        cy = rng.uniform(0.0, H)
        cx = rng.uniform(0.0, W)
        r = rng.uniform(s, 2.0 * s)
        y0 = int(math.floor(cy - r))
        y1 = int(math.ceil(cy + r)) + 1
        x0 = int(math.floor(cx - r))
        x1 = int(math.ceil(cx + r)) + 1
        noise = rng.standard_normal((y1 - y0, x1 - x0))
        blurred = _gaussian_blur2d(noise, cfg.blur_sigma * r)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        vals = blurred[disk]
        if vals.size == 0:
            continue
        blob = disk & (blurred >= np.quantile(vals, cfg.threshold_quantile))
        iy0, iy1 = max(y0, 0), min(y1, H)
        ix0, ix1 = max(x0, 0), min(x1, W)
        if iy0 >= iy1 or ix0 >= ix1:
            continue
        view = mask[t, iy0:iy1, ix0:ix1]
        np.maximum(view, blob[iy0 - y0:iy1 - y0, ix0 - x0:ix1 - x0], out=view)
    return CloudMask(Tensor(mask), MaskProvenance.SYNTHETIC)


def apply_mask(x: Tensor, m: CloudMask) -> Tensor:
    """Zero out cloud pixels: out(t,c,x,y) = x(t,c,x,y) * (1 - m(t,x,y))."""
    xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float32)
    md = m.mask.data
    if xd.shape[0] != md.shape[0] or xd.shape[-2:] != md.shape[-2:]:
        raise ShapeError(f"apply_mask shape mismatch: data {xd.shape} vs mask {md.shape}")
    return Tensor(xd * (1.0 - md[:, None, :, :]))


def coverage(m: CloudMask) -> float:
    """Fraction of (t, x, y) cells occluded."""
    return float(m.mask.data.mean())


def union(a: CloudMask, b: CloudMask) -> CloudMask:
    """Elementwise OR of two masks."""
    if a.mask.shape != b.mask.shape:
        raise ShapeError(f"union shape mismatch: {a.mask.shape} vs {b.mask.shape}")
    return CloudMask(Tensor(np.maximum(a.mask.data, b.mask.data)), MaskProvenance.UNION)


def real_cloud_mask(real_cloud: Tensor) -> CloudMask:
    """Wrap a scene's real-cloud raster as a mask."""
    return CloudMask(Tensor(real_cloud.data.astype(np.float32)), MaskProvenance.REAL)

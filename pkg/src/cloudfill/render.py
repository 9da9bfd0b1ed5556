"""Mosaic rendering of inputs, targets and reconstructions as PNG.

Each row is one image source, each column one MSI acquisition; cells
are true-color composites (B4, B3, B2 by default) stretched by a fixed
gain. Target cells paint real-cloud pixels black, matching how
unobserved ground truth is usually displayed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw

from .dataio import BAND_NAMES, TileSample

GUTTER = 2
HEADER = 14
LABEL_W = 84


@dataclass
class RenderSpec:
    """Row layout and color stretch for a mosaic.

    rows: ordered (label, source) pairs; source is "input", "target" or
    a key into the predictions dict handed to render_mosaic.
    """

    rows: list[tuple[str, str]]
    rgb_bands: tuple[str, str, str] = ("B4", "B3", "B2")
    gain: float = 2.5
    cell_scale: int = 1

    def __post_init__(self):
        if self.gain <= 0:
            raise ValueError(f"gain must be positive, got {self.gain}")
        for b in self.rgb_bands:
            if b not in BAND_NAMES:
                raise ValueError(f"unknown band {b!r}; choose from {BAND_NAMES}")

    @property
    def band_indices(self) -> tuple[int, int, int]:
        return tuple(BAND_NAMES.index(b) for b in self.rgb_bands)


def _to_rgb_cell(frame_bands: np.ndarray, spec: RenderSpec) -> np.ndarray:
    """(11, H, W) -> uint8 (H, W, 3) with gain stretch."""
    r, g, b = spec.band_indices
    rgb = np.stack([frame_bands[r], frame_bands[g], frame_bands[b]], axis=-1)
    rgb = np.clip(spec.gain * rgb, 0.0, 1.0)
    cell = (rgb * 255.0 + 0.5).astype(np.uint8)
    if spec.cell_scale > 1:
        cell = np.repeat(np.repeat(cell, spec.cell_scale, axis=0), spec.cell_scale, axis=1)
    return cell


def render_mosaic(tile: TileSample, input_mask, predictions: dict[str, np.ndarray],
                  spec: RenderSpec) -> np.ndarray:
    """Build the mosaic pixel grid as uint8 (H, W, 3).

    "input" rows show MSI zeroed under the union mask, "target" rows
    show raw MSI with real-cloud pixels black, prediction rows show the
    clamped (T*11, H, W) stacks from ``predictions``.
    """
    msi = tile.msi.data
    t_frames, bands, H, W = msi.shape
    md = input_mask.mask.data if hasattr(input_mask, "mask") else np.asarray(input_mask, dtype=np.float32)
    real = tile.real_cloud.data

    def row_frames(source: str) -> np.ndarray:
        if source == "input":
            return msi * (1.0 - md[:, None])
        if source == "target":
            return msi * (1.0 - real[:, None])
        pred = predictions[source]
        pred = pred.data if hasattr(pred, "data") else np.asarray(pred)
        return np.clip(pred.reshape(t_frames, bands, H, W), 0.0, 1.0)

    ch = H * spec.cell_scale
    cw = W * spec.cell_scale
    n_rows = len(spec.rows)
    canvas = np.full((n_rows * ch + (n_rows + 1) * GUTTER,
                      t_frames * cw + (t_frames + 1) * GUTTER, 3), 255, dtype=np.uint8)
    for ri, (_, source) in enumerate(spec.rows):
        frames = row_frames(source)
        y = GUTTER + ri * (ch + GUTTER)
        for ti in range(t_frames):
            x = GUTTER + ti * (cw + GUTTER)
            canvas[y:y + ch, x:x + cw] = _to_rgb_cell(frames[ti], spec)
    return canvas


def render_png(path, tile: TileSample, input_mask, predictions: dict[str, np.ndarray],
               spec: RenderSpec) -> np.ndarray:
    """Render the mosaic with day-of-year column headers and row labels
    into an 8-bit non-interlaced RGB PNG; returns the raw mosaic array."""
    mosaic = render_mosaic(tile, input_mask, predictions, spec)
    mh, mw, _ = mosaic.shape
    img = Image.new("RGB", (LABEL_W + mw, HEADER + mh), (255, 255, 255))
    img.paste(Image.fromarray(mosaic), (LABEL_W, HEADER))
    draw = ImageDraw.Draw(img)
    cw = tile.msi.shape[-1] * spec.cell_scale
    for ti, day in enumerate(tile.msi_days):
        x = LABEL_W + GUTTER + ti * (cw + GUTTER)
        draw.text((x + 2, 2), f"day {day}", fill=(0, 0, 0))
    ch = tile.msi.shape[-2] * spec.cell_scale
    for ri, (label, _) in enumerate(spec.rows):
        y = HEADER + GUTTER + ri * (ch + GUTTER)
        draw.text((2, y + 2), label[:13], fill=(0, 0, 0))
    img.save(path, format="PNG")
    return mosaic

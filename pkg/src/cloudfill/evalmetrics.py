"""Reconstruction quality metrics and the interpolation baseline.

Reports carry whole-image metrics over valid (non-real-cloud) pixels
plus masked-only variants restricted to the synthetic occlusions, since
both conventions are plausible readings of published tables. PSNR of a
perfect reconstruction is represented by an infinite sentinel that
aggregation excludes and counts.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Tensor
from .objective import mse_loss, sam_loss

PSNR_MSE_FLOOR = 1e-12

CSV_COLUMNS = ["model", "variant", "seed", "cloud_count", "split", "n_tiles",
               "mse", "sam", "psnr", "ssim",
               "mse_masked", "sam_masked", "psnr_masked", "ssim_masked"]

_METRIC_FIELDS = ["mse", "sam", "psnr", "ssim", "mse_masked", "sam_masked", "psnr_masked", "ssim_masked"]


@dataclass
class TileMetrics:
    """Per-tile metric record; ``usable`` is False when no pixel was valid."""

    mse: float
    sam: float
    psnr: float
    ssim: float
    mse_masked: float
    sam_masked: float
    psnr_masked: float
    ssim_masked: float
    valid_count: int
    masked_count: int
    usable: bool = True


@dataclass
class EvalReport:
    """Aggregate over tiles (and seeds) for one (model, cloud count, split)."""

    model: str = ""
    cloud_count: int = 0
    split: str = ""
    mse: float = math.nan
    sam: float = math.nan
    psnr: float = math.nan
    ssim: float = math.nan
    mse_masked: float = math.nan
    sam_masked: float = math.nan
    psnr_masked: float = math.nan
    ssim_masked: float = math.nan
    n_tiles: int = 0
    psnr_excluded: int = 0


def psnr(pred, target, valid, peak: float = 1.0) -> float:
    """10*log10(peak^2 / mse); +inf sentinel below the mse floor."""
    pd = pred.data if isinstance(pred, Tensor) else np.asarray(pred)
    mse = float(mse_loss(Tensor(np.clip(pd, 0.0, 1.0)), target, valid).data)
    return _psnr_from_mse(mse, peak)


def _psnr_from_mse(mse: float, peak: float = 1.0) -> float:
    if mse < PSNR_MSE_FLOOR:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    xs = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def _filter_valid(img: np.ndarray, kh: np.ndarray, kw: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation of a 2-d image."""
    win = np.lib.stride_tricks.sliding_window_view(img, kw.size, axis=1)
    tmp = np.tensordot(win, kw, axes=([2], [0]))
    win = np.lib.stride_tricks.sliding_window_view(tmp, kh.size, axis=0)
    return np.tensordot(win, kh, axes=([2], [0]))


def _ssim_map(x: np.ndarray, y: np.ndarray, peak: float = 1.0) -> np.ndarray:
    """SSIM map over all fully-contained 11x11 Gaussian windows.

    Images smaller than the window fall back to the largest window that
    fits, renormalized.
    """
    H, W = x.shape
    kh = _gaussian_window(min(11, H), 1.5)
    kw = _gaussian_window(min(11, W), 1.5)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    x = x.astype(np.float64)
    y = y.astype(np.float64)
    mx = _filter_valid(x, kh, kw)
    my = _filter_valid(y, kh, kw)
    mxx = _filter_valid(x * x, kh, kw)
    myy = _filter_valid(y * y, kh, kw)
    mxy = _filter_valid(x * y, kh, kw)
    vx = mxx - mx * mx
    vy = myy - my * my
    cxy = mxy - mx * my
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))


def ssim(pred, target, peak: float = 1.0) -> float:
    """Structural similarity with an 11x11 sigma-1.5 Gaussian window.

    2-d inputs give the plain SSIM mean; (C, H, W) inputs average the
    per-channel values.
    """
    pd = pred.data if isinstance(pred, Tensor) else np.asarray(pred)
    td = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pd.shape != td.shape:
        raise ValueError(f"ssim shape mismatch: {pd.shape} vs {td.shape}")
    if pd.ndim == 2:
        return float(_ssim_map(pd, td, peak).mean())
    if pd.ndim == 3:
        return float(np.mean([_ssim_map(pd[c], td[c], peak).mean() for c in range(pd.shape[0])]))
    raise ValueError(f"ssim expects 2-d or 3-d input, got shape {pd.shape}")


def _masked_window_mean(smap: np.ndarray, mask2d: np.ndarray) -> float:
    """Mean of an SSIM map over windows whose center pixel is masked."""
    mh, mw = smap.shape
    H, W = mask2d.shape
    oy, ox = (H - mh) // 2, (W - mw) // 2
    centered = mask2d[oy:oy + mh, ox:ox + mw]
    n = centered.sum()
    if n == 0:
        return math.nan
    return float((smap * centered).sum() / n)


def evaluate_tile(pred, target, synth_mask, valid) -> TileMetrics:
    """All metrics for one tile.

    ``pred`` is a (T*11, H, W) stack and ``target`` either the matching
    stack or a TileSample; ``synth_mask`` and ``valid`` are (T, H, W).
    Masked-only variants restrict the domain to synth_mask AND valid.
    Predictions are clamped to [0, 1] first.
    """
    pd = pred.data if isinstance(pred, Tensor) else np.asarray(pred, dtype=np.float32)
    if hasattr(target, "msi"):
        m = target.msi.data
        target = m.reshape(-1, *m.shape[-2:])
    td = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float32)
    sm = synth_mask.mask.data if hasattr(synth_mask, "mask") else np.asarray(synth_mask, dtype=np.float32)
    vd = valid.data if isinstance(valid, Tensor) else np.asarray(valid, dtype=np.float32)
    pd = np.clip(pd, 0.0, 1.0)
    t_frames = vd.shape[0]
    bands = pd.shape[0] // t_frames

    valid_count = int(vd.sum())
    masked_valid = sm * vd
    masked_count = int(masked_valid.sum())
    if valid_count == 0:
        return TileMetrics(*([math.nan] * 8), valid_count=0, masked_count=masked_count, usable=False)

    pt = Tensor(pd)
    mse = float(mse_loss(pt, td, vd, bands=bands).data)
    sam = float(sam_loss(pt, td, vd, bands=bands).data)
    psnr_v = _psnr_from_mse(mse)

    pr = pd.reshape(t_frames, bands, *pd.shape[-2:])
    tr = td.reshape(t_frames, bands, *td.shape[-2:])
    smaps = [[_ssim_map(pr[t, c], tr[t, c]) for c in range(bands)] for t in range(t_frames)]
    ssim_v = float(np.mean([m.mean() for row in smaps for m in row]))

    if masked_count > 0:
        mse_m = float(mse_loss(pt, td, masked_valid, bands=bands).data)
        sam_m = float(sam_loss(pt, td, masked_valid, bands=bands).data)
        psnr_m = _psnr_from_mse(mse_m)
        cell_means = []
        for t in range(t_frames):
            if masked_valid[t].sum() == 0:
                continue
            for c in range(bands):
                v = _masked_window_mean(smaps[t][c], masked_valid[t])
                if not math.isnan(v):
                    cell_means.append(v)
        ssim_m = float(np.mean(cell_means)) if cell_means else math.nan
    else:
        mse_m = sam_m = psnr_m = ssim_m = math.nan

    return TileMetrics(mse, sam, psnr_v, ssim_v, mse_m, sam_m, psnr_m, ssim_m,
                       valid_count=valid_count, masked_count=masked_count, usable=True)


def interp_baseline(sample, mask) -> Tensor:
    """Fill masked frames by per-pixel linear interpolation over day-of-year.

    Nearest valid frames bracket each gap; beyond the first/last valid
    frame the nearest valid value is held. Pixels masked in every frame
    are filled with 0. Returns a (T*11, H, W) stack.
    """
    msi = sample.msi.data                          # (T, B, H, W)
    md = mask.mask.data if hasattr(mask, "mask") else np.asarray(mask, dtype=np.float32)
    t_frames, bands, H, W = msi.shape
    days = np.asarray(sample.msi_days, dtype=np.float64)

    valid = md == 0                                # (T, H, W)
    out = msi.copy()

    # nearest valid frame index at or before t (and at or after t), per pixel
    prev_idx = np.full((t_frames, H, W), -1, dtype=np.int64)
    running = np.full((H, W), -1, dtype=np.int64)
    for t in range(t_frames):
        running = np.where(valid[t], t, running)
        prev_idx[t] = running
    next_idx = np.full((t_frames, H, W), t_frames, dtype=np.int64)
    running = np.full((H, W), t_frames, dtype=np.int64)
    for t in range(t_frames - 1, -1, -1):
        running = np.where(valid[t], t, running)
        next_idx[t] = running

    gy, gx = np.mgrid[0:H, 0:W]
    days_pad = np.concatenate([days, [days[-1]]])  # index t_frames safe
    for t in range(t_frames):
        gap = ~valid[t]
        if not gap.any():
            continue
        p = prev_idx[t]
        n = next_idx[t]
        has_p = p >= 0
        has_n = n < t_frames
        p_safe = np.clip(p, 0, t_frames - 1)
        n_safe = np.clip(n, 0, t_frames - 1)
        vals_p = msi[p_safe, :, gy, gx].transpose(2, 0, 1)   # (B, H, W)
        vals_n = msi[n_safe, :, gy, gx].transpose(2, 0, 1)
        dp = days_pad[p_safe]
        dn = days_pad[n_safe]
        span = np.where(dn > dp, dn - dp, 1.0)
        w_next = np.where(has_p & has_n, (days[t] - dp) / span, 0.0)
        both = (has_p & has_n).astype(np.float64)
        only_p = (has_p & ~has_n).astype(np.float64)
        only_n = (~has_p & has_n).astype(np.float64)
        filled = (both * ((1.0 - w_next) * vals_p + w_next * vals_n)
                  + only_p * vals_p + only_n * vals_n)
        out[t] = np.where(gap[None], filled.astype(np.float32), out[t])
    return Tensor(out.reshape(t_frames * bands, H, W))


def aggregate(records) -> EvalReport:
    """Unweighted mean of usable records' metrics.

    Works on TileMetrics or EvalReports. Non-finite psnr values are
    excluded from the psnr means and counted in ``psnr_excluded``.
    """
    items = [r for r in records if getattr(r, "usable", True)]
    if not items:
        raise ValueError("aggregate needs at least one usable record")
    report = EvalReport(n_tiles=len(items))
    excluded = 0
    for name in _METRIC_FIELDS:
        vals = [getattr(r, name) for r in items]
        if name.startswith("psnr"):
            finite = [v for v in vals if math.isfinite(v)]
            if name == "psnr":
                excluded += len(vals) - len(finite)
            vals = finite
        else:
            vals = [v for v in vals if not math.isnan(v)]
        setattr(report, name, float(np.mean(vals)) if vals else math.nan)
    report.psnr_excluded = excluded + sum(getattr(r, "psnr_excluded", 0) for r in items)
    return report


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        if math.isnan(v):
            return "nan"
        return f"{v:.6f}"
    return str(v)


def write_metrics_csv(path, rows: list[dict]) -> None:
    """Write metric rows using the documented column schema."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in CSV_COLUMNS})


def report_row(report: EvalReport, variant: str, seed) -> dict:
    row = {"model": report.model, "variant": variant, "seed": seed,
           "cloud_count": report.cloud_count, "split": report.split, "n_tiles": report.n_tiles}
    for name in _METRIC_FIELDS:
        row[name] = getattr(report, name)
    return row

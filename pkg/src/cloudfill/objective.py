"""Training losses: validity-masked MSE, spectral angle, multi-scale mix.

Predictions and targets are stacks of per-frame band planes,
(..., T*11, H, W); the validity mask (..., T, H, W) marks pixels whose
ground truth is observed (1) and broadcasts across the 11 bands of its
frame. The composite loss evaluates both terms at several bilinear
scales and sums them without normalizing by the number of scales.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor, ShapeError
from .dataio import MSI_BANDS

_COS_GUARD = 1e-7


@dataclass
class LossConfig:
    scales: list[float] = field(default_factory=lambda: [1.0, 0.5, 0.25])
    w_mse: float = 0.5
    w_sam: float = 0.5
    sam_eps: float = 1e-8

    def __post_init__(self):
        if len(self.scales) == 0:
            raise ValueError("LossConfig.scales must be non-empty")
        if any(not (0.0 < s <= 1.0) for s in self.scales):
            raise ValueError(f"scales must lie in (0, 1], got {self.scales}")
        if len(set(self.scales)) != len(self.scales):
            raise ValueError(f"scales must be distinct, got {self.scales}")

    def to_json(self) -> dict:
        return {"scales": list(self.scales), "w_mse": self.w_mse, "w_sam": self.w_sam, "sam_eps": self.sam_eps}

    @classmethod
    def from_json(cls, d: dict) -> "LossConfig":
        return cls(**d)


def _split_frames(pred, target, valid, bands: int):
    """Coerce to (pred, target) of shape (..., T, bands, H, W) and valid
    (..., T, 1, H, W); returns numpy target/valid, Tensor pred."""
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float32)
    val = valid.data if isinstance(valid, Tensor) else np.asarray(valid, dtype=np.float32)
    if pred.shape != tgt.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {tgt.shape}")
    c = pred.shape[-3]
    t = val.shape[-3]
    if val.shape[:-3] != pred.shape[:-3] or val.shape[-2:] != pred.shape[-2:]:
        raise ShapeError(f"valid shape {val.shape} incompatible with pred {pred.shape}")
    if c != t * bands:
        raise ShapeError(f"channel count {c} is not {t} frames x {bands} bands")
    lead = pred.shape[:-3]
    hw = pred.shape[-2:]
    pred_f = T.reshape(pred, lead + (t, bands) + hw)
    tgt_f = tgt.reshape(lead + (t, bands) + hw)
    val_f = val.reshape(lead + (t, 1) + hw)
    return pred_f, tgt_f, val_f


def mse_loss(pred, target, valid, bands: int = MSI_BANDS) -> Tensor:
    """Mean squared error over valid pixel-bands; 0 when nothing is valid."""
    pred_f, tgt_f, val_f = _split_frames(pred, target, valid, bands)
    n_valid = float(val_f.sum())
    if n_valid == 0.0:
        return Tensor(np.zeros((), dtype=np.float32))
    diff = pred_f - tgt_f
    weighted = diff * diff * val_f
    return T.tsum(weighted) * (1.0 / (n_valid * bands))


def sam_loss(pred, target, valid, eps: float = 1e-8, bands: int = MSI_BANDS) -> Tensor:
    """Mean spectral angle (radians) between per-pixel band vectors.

    Angles come from arccos of the normalized inner product, with the
    norm product floored at ``eps`` so zero spectra stay finite. The
    cosine is value-clamped to [-1, 1] (identical spectra give exactly
    zero angle) while the derivative is evaluated no closer to +-1 than
    1e-7 to keep gradients bounded near parallel spectra. Accumulations
    run in float64 so near-parallel angles aren't drowned by rounding.
    """
    pred_f, tgt_f, val_f = _split_frames(pred, target, valid, bands)
    val_pix = val_f.data if isinstance(val_f, Tensor) else val_f
    val_pix = np.squeeze(val_pix, axis=-3)
    n_valid = float(val_pix.sum())
    if n_valid == 0.0:
        return Tensor(np.zeros((), dtype=np.float32))

    p64 = pred_f.data.astype(np.float64)
    t64 = tgt_f.astype(np.float64)
    dot = (p64 * t64).sum(axis=-3)
    pn = np.sqrt((p64 * p64).sum(axis=-3))
    tn = np.sqrt((t64 * t64).sum(axis=-3))
    denom = np.maximum(pn * tn, eps)
    cos = np.clip(dot / denom, -1.0, 1.0)
    angles = np.arccos(cos)
    w64 = val_pix.astype(np.float64)
    out_data = np.asarray((angles * w64).sum() / n_valid, dtype=pred_f.dtype)

    def _bw(g):
        if not pred_f.requires_grad:
            return
        gscalar = float(g)
        cos_g = np.clip(cos, -1.0 + _COS_GUARD, 1.0 - _COS_GUARD)
        dangle = -1.0 / np.sqrt(1.0 - cos_g * cos_g)
        scale = np.where(denom > eps, 1.0, 0.0) * w64 * (gscalar / n_valid) * dangle
        inv = 1.0 / denom
        # d cos / d p = t/denom - cos * p / (pn^2)
        pn2 = np.maximum(pn * pn, eps * eps)
        grad = scale[..., None, :, :] * (t64 * inv[..., None, :, :]
                                         - p64 * (cos / pn2)[..., None, :, :])
        pred_f._accumulate(grad.astype(pred_f.dtype, copy=False))

    out = Tensor(out_data, requires_grad=pred_f.requires_grad)
    if out.requires_grad:
        out._parents = (pred_f,)
        out._backward = _bw
    return out


def multi_scale_loss(pred, target, valid, cfg: LossConfig, bands: int = MSI_BANDS,
                     return_terms: bool = False):
    """Eq-style composite: sum over scales of w_mse*MSE + w_sam*SAM.

    Each scale bilinearly resizes prediction, target and validity mask;
    the resized mask is re-binarized at 0.5. Scale terms are summed,
    not averaged.
    """
    if len(cfg.scales) == 0:
        raise ValueError("multi_scale_loss needs at least one scale")
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float32)
    val = valid.data if isinstance(valid, Tensor) else np.asarray(valid, dtype=np.float32)
    total = None
    mse_total = 0.0
    sam_total = 0.0
    for s in cfg.scales:
        pred_s = T.bilinear_resize(pred, s)
        tgt_s = T.bilinear_resize(Tensor(tgt), s).data
        val_s = (T.bilinear_resize(Tensor(val), s).data >= 0.5).astype(np.float32)
        mse_s = mse_loss(pred_s, tgt_s, val_s, bands=bands)
        sam_s = sam_loss(pred_s, tgt_s, val_s, eps=cfg.sam_eps, bands=bands)
        term = mse_s * cfg.w_mse + sam_s * cfg.w_sam
        total = term if total is None else total + term
        mse_total += float(mse_s.data)
        sam_total += float(sam_s.data)
    if return_terms:
        return total, mse_total, sam_total
    return total

"""Finite-difference verification suite for every differentiable op.

Each entry builds a scalar probe around one operation and compares its
analytic gradient against central differences. The final entry runs the
full tiny SMTS model end to end through the multi-scale loss, checking
every parameter tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, grad_check
from .cloudsim import CloudGenConfig, generate_mask
from .dataio import MSI_BANDS, MSI_DAYS, MSI_FRAMES, SAR_BANDS, SAR_FRAMES, SAR_DAYS, TileSample
from .objective import LossConfig, mse_loss, multi_scale_loss, sam_loss
from .vit import Variant, ViTConfig, init_params, model_forward, pack_input

TOLERANCE = 1e-3

TINY_CONFIG = ViTConfig(variant=Variant.SMTS_VIT, patch=5, depth=2, heads=2, dim=16,
                        mlp_ratio=2.0, image_size=10)


@dataclass
class CheckResult:
    name: str
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE


def _corrupted(t: Tensor, factor: float = 1.02) -> Tensor:
    """Identity forward with a deliberately wrong backward (test hook)."""
    out = Tensor(t.data.copy(), requires_grad=t.requires_grad)
    if out.requires_grad:
        out._parents = (t,)

        def _bw(g):
            t._accumulate(g * factor)

        out._backward = _bw
    return out


def _probe(op, x_data: np.ndarray, name: str, corrupt: str | None, wseed: int) -> float:
    """Gradient-check d(sum(w * op(x)))/dx with fixed random weights."""
    out_shape = op(Tensor(x_data.astype(np.float64))).shape
    w = np.random.default_rng(wseed).standard_normal(out_shape)

    def f(p):
        out = op(p)
        if corrupt == name:
            out = _corrupted(out)
        return T.tsum(out * Tensor(w))

    return grad_check(f, Tensor(x_data, requires_grad=True))


def _scalar_probe(op, x_data: np.ndarray, name: str, corrupt: str | None) -> float:
    def f(p):
        out = op(p)
        if corrupt == name:
            out = _corrupted(out)
        return out

    return grad_check(f, Tensor(x_data, requires_grad=True))


def run_op_checks(corrupt: str | None = None, n_random: int = 3) -> list[CheckResult]:
    """Gradient-check every differentiable op on randomized small shapes."""
    results: list[CheckResult] = []

    def record(name: str, errs: list[float]) -> None:
        results.append(CheckResult(name, max(errs)))

    errs = []
    for seed in range(n_random):
        rng = np.random.default_rng(100 + seed)
        a = rng.standard_normal((4, 5))
        b = rng.standard_normal((5, 3))
        errs.append(_probe(lambda p: T.matmul(p, Tensor(b)), a, "matmul", corrupt, seed))
        errs.append(_probe(lambda p: T.matmul(Tensor(a), p), b, "matmul", corrupt, seed))
    record("matmul", errs)

    errs = []
    for seed in range(n_random):
        rng = np.random.default_rng(200 + seed)
        x = rng.standard_normal((2, 3, 7, 7))
        w = rng.standard_normal((4, 3, 3, 3)) * 0.4
        bias = rng.standard_normal(4) * 0.1
        stride = 2 if seed % 2 else 1
        errs.append(_probe(lambda p: T.conv2d(p, Tensor(w), Tensor(bias), stride),
                           x, "conv2d", corrupt, seed))
        errs.append(_probe(lambda p: T.conv2d(Tensor(x), p, Tensor(bias), stride),
                           w, "conv2d", corrupt, seed))
        errs.append(_probe(lambda p: T.conv2d(Tensor(x), Tensor(w), p, stride),
                           bias, "conv2d", corrupt, seed))
    record("conv2d", errs)

    errs = []
    for seed in range(n_random):
        rng = np.random.default_rng(300 + seed)
        errs.append(_probe(T.softmax_lastdim, rng.standard_normal((3, 7)),
                           "softmax_lastdim", corrupt, seed))
    record("softmax_lastdim", errs)

    errs = []
    for seed in range(n_random):
        rng = np.random.default_rng(400 + seed)
        x = rng.standard_normal((4, 6))
        gain = 1.0 + 0.3 * rng.standard_normal(6)
        shift = 0.2 * rng.standard_normal(6)
        errs.append(_probe(lambda p: T.layer_norm(p, Tensor(gain), Tensor(shift), 1e-5),
                           x, "layer_norm", corrupt, seed))
        errs.append(_probe(lambda p: T.layer_norm(Tensor(x), p, Tensor(shift), 1e-5),
                           gain, "layer_norm", corrupt, seed))
        errs.append(_probe(lambda p: T.layer_norm(Tensor(x), Tensor(gain), p, 1e-5),
                           shift, "layer_norm", corrupt, seed))
    record("layer_norm", errs)

    errs = []
    for seed in range(n_random):
        rng = np.random.default_rng(500 + seed)
        errs.append(_probe(T.gelu, rng.standard_normal((5, 4)) * 2.0, "gelu", corrupt, seed))
    record("gelu", errs)

    errs = []
    for seed in range(n_random):
        rng = np.random.default_rng(600 + seed)
        scale = (0.5, 0.4, 0.75)[seed % 3]
        errs.append(_probe(lambda p: T.bilinear_resize(p, scale),
                           rng.standard_normal((2, 2, 6, 6)), "bilinear_resize", corrupt, seed))
    record("bilinear_resize", errs)

    errs = []
    for seed in range(n_random):
        rng = np.random.default_rng(700 + seed)
        t_frames = 2
        pred = rng.uniform(0.1, 0.9, size=(t_frames * MSI_BANDS, 6, 6))
        target = np.clip(pred + rng.uniform(-0.3, 0.3, size=pred.shape), 0.05, 1.0)
        valid = (rng.uniform(size=(t_frames, 6, 6)) > 0.25).astype(np.float64)
        errs.append(_scalar_probe(lambda p: mse_loss(p, target, valid), pred, "mse_loss", corrupt))
    record("mse_loss", errs)

    errs = []
    for seed in range(n_random):
        rng = np.random.default_rng(800 + seed)
        t_frames = 2
        # sign-mixed spectra keep cosines away from the arccos boundary, and
        # the large norm keeps finite-difference truncation negligible
        pred = rng.standard_normal((t_frames * MSI_BANDS, 6, 6)) * 2.0
        target = rng.standard_normal(pred.shape) * 2.0
        valid = np.ones((t_frames, 6, 6))
        errs.append(_scalar_probe(lambda p: sam_loss(p, target, valid), pred, "sam_loss", corrupt))
    record("sam_loss", errs)

    errs = []
    for seed in range(n_random):
        rng = np.random.default_rng(900 + seed)
        pred = rng.standard_normal((MSI_BANDS, 8, 8)) * 2.0
        target = rng.standard_normal(pred.shape) * 2.0
        valid = np.ones((1, 8, 8))
        cfg = LossConfig()
        errs.append(_scalar_probe(lambda p: multi_scale_loss(p, target, valid, cfg),
                                  pred, "multi_scale_loss", corrupt))
    record("multi_scale_loss", errs)

    return results


def _tiny_fixture(seed: int = 5):
    rng = np.random.default_rng(seed)
    H = W = TINY_CONFIG.image_size
    tile = TileSample(
        scene_id="gradcheck", row=0, col=0,
        msi=Tensor(rng.uniform(0.05, 0.95, size=(MSI_FRAMES, MSI_BANDS, H, W)).astype(np.float32)),
        sar=Tensor(rng.uniform(0.05, 0.95, size=(SAR_FRAMES, SAR_BANDS, H, W)).astype(np.float32)),
        real_cloud=Tensor(np.zeros((MSI_FRAMES, H, W), dtype=np.float32)),
        msi_days=list(MSI_DAYS), sar_days=list(SAR_DAYS),
    )
    mask = generate_mask(CloudGenConfig(n_clouds=3, cloud_size=0.25, seed=11), MSI_FRAMES, H, W)
    return tile, mask


def run_model_check(corrupt: str | None = None, max_elements: int = 96,
                    seed: int = 42) -> list[CheckResult]:
    """End-to-end check: tiny SMTS-ViT loss gradient w.r.t. every parameter.

    Large tensors are spot-checked on a seeded subset of coordinates to
    keep the suite inside its time budget; the analytic gradient itself
    is always computed in full.
    """
    tile, mask = _tiny_fixture()
    cfg = TINY_CONFIG
    params = init_params(cfg, seed=seed, dtype=np.float64)
    x = pack_input(tile, mask, cfg)
    x64 = Tensor(x.data.astype(np.float64))
    target = tile.msi.data.reshape(-1, *x.data.shape[-2:]).astype(np.float64)
    valid = (1.0 - tile.real_cloud.data).astype(np.float64)
    loss_cfg = LossConfig()

    results = []
    for name in params:
        def f(p, name=name):
            trial = dict(params)
            trial[name] = p
            pred = model_forward(x64, trial, cfg)
            if corrupt == "model":
                pred = _corrupted(pred)
            return multi_scale_loss(pred, target, valid, loss_cfg)

        err = grad_check(f, params[name], max_elements=max_elements, seed=seed)
        results.append(CheckResult(f"model[{name}]", err))
    return results


def run_suite(corrupt: str | None = None, max_model_elements: int = 96) -> list[CheckResult]:
    """Per-op checks plus the full tiny-model check."""
    results = run_op_checks(corrupt=corrupt)
    model = run_model_check(corrupt=corrupt, max_elements=max_model_elements)
    worst = max(model, key=lambda r: r.max_rel_err)
    results.append(CheckResult("model(tiny smts-vit, all params)", worst.max_rel_err))
    return results

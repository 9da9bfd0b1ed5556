"""The three reconstruction model variants.

All variants share one backbone: the input time series is flattened
along time into the channel axis, a strided convolution embeds each
spatial patch into one token, a stack of pre-norm multi-head
self-attention blocks mixes the tokens, and a linear decoder maps each
token back to its pixel patch across all output channels.

S-ViT sees a single MSI frame, MTS-ViT the full 6-frame MSI stack, and
SMTS-ViT additionally the 5-frame SAR stack. Cloud masks are appended
as extra input planes (one per MSI frame) so zeroed reflectance is
distinguishable from genuinely dark ground.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor, ShapeError
from .cloudsim import CloudMask, apply_mask
from .dataio import MSI_FRAMES, MSI_BANDS, SAR_FRAMES, SAR_BANDS, TileSample


class Variant(enum.Enum):
    S_VIT = "s-vit"
    MTS_VIT = "mts-vit"
    SMTS_VIT = "smts-vit"

    @property
    def display(self) -> str:
        return {"s-vit": "S-ViT", "mts-vit": "MTS-ViT", "smts-vit": "SMTS-ViT"}[self.value]


@dataclass
class ViTConfig:
    variant: Variant = Variant.SMTS_VIT
    patch: int = 5
    depth: int = 6
    heads: int = 8
    dim: int = 64
    mlp_ratio: float = 4.0
    include_mask_channels: bool = True
    image_size: int = 60

    def __post_init__(self):
        if isinstance(self.variant, str):
            self.variant = Variant(self.variant)
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.image_size % self.patch != 0:
            raise ValueError(f"image_size {self.image_size} not divisible by patch {self.patch}")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def n_tokens(self) -> int:
        return self.grid * self.grid

    @property
    def out_channels(self) -> int:
        return MSI_BANDS if self.variant is Variant.S_VIT else MSI_FRAMES * MSI_BANDS

    @property
    def out_frames(self) -> int:
        return 1 if self.variant is Variant.S_VIT else MSI_FRAMES

    def to_json(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ViTConfig":
        return cls(**d)


def config_hash(cfg: ViTConfig) -> str:
    payload = json.dumps(cfg.to_json(), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def input_channels(cfg: ViTConfig) -> int:
    """Number of stacked input planes after channel-time flattening."""
    if cfg.variant is Variant.S_VIT:
        data = MSI_BANDS
        mask_planes = 1
    elif cfg.variant is Variant.MTS_VIT:
        data = MSI_FRAMES * MSI_BANDS
        mask_planes = MSI_FRAMES
    else:
        data = MSI_FRAMES * MSI_BANDS + SAR_FRAMES * SAR_BANDS
        mask_planes = MSI_FRAMES
    return data + (mask_planes if cfg.include_mask_channels else 0)


def pack_input(sample: TileSample, mask: CloudMask, cfg: ViTConfig, frame: int = 0) -> Tensor:
    """Assemble one model input as stacked (C', H, W) planes.

    Order: MSI frames in temporal order (11 bands each, pre-multiplied
    by 1-mask), then SAR frames (VV, VH), then the mask planes. S-ViT
    packs only the designated ``frame``.
    """
    msi = sample.msi.data
    md = mask.mask.data
    t, b, H, W = msi.shape
    if md.shape != (t, H, W):
        raise ShapeError(f"pack_input mask shape {md.shape} does not match MSI {msi.shape}")
    masked = apply_mask(sample.msi, mask).data
    planes: list[np.ndarray] = []
    if cfg.variant is Variant.S_VIT:
        planes.append(masked[frame])
        if cfg.include_mask_channels:
            planes.append(md[frame:frame + 1])
    else:
        planes.append(masked.reshape(t * b, H, W))
        if cfg.variant is Variant.SMTS_VIT:
            sar = sample.sar.data
            planes.append(sar.reshape(sar.shape[0] * sar.shape[1], H, W))
        if cfg.include_mask_channels:
            planes.append(md)
    x = np.concatenate(planes, axis=0).astype(np.float32)
    if x.shape[0] != input_channels(cfg):
        raise ShapeError(f"packed {x.shape[0]} planes, expected {input_channels(cfg)}")
    return Tensor(x)


def pack_batch(samples, masks, cfg: ViTConfig, frames=None) -> Tensor:
    """Stack per-sample packed inputs into a (B, C', H, W) tensor."""
    if frames is None:
        frames = [0] * len(samples)
    stacked = np.stack([pack_input(s, m, cfg, frame=f).data for s, m, f in zip(samples, masks, frames)])
    return Tensor(stacked)


# -- parameters ----------------------------------------------------------------


def init_params(cfg: ViTConfig, seed: int = 42, dtype=np.float32) -> dict[str, Tensor]:
    """Fresh parameter set: uniform +-sqrt(1/fan_in) weights, zero biases,
    zero positional table."""
    rng = np.random.default_rng(np.random.SeedSequence([seed]))

    def uniform(shape, fan_in):
        bound = (1.0 / fan_in) ** 0.5
        return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(shape):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    c_in = input_channels(cfg)
    p, d = cfg.patch, cfg.dim
    hidden = int(cfg.mlp_ratio * d)
    params: dict[str, Tensor] = {
        "patch_proj.weight": uniform((d, c_in, p, p), c_in * p * p),
        "patch_proj.bias": zeros((d,)),
        "pos_table": zeros((cfg.n_tokens, d)),
    }
    for i in range(cfg.depth):
        pre = f"blocks.{i}."
        params[pre + "ln1.gain"] = ones((d,))
        params[pre + "ln1.shift"] = zeros((d,))
        params[pre + "qkv.weight"] = uniform((d, 3 * d), d)
        params[pre + "qkv.bias"] = zeros((3 * d,))
        params[pre + "out.weight"] = uniform((d, d), d)
        params[pre + "out.bias"] = zeros((d,))
        params[pre + "ln2.gain"] = ones((d,))
        params[pre + "ln2.shift"] = zeros((d,))
        params[pre + "mlp.fc1.weight"] = uniform((d, hidden), d)
        params[pre + "mlp.fc1.bias"] = zeros((hidden,))
        params[pre + "mlp.fc2.weight"] = uniform((hidden, d), hidden)
        params[pre + "mlp.fc2.bias"] = zeros((d,))
    params["decoder.weight"] = uniform((d, p * p * cfg.out_channels), d)
    params["decoder.bias"] = zeros((p * p * cfg.out_channels,))
    return params


def param_count(cfg: ViTConfig) -> int:
    return sum(t.size for t in init_params(cfg, seed=0).values())


# -- forward pieces --------------------------------------------------------------


def cpp_embed(x: Tensor, params: dict[str, Tensor], cfg: ViTConfig) -> Tensor:
    """Convolutional patch projection: (B, C', H, W) -> (B, N, dim) tokens.

    Kernel size and stride both equal the patch size, so each token sees
    exactly one spatial patch; the learned positional table is added.
    """
    single = x.ndim == 3
    if single:
        x = T.reshape(x, (1,) + x.shape)
    H, W = x.shape[-2:]
    if H % cfg.patch or W % cfg.patch:
        raise ShapeError(f"input extent {H}x{W} not divisible by patch {cfg.patch}")
    feat = T.conv2d(x, params["patch_proj.weight"], params["patch_proj.bias"], stride=cfg.patch)
    b, d, gh, gw = feat.shape
    tokens = T.reshape(T.transpose(feat, (0, 2, 3, 1)), (b, gh * gw, d))
    tokens = tokens + params["pos_table"]
    return T.reshape(tokens, (gh * gw, d)) if single else tokens


def _linear(x: Tensor, params, prefix: str) -> Tensor:
    return T.matmul(x, params[prefix + ".weight"]) + params[prefix + ".bias"]


def _mhsa(x: Tensor, params, prefix: str, cfg: ViTConfig) -> tuple[Tensor, Tensor]:
    """Multi-head self-attention; returns (output, attention weights)."""
    b, n, d = x.shape
    h = cfg.heads
    dh = d // h
    qkv = _linear(x, params, prefix + "qkv")                       # (B, N, 3d)
    qkv = T.transpose(T.reshape(qkv, (b, n, 3, h, dh)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]                               # (B, h, N, dh)
    scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / dh ** 0.5)
    attn = T.softmax_lastdim(scores)                               # (B, h, N, N)
    ctx = T.matmul(attn, v)                                        # (B, h, N, dh)
    merged = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, n, d))
    return _linear(merged, params, prefix + "out"), attn


def encoder_block(tokens: Tensor, params: dict[str, Tensor], index: int, cfg: ViTConfig) -> Tensor:
    """Pre-norm residual block: MHSA then a GELU MLP."""
    single = tokens.ndim == 2
    if single:
        tokens = T.reshape(tokens, (1,) + tokens.shape)
    pre = f"blocks.{index}."
    normed = T.layer_norm(tokens, params[pre + "ln1.gain"], params[pre + "ln1.shift"])
    attn_out, _ = _mhsa(normed, params, pre, cfg)
    t1 = tokens + attn_out
    normed2 = T.layer_norm(t1, params[pre + "ln2.gain"], params[pre + "ln2.shift"])
    hidden = T.gelu(_linear(normed2, params, pre + "mlp.fc1"))
    t2 = t1 + _linear(hidden, params, pre + "mlp.fc2")
    return T.reshape(t2, t2.shape[1:]) if single else t2


def attention_matrix(tokens: Tensor, params: dict[str, Tensor], index: int, cfg: ViTConfig) -> np.ndarray:
    """Attention weights (B, heads, N, N) a block computes on ``tokens``."""
    single = tokens.ndim == 2
    if single:
        tokens = T.reshape(tokens, (1,) + tokens.shape)
    pre = f"blocks.{index}."
    normed = T.layer_norm(tokens, params[pre + "ln1.gain"], params[pre + "ln1.shift"])
    _, attn = _mhsa(normed, params, pre, cfg)
    return attn.data


def decode(tokens: Tensor, params: dict[str, Tensor], cfg: ViTConfig) -> Tensor:
    """Linear patch decoder: each token becomes one patch of every
    output channel; no output activation."""
    single = tokens.ndim == 2
    if single:
        tokens = T.reshape(tokens, (1,) + tokens.shape)
    b = tokens.shape[0]
    g, p, c = cfg.grid, cfg.patch, cfg.out_channels
    flat = _linear(tokens, params, "decoder")                      # (B, N, p*p*C)
    cells = T.reshape(flat, (b, g, g, c, p, p))
    image = T.reshape(T.transpose(cells, (0, 3, 1, 4, 2, 5)), (b, c, g * p, g * p))
    return T.reshape(image, image.shape[1:]) if single else image


def model_forward(x: Tensor, params: dict[str, Tensor], cfg: ViTConfig) -> Tensor:
    """Full backbone on packed inputs: (B, C', H, W) -> (B, C_out, H, W)."""
    tokens = cpp_embed(x, params, cfg)
    for i in range(cfg.depth):
        tokens = encoder_block(tokens, params, i, cfg)
    return decode(tokens, params, cfg)


def forward(sample: TileSample, mask: CloudMask, params: dict[str, Tensor], cfg: ViTConfig, frame: int = 0) -> Tensor:
    """Reconstruct one tile: pack, embed, encode, decode."""
    x = pack_input(sample, mask, cfg, frame=frame)
    out = model_forward(T.reshape(x, (1,) + x.shape), params, cfg)
    return T.reshape(out, out.shape[1:])


# -- checkpoints -----------------------------------------------------------------


def save_checkpoint(directory, params: dict[str, Tensor], cfg: ViTConfig) -> None:
    T.save_tensor_dir(directory, params, extra={
        "config": cfg.to_json(),
        "config_hash": config_hash(cfg),
    })


def load_checkpoint(directory, expected: ViTConfig | None = None) -> tuple[dict[str, Tensor], ViTConfig]:
    tensors, index = T.load_tensor_dir(Path(directory))
    cfg = ViTConfig.from_json(index["config"])
    stored_hash = index.get("config_hash")
    if stored_hash != config_hash(cfg):
        raise ValueError(f"checkpoint {directory}: index config hash does not match its config")
    if expected is not None and config_hash(expected) != stored_hash:
        raise ValueError(
            f"checkpoint {directory} was trained with a different configuration "
            f"({stored_hash[:12]} != {config_hash(expected)[:12]})")
    params = {name: Tensor(t.data, requires_grad=True) for name, t in tensors.items()}
    return params, cfg

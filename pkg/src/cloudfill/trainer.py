"""Deterministic training and evaluation loops.

Training draws a fresh synthetic cloud mask per sample per epoch
(seeded from run seed, epoch and sample id), so occlusion acts as data
augmentation while staying bit-reproducible. Evaluation freezes one
mask per (tile, cloud count) independent of any training seed, so
variants are compared under identical occlusions.
"""

from __future__ import annotations

import math
import time
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .tensor import Tensor, AdamState, adam_step
from .dataio import MSI_FRAMES, TileSample
from .cloudsim import CloudGenConfig, CloudMask, generate_mask, real_cloud_mask, union
from .vit import Variant, ViTConfig, init_params, model_forward, pack_batch, pack_input, save_checkpoint
from .objective import LossConfig, multi_scale_loss
from .evalmetrics import EvalReport, aggregate, evaluate_tile, interp_baseline, report_row, write_metrics_csv


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class RunConfig:
    vit: ViTConfig = field(default_factory=ViTConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    cloud: CloudGenConfig = field(default_factory=CloudGenConfig)
    epochs: int = 100
    lr: float = 1e-4
    batch_size: int = 8
    seed: int = 42
    eval_cloud_counts: list[int] = field(default_factory=lambda: [20, 30, 40])
    n_seeds: int = 3
    out_dir: Path | None = None

    def to_json(self) -> dict:
        return {
            "vit": self.vit.to_json(),
            "loss": self.loss.to_json(),
            "cloud": {
                "n_clouds": self.cloud.n_clouds,
                "cloud_size": self.cloud.cloud_size,
                "blur_sigma": self.cloud.blur_sigma,
                "threshold_quantile": self.cloud.threshold_quantile,
                "seed": self.cloud.seed,
            },
            "train": {
                "epochs": self.epochs,
                "lr": self.lr,
                "batch_size": self.batch_size,
                "seed": self.seed,
                "eval_cloud_counts": list(self.eval_cloud_counts),
                "n_seeds": self.n_seeds,
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> "RunConfig":
        train = doc.get("train", {})
        return cls(
            vit=ViTConfig.from_json(doc.get("vit", {})),
            loss=LossConfig.from_json(doc.get("loss", {})),
            cloud=CloudGenConfig(**doc.get("cloud", {})),
            epochs=int(train.get("epochs", 100)),
            lr=float(train.get("lr", 1e-4)),
            batch_size=int(train.get("batch_size", 8)),
            seed=int(train.get("seed", 42)),
            eval_cloud_counts=[int(c) for c in train.get("eval_cloud_counts", [20, 30, 40])],
            n_seeds=int(train.get("n_seeds", 3)),
        )


@dataclass
class StepRecord:
    step: int
    epoch: int
    loss: float
    mse: float
    sam: float
    wall: float


@dataclass
class TrainLog:
    records: list[StepRecord] = field(default_factory=list)
    epoch_val: list[tuple[int, float]] = field(default_factory=list)

    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    def to_csv(self, path) -> None:
        """Serialized without wall times so identical runs yield identical files."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["step,epoch,loss,mse,sam"]
        lines += [f"{r.step},{r.epoch},{r.loss:.8e},{r.mse:.8e},{r.sam:.8e}" for r in self.records]
        path.write_text("\n".join(lines) + "\n")


def _mask_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _tile_eval_seed(tile: TileSample, cloud_count: int) -> int:
    return zlib.crc32(f"eval:{tile.key}:{cloud_count}".encode()) & 0x7FFFFFFF


def _training_samples(tiles: list[TileSample], cfg: ViTConfig) -> list[tuple[int, int]]:
    """(tile index, frame) pairs; S-ViT treats each MSI frame as a sample."""
    if cfg.variant is Variant.S_VIT:
        return [(i, f) for i in range(len(tiles)) for f in range(MSI_FRAMES)]
    return [(i, 0) for i in range(len(tiles))]


def _target_valid(tile: TileSample, cfg: ViTConfig, frame: int) -> tuple[np.ndarray, np.ndarray]:
    msi = tile.msi.data
    t, b, H, W = msi.shape
    valid = 1.0 - tile.real_cloud.data
    if cfg.variant is Variant.S_VIT:
        return msi[frame], valid[frame:frame + 1]
    return msi.reshape(t * b, H, W), valid


def _draw_training_mask(run_seed: int, epoch: int, sample_id: int, cloud: CloudGenConfig,
                        t: int, H: int, W: int) -> CloudMask:
    cfg = replace(cloud, seed=_mask_seed(run_seed, epoch, sample_id))
    return generate_mask(cfg, t, H, W)


def train(cfg: RunConfig, tiles: list[TileSample], val_tiles: list[TileSample] | None = None):
    """Train one model; returns (params, TrainLog).

    Mini-batches are re-shuffled per epoch and every sample gets a fresh
    synthetic mask each epoch, all seeded from cfg.seed. A checkpoint is
    written at the end of every epoch when cfg.out_dir is set.
    """
    if not tiles:
        raise ValueError("train: empty dataset")
    params = init_params(cfg.vit, seed=cfg.seed)
    state = AdamState(lr=cfg.lr)
    log = TrainLog()
    samples = _training_samples(tiles, cfg.vit)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7, epoch])).permutation(len(samples))
        for start in range(0, len(order), cfg.batch_size):
            batch_ids = order[start:start + cfg.batch_size]
            step += 1
            t0 = time.perf_counter()
            loss_t, mse_v, sam_v = _training_step(cfg, tiles, samples, batch_ids, epoch, params, state)
            wall = time.perf_counter() - t0
            loss_v = float(loss_t)
            if not np.isfinite(loss_v):
                raise TrainingDiverged(f"non-finite loss {loss_v} at step {step} (epoch {epoch})")
            log.records.append(StepRecord(step, epoch, loss_v, mse_v, sam_v, wall))
        if val_tiles:
            log.epoch_val.append((epoch, _validation_loss(cfg, val_tiles, params)))
        if cfg.out_dir is not None:
            save_checkpoint(Path(cfg.out_dir) / "checkpoints" / f"epoch_{epoch:03d}", params, cfg.vit)
    return params, log


def _training_step(cfg, tiles, samples, batch_ids, epoch, params, state) -> tuple[float, float, float]:
    batch_samples, batch_masks, batch_frames = [], [], []
    targets, valids = [], []
    for sid in batch_ids:
        tile_idx, frame = samples[int(sid)]
        tile = tiles[tile_idx]
        t, _, H, W = tile.msi.shape
        synth = _draw_training_mask(cfg.seed, epoch, int(sid), cfg.cloud, t, H, W)
        input_mask = union(synth, real_cloud_mask(tile.real_cloud))
        batch_samples.append(tile)
        batch_masks.append(input_mask)
        batch_frames.append(frame)
        target, valid = _target_valid(tile, cfg.vit, frame)
        targets.append(target)
        valids.append(valid)
    x = pack_batch(batch_samples, batch_masks, cfg.vit, frames=batch_frames)
    pred = model_forward(x, params, cfg.vit)
    loss, mse_v, sam_v = multi_scale_loss(pred, np.stack(targets), np.stack(valids), cfg.loss, return_terms=True)
    loss.backward()
    grads = {name: p.grad for name, p in params.items() if p.grad is not None}
    adam_step(params, grads, state)
    for p in params.values():
        p.grad = None
    return float(loss.data), mse_v, sam_v


def _validation_loss(cfg: RunConfig, val_tiles, params) -> float:
    total, count = 0.0, 0
    for i, tile in enumerate(val_tiles):
        t, _, H, W = tile.msi.shape
        synth = generate_mask(replace(cfg.cloud, seed=_tile_eval_seed(tile, cfg.cloud.n_clouds)), t, H, W)
        input_mask = union(synth, real_cloud_mask(tile.real_cloud))
        frames = range(MSI_FRAMES) if cfg.vit.variant is Variant.S_VIT else [0]
        for f in frames:
            x = pack_batch([tile], [input_mask], cfg.vit, frames=[f])
            pred = model_forward(x, params, cfg.vit)
            target, valid = _target_valid(tile, cfg.vit, f)
            loss = multi_scale_loss(pred, target[None], valid[None], cfg.loss)
            total += float(loss.data)
            count += 1
    return total / max(count, 1)


def _predict_tile(tile: TileSample, input_mask: CloudMask, params, cfg: ViTConfig) -> np.ndarray:
    """Full (T*11, H, W) reconstruction; S-ViT runs once per frame."""
    if cfg.variant is Variant.S_VIT:
        preds = []
        for f in range(MSI_FRAMES):
            x = pack_input(tile, input_mask, cfg, frame=f)
            out = model_forward(Tensor(x.data[None]), params, cfg)
            preds.append(out.data[0])
        return np.concatenate(preds, axis=0)
    x = pack_input(tile, input_mask, cfg)
    return model_forward(Tensor(x.data[None]), params, cfg).data[0]


def evaluate(params, cfg: RunConfig, tiles: list[TileSample], cloud_count: int,
             split: str = "val") -> EvalReport:
    """Frozen-mask evaluation of one model over a tile set."""
    records = []
    for tile in tiles:
        t, _, H, W = tile.msi.shape
        synth = generate_mask(
            replace(cfg.cloud, n_clouds=cloud_count, seed=_tile_eval_seed(tile, cloud_count)), t, H, W)
        input_mask = union(synth, real_cloud_mask(tile.real_cloud))
        pred = np.clip(_predict_tile(tile, input_mask, params, cfg.vit), 0.0, 1.0)
        target = tile.msi.data.reshape(-1, H, W)
        valid = 1.0 - tile.real_cloud.data
        records.append(evaluate_tile(pred, target, synth, valid))
    report = aggregate(records)
    report.model = cfg.vit.variant.display
    report.cloud_count = cloud_count
    report.split = split
    return report


def evaluate_baseline(cfg: RunConfig, tiles: list[TileSample], cloud_count: int,
                      split: str = "val") -> EvalReport:
    """Temporal linear-interpolation baseline under the same frozen masks."""
    records = []
    for tile in tiles:
        t, _, H, W = tile.msi.shape
        synth = generate_mask(
            replace(cfg.cloud, n_clouds=cloud_count, seed=_tile_eval_seed(tile, cloud_count)), t, H, W)
        input_mask = union(synth, real_cloud_mask(tile.real_cloud))
        pred = np.clip(interp_baseline(tile, input_mask).data, 0.0, 1.0)
        target = tile.msi.data.reshape(-1, H, W)
        valid = 1.0 - tile.real_cloud.data
        records.append(evaluate_tile(pred, target, synth, valid))
    report = aggregate(records)
    report.model = "Interp"
    report.cloud_count = cloud_count
    report.split = split
    return report


def run_matrix(base: RunConfig, variants: list[Variant], seeds: list[int],
               datasets: dict[str, list[TileSample]], csv_path=None,
               include_baseline: bool = False, progress=None):
    """Train (variant x seed), evaluate on every non-train split and cloud
    count, and emit Table-1-style rows plus per-variant (AVG) rows."""
    eval_splits = {k: v for k, v in datasets.items() if k != "train"}
    if "train" not in datasets or not eval_splits:
        raise ValueError("run_matrix needs a 'train' split and at least one evaluation split")
    rows: list[dict] = []
    for variant in variants:
        detail: dict[str, list[dict]] = {split: [] for split in eval_splits}
        for seed in seeds:
            run_cfg = replace(base, seed=seed,
                              vit=replace(base.vit, variant=variant),
                              out_dir=None if base.out_dir is None
                              else Path(base.out_dir) / f"{variant.value}-seed{seed}")
            if progress:
                progress(f"training {variant.display} seed {seed}")
            params, _ = train(run_cfg, datasets["train"])
            for split, tiles in eval_splits.items():
                for cc in base.eval_cloud_counts:
                    rep = evaluate(params, run_cfg, tiles, cc, split)
                    row = report_row(rep, variant.value, seed)
                    rows.append(row)
                    detail[split].append(row)
        for split, split_rows in detail.items():
            rows.append(_avg_row(split_rows, variant, split))
    if include_baseline:
        for split, tiles in eval_splits.items():
            for cc in base.eval_cloud_counts:
                rep = evaluate_baseline(base, tiles, cc, split)
                rows.append(report_row(rep, "baseline", "-"))
    if csv_path is not None:
        write_metrics_csv(csv_path, rows)
    return rows


def _avg_row(split_rows: list[dict], variant: Variant, split: str) -> dict:
    avg = {"model": f"{variant.display} (AVG)", "variant": variant.value,
           "seed": "-", "cloud_count": "-", "split": split,
           "n_tiles": split_rows[0]["n_tiles"]}
    for name in ["mse", "sam", "psnr", "ssim", "mse_masked", "sam_masked", "psnr_masked", "ssim_masked"]:
        vals = [r[name] for r in split_rows if math.isfinite(r[name])]
        avg[name] = float(np.mean(vals)) if vals else math.nan
    return avg

"""Command-line entry point.

Subcommands: synth-data, make-clouds, train, eval, render, gradcheck.
Every command validates its inputs before writing anything and is
deterministic given identical inputs and seeds.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataio
from .tensor import save_tensor
from .cloudsim import CloudGenConfig, generate_mask, real_cloud_mask, union
from .vit import load_checkpoint
from .trainer import RunConfig, evaluate, train, _predict_tile
from .evalmetrics import report_row, write_metrics_csv
from .render import RenderSpec, render_png
from .gradcheck import TOLERANCE, run_suite


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 2


def cmd_synth_data(args) -> int:
    out = Path(args.out)
    if args.n_scenes < 0:
        return _fail(f"--n-scenes must be >= 0, got {args.n_scenes}")
    scenes = [dataio.synth_scene(args.seed + i, args.height, args.width) for i in range(args.n_scenes)]
    manifest = dataio.write_dataset(out, scenes, split_seed=args.seed)
    print(f"wrote {args.n_scenes} scene(s) and {manifest}")
    return 0


def cmd_make_clouds(args) -> int:
    try:
        cfg = CloudGenConfig(n_clouds=args.n_clouds, cloud_size=args.cloud_size,
                             blur_sigma=args.blur_sigma, threshold_quantile=args.threshold_quantile,
                             seed=args.cloud_seed)
    except ValueError as exc:
        return _fail(str(exc))
    mask = generate_mask(cfg, args.frames, args.height, args.width)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_tensor(out, mask.mask)
    cov = float(mask.mask.data.mean())
    print(f"wrote {out} (coverage {cov:.1%})")
    return 0


def _load_run_config(path: Path) -> tuple[RunConfig, Path, Path]:
    with open(path) as fh:
        doc = json.load(fh)
    if "manifest" not in doc:
        raise ValueError(f"config {path} missing required key 'manifest'")
    manifest_path = (path.parent / doc["manifest"]).resolve() if not Path(doc["manifest"]).is_absolute() \
        else Path(doc["manifest"])
    out_dir = Path(doc.get("out_dir", path.parent / "run"))
    if not out_dir.is_absolute():
        out_dir = (path.parent / out_dir).resolve()
    cfg = RunConfig.from_json(doc)
    return cfg, manifest_path, out_dir


def cmd_train(args) -> int:
    config_path = Path(args.config)
    if not config_path.exists():
        return _fail(f"config file not found: {config_path}")
    try:
        cfg, manifest_path, out_dir = _load_run_config(config_path)
    except (ValueError, KeyError, TypeError) as exc:
        return _fail(f"invalid config {config_path}: {exc}")
    if not manifest_path.exists():
        return _fail(f"manifest not found: {manifest_path}")
    manifest = dataio.load_manifest(manifest_path)
    train_tiles, val_tiles = dataio.load_split(manifest)
    cfg = replace(cfg, out_dir=out_dir)
    t0 = time.perf_counter()
    params, log = train(cfg, train_tiles, val_tiles=val_tiles)
    log.to_csv(out_dir / "trainlog.csv")
    with open(out_dir / "runconfig.json", "w") as fh:
        json.dump(cfg.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"trained {cfg.vit.variant.display} for {cfg.epochs} epoch(s), "
          f"{len(log.records)} steps in {time.perf_counter() - t0:.1f}s; "
          f"final loss {log.records[-1].loss:.6f}")
    print(f"checkpoints under {out_dir / 'checkpoints'}")
    return 0


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        return _fail(f"manifest not found: {manifest_path}")
    try:
        params, vit_cfg = load_checkpoint(ckpt)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(f"cannot load checkpoint {ckpt}: {exc}")
    try:
        counts = [int(c) for c in args.cloud_counts.split(",") if c]
    except ValueError:
        return _fail(f"--cloud-counts must be comma-separated ints, got {args.cloud_counts!r}")
    manifest = dataio.load_manifest(manifest_path)
    _, val_tiles = dataio.load_split(manifest)
    cfg = RunConfig(vit=vit_cfg, eval_cloud_counts=counts)
    rows = []
    for cc in counts:
        report = evaluate(params, cfg, val_tiles, cc, split=args.split)
        rows.append(report_row(report, vit_cfg.variant.value, args.seed))
    write_metrics_csv(args.out, rows)
    print(f"wrote {args.out} ({len(rows)} row(s) over {len(val_tiles)} tile(s))")
    return 0


def cmd_render(args) -> int:
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        return _fail(f"manifest not found: {manifest_path}")
    manifest = dataio.load_manifest(manifest_path)
    tiles = dataio.load_tiles(manifest)
    if not (0 <= args.tile_index < len(tiles)):
        return _fail(f"tile index {args.tile_index} out of range (dataset has {len(tiles)} tiles)")
    tile = tiles[args.tile_index]

    checkpoints = []
    for path in args.checkpoint or []:
        try:
            checkpoints.append((Path(path), *load_checkpoint(Path(path))))
        except (OSError, ValueError, KeyError) as exc:
            return _fail(f"cannot load checkpoint {path}: {exc}")
    try:
        bands = tuple(args.bands.split(","))
        spec = RenderSpec(rows=[("Inputs", "input"), ("Targets", "target")],
                          rgb_bands=bands, gain=args.gain, cell_scale=args.cell_scale)
    except ValueError as exc:
        return _fail(str(exc))

    t, _, H, W = tile.msi.shape
    synth = generate_mask(CloudGenConfig(n_clouds=args.n_clouds, seed=args.mask_seed), t, H, W)
    input_mask = union(synth, real_cloud_mask(tile.real_cloud))
    predictions = {}
    for path, params, vit_cfg in checkpoints:
        label = vit_cfg.variant.display
        key = label if label not in predictions else f"{label}:{path.name}"
        predictions[key] = np.clip(_predict_tile(tile, input_mask, params, vit_cfg), 0.0, 1.0)
        spec.rows.append((key, key))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    render_png(out, tile, input_mask, predictions, spec)
    print(f"wrote {out} ({len(spec.rows)} rows x {t} frames)")
    return 0


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    results = run_suite(corrupt=args.corrupt)
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failed = failed or not r.passed
        print(f"{r.name:45s} max rel err {r.max_rel_err:.3e}  {status}")
    print(f"suite finished in {time.perf_counter() - t0:.1f}s (tolerance {TOLERANCE:g})")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cloudfill",
                                     description="Cloud-occluded MSI reconstruction toolkit")
    parser.add_argument("--seed", type=int, default=42, help="global seed (default 42)")
    parser.add_argument("--config", default=None, help="run config file (used by train)")
    parser.add_argument("--out", default=None, help="output path (command-specific)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate procedural scenes + manifest")
    p.add_argument("--n-scenes", type=int, default=4)
    p.add_argument("--height", type=int, default=120)
    p.add_argument("--width", type=int, default=120)
    p.set_defaults(func=cmd_synth_data, needs_out=True)

    p = sub.add_parser("make-clouds", help="write a synthetic cloud mask tensor")
    p.add_argument("--n-clouds", type=int, default=10)
    p.add_argument("--cloud-size", type=float, default=0.3)
    p.add_argument("--cloud-seed", type=int, default=0)
    p.add_argument("--blur-sigma", type=float, default=0.35)
    p.add_argument("--threshold-quantile", type=float, default=0.45)
    p.add_argument("--frames", type=int, default=dataio.MSI_FRAMES)
    p.add_argument("--height", type=int, default=60)
    p.add_argument("--width", type=int, default=60)
    p.set_defaults(func=cmd_make_clouds, needs_out=True)

    p = sub.add_parser("train", help="train a model from a run config file")
    p.set_defaults(func=cmd_train, needs_config=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the validation split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--cloud-counts", default="20,30,40")
    p.add_argument("--split", default="val")
    p.set_defaults(func=cmd_eval, needs_out=True)

    p = sub.add_parser("render", help="render an input/target/prediction mosaic PNG")
    p.add_argument("--checkpoint", action="append", default=[])
    p.add_argument("--manifest", required=True)
    p.add_argument("--tile-index", type=int, default=0)
    p.add_argument("--mask-seed", type=int, default=0)
    p.add_argument("--n-clouds", type=int, default=20)
    p.add_argument("--gain", type=float, default=2.5)
    p.add_argument("--bands", default="B4,B3,B2")
    p.add_argument("--cell-scale", type=int, default=1)
    p.set_defaults(func=cmd_render, needs_out=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "needs_out", False) and args.out is None:
        parser.error(f"{args.command}: --out is required (pass it before the subcommand)")
    if getattr(args, "needs_config", False) and args.config is None:
        parser.error(f"{args.command}: --config is required (pass it before the subcommand)")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

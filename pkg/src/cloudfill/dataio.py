"""Scene ingestion, tiling, splitting, revisit aggregation and synthesis.

A scene is one spatial area observed as 6 MSI frames (11 bands each)
and 5 SAR frames (VV, VH) over a 60-day window, normalized to [0, 1].
Scenes are tiled into non-overlapping 60x60 samples, split 80/20, and
can be generated procedurally for desk-scale experiments.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import Tensor, ShapeError, load_tensor, save_tensor

MSI_FRAMES = 6
MSI_BANDS = 11
SAR_FRAMES = 5
SAR_BANDS = 2
TILE = 60

BAND_NAMES = ["B1", "B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8A", "B11", "B12"]

# calendar stamps: acquisitions start May 1 (day 121) over a 60-day window
MSI_DAYS = [121, 131, 141, 151, 161, 171]
SAR_DAYS = [121, 133, 145, 157, 169]

MSI_REFLECTANCE_DIVISOR = 10000.0
SAR_DB_MIN = -30.0
SAR_DB_MAX = 0.0


@dataclass
class SceneSeries:
    """One spatial tile's MSI/SAR time series plus real-cloud validity."""

    msi: Tensor          # (T_MSI, 11, H, W) in [0, 1]
    sar: Tensor          # (T_SAR, 2, H, W) in [0, 1]
    msi_days: list[int]
    sar_days: list[int]
    real_cloud: Tensor   # (T_MSI, H, W) binary, 1 = cloud
    scene_id: str

    def __post_init__(self):
        if self.msi.shape[0] != len(self.msi_days) or self.sar.shape[0] != len(self.sar_days):
            raise ShapeError("frame count / day stamp mismatch")
        if any(b >= a for a, b in zip(self.msi_days[1:], self.msi_days)):
            raise ValueError(f"msi_days must be strictly increasing, got {self.msi_days}")
        if self.msi_days[-1] - self.msi_days[0] > 60:
            raise ValueError(f"msi_days span {self.msi_days[-1] - self.msi_days[0]} days, limit is 60")

    @property
    def height(self) -> int:
        return self.msi.shape[2]

    @property
    def width(self) -> int:
        return self.msi.shape[3]


@dataclass
class TileSample:
    """A 60x60 crop of a scene, referenced back to its source offsets."""

    scene_id: str
    row: int
    col: int
    msi: Tensor          # (T_MSI, 11, tile, tile)
    sar: Tensor          # (T_SAR, 2, tile, tile)
    real_cloud: Tensor   # (T_MSI, tile, tile)
    msi_days: list[int]
    sar_days: list[int]

    @property
    def key(self) -> str:
        return f"{self.scene_id}:{self.row}:{self.col}"


@dataclass
class DatasetManifest:
    """On-disk dataset description: scene files, split rule, normalization."""

    scenes: list[dict]
    split_seed: int = 42
    split_ratio: float = 0.8
    msi_divisor: float = MSI_REFLECTANCE_DIVISOR
    sar_db_min: float = SAR_DB_MIN
    sar_db_max: float = SAR_DB_MAX
    root: Path = field(default_factory=Path)

    def to_json(self) -> dict:
        return {
            "scenes": self.scenes,
            "normalization": {
                "msi_divisor": self.msi_divisor,
                "sar_db_min": self.sar_db_min,
                "sar_db_max": self.sar_db_max,
            },
            "split": {"seed": self.split_seed, "ratio": self.split_ratio},
        }


def normalize_scene(raw_msi, raw_sar) -> tuple[Tensor, Tensor]:
    """Map raw reflectance (x1e4) and SAR dB into [0, 1].

    MSI divides by 10000 and clamps; SAR maps the [-30, 0] dB range
    linearly onto [0, 1] and clamps.
    """
    raw_msi = np.asarray(raw_msi, dtype=np.float32)
    raw_sar = np.asarray(raw_sar, dtype=np.float32)
    if not np.all(np.isfinite(raw_msi)) or not np.all(np.isfinite(raw_sar)):
        raise ValueError("normalize_scene: non-finite input values")
    msi = np.clip(raw_msi / MSI_REFLECTANCE_DIVISOR, 0.0, 1.0)
    sar = np.clip((raw_sar - SAR_DB_MIN) / (SAR_DB_MAX - SAR_DB_MIN), 0.0, 1.0)
    return Tensor(msi), Tensor(sar)


def tile_scene(scene: SceneSeries, tile: int = TILE) -> list[TileSample]:
    """Cut a scene into a non-overlapping row-major grid of tile crops.

    Remainder rows/columns that don't fill a whole tile are discarded.
    """
    H, W = scene.height, scene.width
    if H < tile or W < tile:
        raise ShapeError(f"scene {scene.scene_id} is {H}x{W}, smaller than one {tile}x{tile} tile")
    samples = []
    for r in range(0, H - tile + 1, tile):
        for c in range(0, W - tile + 1, tile):
            samples.append(TileSample(
                scene_id=scene.scene_id,
                row=r,
                col=c,
                msi=Tensor(scene.msi.data[:, :, r:r + tile, c:c + tile].copy()),
                sar=Tensor(scene.sar.data[:, :, r:r + tile, c:c + tile].copy()),
                real_cloud=Tensor(scene.real_cloud.data[:, r:r + tile, c:c + tile].copy()),
                msi_days=list(scene.msi_days),
                sar_days=list(scene.sar_days),
            ))
    return samples


def split_tiles(tiles: list, ratio: float = 0.8, seed: int = 42) -> tuple[list, list]:
    """Deterministic seeded shuffle, then prefix split into (train, val)."""
    if len(tiles) < 2:
        raise ValueError(f"split_tiles needs at least 2 tiles, got {len(tiles)}")
    order = np.random.default_rng(np.random.SeedSequence([seed])).permutation(len(tiles))
    n_train = int(round(len(tiles) * ratio))
    n_train = min(max(n_train, 1), len(tiles) - 1)
    shuffled = [tiles[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:]


def aggregate_revisits(frame_a, mask_a, frame_b, mask_b) -> tuple[Tensor, Tensor]:
    """Merge two consecutive revisit frames into one.

    Masks are binary with 1 = cloud/missing. Pixels valid in both
    frames average; pixels valid in one take that value; pixels valid
    in neither become 0 with an output mask of 1.
    """
    a = frame_a.data if isinstance(frame_a, Tensor) else np.asarray(frame_a, dtype=np.float32)
    b = frame_b.data if isinstance(frame_b, Tensor) else np.asarray(frame_b, dtype=np.float32)
    ma = mask_a.data if isinstance(mask_a, Tensor) else np.asarray(mask_a, dtype=np.float32)
    mb = mask_b.data if isinstance(mask_b, Tensor) else np.asarray(mask_b, dtype=np.float32)
    if a.shape != b.shape or ma.shape != mb.shape:
        raise ShapeError(f"aggregate_revisits shape mismatch: {a.shape}/{b.shape}, masks {ma.shape}/{mb.shape}")
    va = (ma == 0)
    vb = (mb == 0)
    both = va & vb
    out = np.where(both, 0.5 * (a + b), np.where(va, a, np.where(vb, b, 0.0))).astype(np.float32)
    out_mask = (~va & ~vb).astype(np.float32)
    return Tensor(out), Tensor(out_mask)


# -- procedural synthetic scenes ----------------------------------------------

# Crop archetypes: per-band bare-ground reflectance plus a growth vector
# scaled by a logistic green-up curve. Onset/rate differ per archetype so
# phenology is distinctly nonlinear in day-of-year.
#            B1    B2    B3    B4    B5    B6    B7    B8    B8A   B11   B12
_ARCHETYPE_BASE = np.array([
    [0.16, 0.18, 0.22, 0.26, 0.30, 0.32, 0.34, 0.36, 0.37, 0.42, 0.38],  # bare soil, late crop
    [0.10, 0.12, 0.15, 0.14, 0.20, 0.26, 0.30, 0.33, 0.34, 0.30, 0.24],  # early cereal
    [0.06, 0.08, 0.12, 0.09, 0.16, 0.24, 0.28, 0.30, 0.31, 0.22, 0.16],  # grassland
    [0.12, 0.15, 0.18, 0.21, 0.24, 0.27, 0.28, 0.30, 0.30, 0.36, 0.32],  # row crop on dark soil
    [0.04, 0.05, 0.07, 0.05, 0.09, 0.12, 0.13, 0.15, 0.15, 0.10, 0.07],  # water / wetland
], dtype=np.float64)
_ARCHETYPE_GROWTH = np.array([
    [-0.02, -0.04, -0.05, -0.10, -0.04, 0.10, 0.18, 0.24, 0.24, -0.14, -0.16],
    [-0.03, -0.05, -0.04, -0.08, 0.02, 0.20, 0.28, 0.34, 0.34, -0.12, -0.12],
    [-0.01, -0.02, 0.02, -0.04, 0.04, 0.12, 0.16, 0.22, 0.22, -0.06, -0.06],
    [-0.03, -0.06, -0.06, -0.12, -0.02, 0.16, 0.24, 0.30, 0.30, -0.16, -0.16],
    [0.00, 0.01, 0.02, 0.01, 0.02, 0.03, 0.03, 0.05, 0.05, 0.02, 0.01],
], dtype=np.float64)
_ARCHETYPE_ONSET = np.array([158.0, 138.0, 128.0, 148.0, 146.0])
_ARCHETYPE_RATE = np.array([0.22, 0.18, 0.12, 0.25, 0.05])
# SAR backscatter: base level plus biomass coupling on the same curve
_ARCHETYPE_SAR_BASE = np.array([[0.42, 0.30], [0.38, 0.26], [0.36, 0.25], [0.40, 0.28], [0.12, 0.08]])
_ARCHETYPE_SAR_GROWTH = np.array([[0.18, 0.26], [0.22, 0.30], [0.14, 0.20], [0.20, 0.28], [0.02, 0.03]])

N_ARCHETYPES = len(_ARCHETYPE_BASE)


def _logistic(day, onset, rate):
    return 1.0 / (1.0 + np.exp(-rate * (np.asarray(day, dtype=np.float64) - onset)))


def synth_scene(seed: int, H: int = 120, W: int = 120) -> SceneSeries:
    """Generate a procedural field-mosaic scene.

    A seeded Voronoi partition assigns each region one of the crop
    archetypes; each archetype evolves along its own logistic phenology
    curve across the 6 MSI frames and couples SAR backscatter to the
    same curve. Low-amplitude region and pixel noise is added and all
    values are clipped to [0, 1]. real_cloud is all zeros.
    """
    if H < TILE or W < TILE:
        raise ValueError(f"synth_scene needs H, W >= {TILE}, got {H}x{W}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, H, W]))

    n_regions = max(4, (H * W) // 900)
    seeds_y = rng.uniform(0, H, size=n_regions)
    seeds_x = rng.uniform(0, W, size=n_regions)
    region_arch = rng.integers(0, N_ARCHETYPES, size=n_regions)

    yy, xx = np.mgrid[0:H, 0:W]
    d2 = (yy[..., None] - seeds_y) ** 2 + (xx[..., None] - seeds_x) ** 2
    region = np.argmin(d2, axis=-1)                      # (H, W)
    arch = region_arch[region]                           # (H, W)

    # per-region brightness jitter and phenology onset jitter
    region_gain = 1.0 + rng.normal(0.0, 0.04, size=n_regions)
    region_onset_shift = rng.normal(0.0, 3.0, size=n_regions)
    gain = region_gain[region]
    onset = _ARCHETYPE_ONSET[arch] + region_onset_shift[region]
    rate = _ARCHETYPE_RATE[arch]

    base = _ARCHETYPE_BASE[arch]                         # (H, W, 11)
    growth = _ARCHETYPE_GROWTH[arch]

    msi = np.empty((MSI_FRAMES, MSI_BANDS, H, W), dtype=np.float64)
    for ti, day in enumerate(MSI_DAYS):
        g = _logistic(day, onset, rate)                  # (H, W)
        frame = (base + growth * g[..., None]) * gain[..., None]
        msi[ti] = frame.transpose(2, 0, 1)
    msi += rng.normal(0.0, 0.008, size=msi.shape)

    sar_base = _ARCHETYPE_SAR_BASE[arch]                 # (H, W, 2)
    sar_growth = _ARCHETYPE_SAR_GROWTH[arch]
    sar = np.empty((SAR_FRAMES, SAR_BANDS, H, W), dtype=np.float64)
    for ti, day in enumerate(SAR_DAYS):
        g = _logistic(day, onset, rate)
        frame = (sar_base + sar_growth * g[..., None]) * gain[..., None]
        sar[ti] = frame.transpose(2, 0, 1)
    sar += rng.normal(0.0, 0.015, size=sar.shape)        # speckle-ish, heavier than MSI noise

    return SceneSeries(
        msi=Tensor(np.clip(msi, 0.0, 1.0).astype(np.float32)),
        sar=Tensor(np.clip(sar, 0.0, 1.0).astype(np.float32)),
        msi_days=list(MSI_DAYS),
        sar_days=list(SAR_DAYS),
        real_cloud=Tensor(np.zeros((MSI_FRAMES, H, W), dtype=np.float32)),
        scene_id=f"synth-{seed:06d}",
    )


# -- manifest I/O --------------------------------------------------------------


def write_dataset(out_dir, scenes: list[SceneSeries], split_seed: int = 42, split_ratio: float = 0.8) -> Path:
    """Write scenes as TSR1 rasters plus a manifest.json; returns its path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for scene in scenes:
        msi_path = f"{scene.scene_id}_msi.tsr"
        sar_path = f"{scene.scene_id}_sar.tsr"
        cloud_path = f"{scene.scene_id}_cloud.tsr"
        save_tensor(out_dir / msi_path, scene.msi)
        save_tensor(out_dir / sar_path, scene.sar)
        save_tensor(out_dir / cloud_path, scene.real_cloud)
        entries.append({
            "id": scene.scene_id,
            "msi_path": msi_path,
            "sar_path": sar_path,
            "cloud_path": cloud_path,
            "msi_days": list(scene.msi_days),
            "sar_days": list(scene.sar_days),
            "bands": list(BAND_NAMES),
        })
    manifest = DatasetManifest(scenes=entries, split_seed=split_seed, split_ratio=split_ratio)
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    norm = doc.get("normalization", {})
    split = doc.get("split", {})
    return DatasetManifest(
        scenes=doc["scenes"],
        split_seed=int(split.get("seed", 42)),
        split_ratio=float(split.get("ratio", 0.8)),
        msi_divisor=float(norm.get("msi_divisor", MSI_REFLECTANCE_DIVISOR)),
        sar_db_min=float(norm.get("sar_db_min", SAR_DB_MIN)),
        sar_db_max=float(norm.get("sar_db_max", SAR_DB_MAX)),
        root=path.parent,
    )


def load_scene(manifest: DatasetManifest, entry: dict) -> SceneSeries:
    root = manifest.root
    return SceneSeries(
        msi=load_tensor(root / entry["msi_path"]),
        sar=load_tensor(root / entry["sar_path"]),
        msi_days=[int(d) for d in entry["msi_days"]],
        sar_days=[int(d) for d in entry["sar_days"]],
        real_cloud=load_tensor(root / entry["cloud_path"]),
        scene_id=entry["id"],
    )


def load_tiles(manifest: DatasetManifest, tile: int = TILE) -> list[TileSample]:
    """Load and tile every scene in manifest order."""
    tiles: list[TileSample] = []
    for entry in manifest.scenes:
        tiles.extend(tile_scene(load_scene(manifest, entry), tile=tile))
    return tiles


def load_split(manifest: DatasetManifest, tile: int = TILE) -> tuple[list[TileSample], list[TileSample]]:
    """Tiles split per the manifest's seeded 80/20 rule."""
    return split_tiles(load_tiles(manifest, tile=tile), ratio=manifest.split_ratio, seed=manifest.split_seed)

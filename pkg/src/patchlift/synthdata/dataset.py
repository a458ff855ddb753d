"""Paired-sample dataset generation, manifests, and on-disk layout.

Layout::

    root/{train|test}/<id>/reference.png  (8-bit RGB)
                           mask.png       (8-bit gray, values {0, 255})
                           edge.png       (8-bit gray)
                           asset.png      (8-bit RGB)
                           meta.json
    root/manifest.json

Every sample derives its own seed from (global seed, sample index), so any
parallel generation schedule would produce byte-identical output; this
implementation keeps the simple sequential loop. The edge map is derived from
the already-quantized reference so that re-running the derivation on stored
PNGs reproduces edge.png bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from hashlib import blake2b
from pathlib import Path

import numpy as np
from PIL import Image

from patchlift.config import config_hash
from patchlift.errors import ConfigError, DataError, DegenerateViewError, InvariantError
from patchlift.synthdata.edges import derive_edge_map, dilate_mask
from patchlift.synthdata.patterns import AssetImage, PatternBank
from patchlift.synthdata.render import apply_occluders, render_pair
from patchlift.synthdata.scene import (
    CameraRanges,
    CameraSpec,
    LightSpec,
    OccluderSpec,
    SurfaceSpec,
    sample_camera,
)

SPLITS = ("train", "test")

# Scenes whose footprint falls below this fraction of the frame are re-rolled;
# they carry almost no trainable signal.
MIN_FOOTPRINT_FRACTION = 0.02
MAX_SCENE_RETRIES = 20


@dataclass
class PairedSample:
    """One training/eval record, fully in memory."""

    reference: np.ndarray  # (S, S, 3) float32 in [0, 1]
    mask: np.ndarray       # (S, S) uint8 in {0, 1}
    edge: np.ndarray       # (S, S) float32 in [0, 1]
    asset: AssetImage
    meta: dict


@dataclass
class DatasetManifest:
    root: str
    ids: list[str]
    split: dict[str, str]          # id -> "train" | "test"
    config_hash: str
    seed: int
    image_size: int = 0

    def ids_for(self, split: str) -> list[str]:
        return [i for i in self.ids if self.split.get(i) == split]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @staticmethod
    def from_json(text: str, root: str | None = None) -> "DatasetManifest":
        data = json.loads(text)
        if root is not None:
            data["root"] = root
        return DatasetManifest(**data)


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

def _id_hash(sample_id: str) -> int:
    return int.from_bytes(blake2b(sample_id.encode(), digest_size=8).digest(), "little")


def split_benchmark(manifest: DatasetManifest, test_fraction: float) -> DatasetManifest:
    """Deterministic id-hash split; |test| = round(test_fraction * N).

    Pure function of (ids, fraction): applying it twice, or to a reordered
    manifest, yields the same labels. Uses Python round-half-to-even.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n_test = round(test_fraction * len(manifest.ids))
    ranked = sorted(manifest.ids, key=lambda i: (_id_hash(i), i))
    test_ids = set(ranked[:n_test])
    split = {i: ("test" if i in test_ids else "train") for i in manifest.ids}
    return DatasetManifest(
        root=manifest.root,
        ids=list(manifest.ids),
        split=split,
        config_hash=manifest.config_hash,
        seed=manifest.seed,
        image_size=manifest.image_size,
    )


# ---------------------------------------------------------------------------
# Scene sampling
# ---------------------------------------------------------------------------

def _sample_seed(global_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([global_seed, index]).generate_state(1)[0])


def _sample_lights(rng: np.random.Generator, cfg: dict) -> LightSpec:
    ambient = float(rng.uniform(cfg["data.ambient_min"], cfg["data.ambient_max"]))
    n_dir = int(rng.integers(0, cfg["data.dir_light_max"] + 1))
    directional = []
    for _ in range(n_dir):
        lateral = rng.uniform(-1.0, 1.0, size=2)
        toward = rng.uniform(0.4, 1.0)
        d = -np.array([lateral[0], lateral[1], toward])
        d = d / np.linalg.norm(d)
        directional.append((d, float(rng.uniform(0.1, cfg["data.dir_intensity_max"]))))
    return LightSpec(ambient=ambient, directional=directional)


def _sample_surface(rng: np.random.Generator, cfg: dict) -> SurfaceSpec:
    kinds = [k.strip() for k in str(cfg["data.surface_kinds"]).split(",") if k.strip()]
    if not kinds:
        raise ConfigError("data.surface_kinds is empty")
    kind = kinds[int(rng.integers(len(kinds)))]
    extent = (float(cfg["data.extent"]), float(cfg["data.extent"]))
    if kind == "plane":
        return SurfaceSpec(kind="plane", curvature=0.0, extent=extent)
    curvature = float(rng.uniform(cfg["data.curvature_min"], cfg["data.curvature_max"]))
    return SurfaceSpec(kind=kind, curvature=curvature, extent=extent)


def _sample_occluders(
    rng: np.random.Generator, cfg: dict, mask: np.ndarray
) -> list[OccluderSpec]:
    p0, p1 = float(cfg["data.occluder_p0"]), float(cfg["data.occluder_p1"])
    roll = rng.random()
    count = 0 if roll < p0 else (1 if roll < p0 + p1 else 2)
    if count == 0:
        return []
    ys, xs = np.nonzero(mask)
    footprint = len(xs)
    occluders = []
    for _ in range(count):
        frac = rng.uniform(0.05, cfg["data.occluder_coverage_max"] / count)
        area = max(4.0, frac * footprint)
        aspect = rng.uniform(0.5, 2.0)
        w = math.sqrt(area * aspect)
        h = area / w
        cx = float(rng.uniform(xs.min(), xs.max() + 1))
        cy = float(rng.uniform(ys.min(), ys.max() + 1))
        color = tuple(float(c) for c in rng.uniform(0.05, 0.95, size=3))
        if rng.random() < 0.5:
            occluders.append(
                OccluderSpec("rect", (cx - w / 2, cy - h / 2, w, h), color)
            )
        else:
            occluders.append(
                OccluderSpec("ellipse", (cx, cy, w / 2 * 1.13, h / 2 * 1.13), color)
            )
    return occluders


def _camera_ranges(cfg: dict) -> CameraRanges:
    limit = float(cfg["data.azimuth_limit"])
    return CameraRanges(
        azimuth=(-limit, limit),
        elevation=(0.0, float(cfg["data.elevation_max"])),
        distance=(float(cfg["data.distance_min"]), float(cfg["data.distance_max"])),
        fov=(float(cfg["data.fov_min"]), float(cfg["data.fov_max"])),
    )


def synthesize_sample(cfg: dict, bank: PatternBank, sample_seed: int) -> PairedSample:
    """Build one paired sample from a scalar seed; deterministic."""
    size = int(cfg["data.image_size"])
    for attempt in range(MAX_SCENE_RETRIES):
        seed = sample_seed if attempt == 0 else _sample_seed(sample_seed, 7000 + attempt)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5CE]))
        asset, family = bank.draw(seed)
        surface = _sample_surface(rng, cfg)
        camera = sample_camera(seed, _camera_ranges(cfg))
        light = _sample_lights(rng, cfg)
        try:
            reference, mask = render_pair(
                asset, surface, camera, light, occluders=[], background_seed=seed, size=size
            )
        except DegenerateViewError:
            continue
        if mask.sum() < max(16, MIN_FOOTPRINT_FRACTION * size * size):
            continue
        occluders = _sample_occluders(rng, cfg, mask)
        reference, mask = apply_occluders(reference, mask, occluders)
        # Quantize before the edge pass so stored PNGs reproduce edge.png exactly.
        reference_u8 = np.clip(np.round(reference * 255.0), 0, 255).astype(np.uint8)
        edge = derive_edge_map(reference_u8.astype(np.float32) / 255.0, mask)
        meta = {
            "sample_seed": seed,
            "family": family,
            "asset_id": asset.id,
            "surface": {"kind": surface.kind, "curvature": surface.curvature,
                        "extent": list(surface.extent)},
            "camera": {"azimuth": camera.azimuth, "elevation": camera.elevation,
                       "distance": camera.distance, "fov": camera.fov},
            "light": {
                "ambient": light.ambient,
                "directional": [
                    {"direction": [float(x) for x in d], "intensity": s}
                    for d, s in light.directional
                ],
            },
            "occluders": [
                {"kind": o.kind, "params": list(o.params), "color": list(o.color)}
                for o in occluders
            ],
            "background_seed": seed,
        }
        return PairedSample(
            reference=reference_u8.astype(np.float32) / 255.0,
            mask=mask,
            edge=edge,
            asset=asset,
            meta=meta,
        )
    raise InvariantError(f"no usable scene after {MAX_SCENE_RETRIES} retries (seed {sample_seed})")


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_sample(sample: PairedSample, sample_id: str = "?") -> None:
    """Check the per-sample invariants; raises :class:`InvariantError`."""
    ref, mask, edge = sample.reference, sample.mask, sample.edge
    if ref.shape[:2] != mask.shape or edge.shape != mask.shape:
        raise InvariantError(f"{sample_id}: shape mismatch {ref.shape} {mask.shape} {edge.shape}")
    if ref.min() < 0 or ref.max() > 1:
        raise InvariantError(f"{sample_id}: reference outside [0, 1]")
    if not np.isin(mask, (0, 1)).all():
        raise InvariantError(f"{sample_id}: mask has values outside {{0, 1}}")
    if edge.min() < 0 or edge.max() > 1:
        raise InvariantError(f"{sample_id}: edge map outside [0, 1]")
    if np.any(edge[~dilate_mask(mask)] != 0):
        raise InvariantError(f"{sample_id}: edge map nonzero outside the dilated mask")
    # Edge-map causality: re-deriving from the stored pair reproduces it.
    rederived = derive_edge_map(ref, mask)
    if not np.array_equal(_to_u8(rederived), _to_u8(edge)):
        raise InvariantError(f"{sample_id}: edge map is not reproducible from (reference, mask)")
    ap = sample.asset.pixels
    if ap.min() < 0 or ap.max() > 1:
        raise InvariantError(f"{sample_id}: asset outside [0, 1]")


# ---------------------------------------------------------------------------
# Disk I/O
# ---------------------------------------------------------------------------

def _to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_image(path: Path, img: np.ndarray) -> None:
    """Save a float [0,1] array (HxW or HxWx3) as an 8-bit PNG."""
    arr = _to_u8(img)
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(path, format="PNG")


def load_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float32) / 255.0


def write_sample(directory: Path, sample: PairedSample) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    save_image(directory / "reference.png", sample.reference)
    save_image(directory / "mask.png", sample.mask.astype(np.float32))
    save_image(directory / "edge.png", sample.edge)
    save_image(directory / "asset.png", sample.asset.pixels)
    (directory / "meta.json").write_text(
        json.dumps(sample.meta, sort_keys=True, indent=2) + "\n"
    )


def load_sample(directory: Path) -> PairedSample:
    directory = Path(directory)
    try:
        reference = load_image(directory / "reference.png")
        mask = (load_image(directory / "mask.png") >= 0.5).astype(np.uint8)
        edge = load_image(directory / "edge.png")
        asset_pixels = load_image(directory / "asset.png")
        meta = json.loads((directory / "meta.json").read_text())
    except FileNotFoundError as exc:
        raise DataError(f"incomplete sample directory {directory}: {exc}") from exc
    return PairedSample(
        reference=reference,
        mask=mask,
        edge=edge,
        asset=AssetImage(pixels=asset_pixels, id=meta.get("asset_id", directory.name)),
        meta=meta,
    )


def sample_dir(manifest: DatasetManifest, sample_id: str) -> Path:
    return Path(manifest.root) / manifest.split[sample_id] / sample_id


def load_manifest(root: str | Path) -> DatasetManifest:
    path = Path(root) / "manifest.json"
    if not path.is_file():
        raise DataError(f"no manifest.json under {root}")
    return DatasetManifest.from_json(path.read_text(), root=str(root))


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def generate_dataset(
    cfg: dict,
    root: str | Path,
    n_samples: int | None = None,
    seed: int | None = None,
) -> DatasetManifest:
    """Render ``n_samples`` paired samples under ``root`` and write the manifest.

    Output is byte-identical for identical (config, seed). Each sample is
    validated as it is written; a violation aborts with the sample id.
    """
    n = int(cfg["data.n_samples"] if n_samples is None else n_samples)
    seed = int(cfg["train.seed"] if seed is None else seed)
    if n <= 0:
        raise ConfigError(f"n_samples must be positive, got {n}")
    root = Path(root)

    bank = PatternBank(
        size=int(cfg["data.image_size"]),
        families=tuple(f.strip() for f in str(cfg["data.families"]).split(",") if f.strip()),
        pattern_dir=str(cfg["data.pattern_dir"]),
    )

    ids = [f"sample_{i:05d}" for i in range(n)]
    provisional = DatasetManifest(
        root=str(root),
        ids=ids,
        split={i: "train" for i in ids},
        config_hash=config_hash(cfg, section="data"),
        seed=seed,
        image_size=int(cfg["data.image_size"]),
    )
    manifest = split_benchmark(provisional, float(cfg["data.test_fraction"]))

    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create dataset root {root}: {exc}") from exc

    for index, sample_id in enumerate(ids):
        sample = synthesize_sample(cfg, bank, _sample_seed(seed, index))
        validate_sample(sample, sample_id)
        write_sample(Path(root) / manifest.split[sample_id] / sample_id, sample)

    (root / "manifest.json").write_text(manifest.to_json())
    return manifest


def load_split_samples(
    manifest: DatasetManifest, split: str, limit: int = 0
) -> list[tuple[str, PairedSample]]:
    """Load all samples of one split (optionally capped), sorted by id."""
    if split not in SPLITS:
        raise ConfigError(f"split must be one of {SPLITS}, got '{split}'")
    ids = manifest.ids_for(split)
    if limit:
        ids = ids[:limit]
    return [(i, load_sample(sample_dir(manifest, i))) for i in ids]

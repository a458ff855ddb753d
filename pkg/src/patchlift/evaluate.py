"""Inference and the ablation harness.

Evaluation of one checkpoint produces a :class:`MetricReport`: per-sample
pixel/semantic/cycle metrics plus set-distance aggregates, with the feature
vectors cached so subset aggregates stay recomputable. The ablation grid
evaluates the three extractor configurations on the identical held-out id
list and reports each metric per scene subset (near-flat vs curved/occluded,
the latter standing in for the cluttered real-world regime).
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from patchlift.diffusion import NoiseSchedule, ddim_sample, linear_beta_schedule
from patchlift.errors import ConfigError, ContractError, DataError
from patchlift.metrics import (
    PatternFeatureNet,
    extract_features,
    frechet_distance,
    kid_distance,
    mse,
    psnr,
    semantic_similarity,
)
from patchlift.models import (
    ConditionBundle,
    ModelBundle,
    SemanticEncoder,
    encode_condition,
    encode_semantics,
    load_checkpoint,
)
from patchlift.reward import cycle_loss, estimate_clean_reference
from patchlift.synthdata.dataset import (
    DatasetManifest,
    PairedSample,
    load_split_samples,
    save_image,
)
from patchlift.synthdata.edges import derive_edge_map

ROW_LABELS = (
    "w/o Reward & w/o Edge map",
    "w/o Reward & w/ Edge map",
    "w/ Reward & w/ Edge map",
)
SUBSETS = ("near_flat", "curved_occluded")

# Conventional run-directory names the ablation harness looks for.
CELL_RUN_NAMES = {
    ROW_LABELS[0]: "extractor-noedge",
    ROW_LABELS[1]: "extractor-edge",
    ROW_LABELS[2]: "extractor-edge-reward",
}

METRIC_COLUMNS = ("fid_like", "kid_like", "semantic_cos", "cycle_loss")


def scene_subset(meta: dict) -> str:
    """Near-flat = plane with no occluders; everything else is the hard split."""
    flat = meta["surface"]["kind"] == "plane" and not meta.get("occluders")
    return "near_flat" if flat else "curved_occluded"


def _derived_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag, 0xE7]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

def _to_nchw(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.moveaxis(np.asarray(img, dtype=np.float32), -1, 0))


def extract_assets(
    bundle: ModelBundle,
    samples: list[tuple[str, PairedSample]],
    schedule: NoiseSchedule,
    *,
    steps: int = 50,
    eta: float = 0.0,
    seed: int = 0,
    batch_size: int = 16,
    with_edge: bool = True,
    save_dir: str | Path | None = None,
) -> dict[str, np.ndarray]:
    """Run the reverse sampler per held-out sample; returns id -> (S,S,3).

    Outputs are clamped to [0, 1]. The edge channel is derived on the fly
    from (reference, mask) — identical to the stored one by construction —
    and zeroed when the checkpoint was trained without it. With ``save_dir``,
    each extraction is written next to its ground truth.
    """
    bundle.eval()
    results: dict[str, np.ndarray] = {}
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        refs, masks, edges = [], [], []
        for sample_id, sample in chunk:
            if sample.mask is None:
                raise ContractError(f"sample {sample_id} has no mask")
            edge = derive_edge_map(sample.reference, sample.mask)
            refs.append(_to_nchw(sample.reference))
            masks.append(torch.from_numpy(sample.mask[None].astype(np.float32)))
            edges.append(torch.from_numpy(edge[None]))
        x_r = torch.stack(refs)
        m = torch.stack(masks)
        x_e = torch.stack(edges) if with_edge else torch.zeros_like(torch.stack(edges))

        with torch.no_grad():
            cond_maps = encode_condition(bundle.feature_encoder, x_r, m, x_e)
            sem = encode_semantics(bundle.semantic_encoder, x_r, m)
            cond = ConditionBundle(cond_maps, sem)

            def denoise(x, t, c):
                return bundle.extractor(x, t, c)

            out = ddim_sample(
                denoise, cond, schedule, steps=steps, eta=eta,
                seed=_derived_seed(seed, start),
            )
        out = out.clamp(0.0, 1.0)
        for (sample_id, sample), img in zip(chunk, out):
            arr = np.moveaxis(img.numpy(), 0, -1).astype(np.float32)
            results[sample_id] = arr
            if save_dir is not None:
                target = Path(save_dir) / sample_id
                target.mkdir(parents=True, exist_ok=True)
                save_image(target / "extracted.png", arr)
                save_image(target / "asset.png", sample.asset.pixels)
    return results


def cycle_scores(
    assets: dict[str, np.ndarray],
    samples: list[tuple[str, PairedSample]],
    inpainter,
    schedule: NoiseSchedule,
    t_inpaint: int,
    seed: int = 0,
) -> dict[str, float]:
    """Per-sample cycle loss via the frozen inpainter (fixed noise seed)."""
    scores: dict[str, float] = {}
    with torch.no_grad():
        for index, (sample_id, sample) in enumerate(samples):
            est = estimate_clean_reference(
                _to_nchw(assets[sample_id])[None],
                _to_nchw(sample.reference)[None],
                torch.from_numpy(sample.mask[None, None].astype(np.float32)),
                schedule,
                inpainter,
                t_inpaint,
                noise_seed=_derived_seed(seed, index),
            )
            scores[sample_id] = float(
                cycle_loss(_to_nchw(sample.reference)[None], est)
            )
    return scores


def cycle_score(
    assets: dict[str, np.ndarray],
    samples: list[tuple[str, PairedSample]],
    inpainter,
    schedule: NoiseSchedule,
    t_inpaint: int,
    seed: int = 0,
) -> float:
    """Mean cycle loss over a sample set."""
    scores = cycle_scores(assets, samples, inpainter, schedule, t_inpaint, seed)
    return float(np.mean(list(scores.values())))


# ---------------------------------------------------------------------------
# Metric reports
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    ids: list[str]
    per_sample: list[dict]                 # {"id", "psnr", "mse", "semantic_cos", "cycle_loss"}
    aggregates: dict
    extracted_features: np.ndarray | None = None
    target_features: np.ndarray | None = None
    subsets: dict[str, str] = field(default_factory=dict)  # id -> subset label

    def subset(self, label: str) -> "MetricReport":
        keep = [i for i, sid in enumerate(self.ids) if self.subsets.get(sid) == label]
        if not keep:
            raise DataError(f"subset '{label}' is empty")
        ids = [self.ids[i] for i in keep]
        per_sample = [self.per_sample[i] for i in keep]
        ef = self.extracted_features[keep] if self.extracted_features is not None else None
        tf = self.target_features[keep] if self.target_features is not None else None
        aggregates = _aggregate(per_sample, ef, tf, self.aggregates.get("kid_block_size", 50))
        return MetricReport(ids, per_sample, aggregates, ef, tf,
                            {i: label for i in ids})

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key in sorted(self.aggregates):
            buf.write(f"# {key} = {self.aggregates[key]!r}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id", "subset", "psnr", "mse", "semantic_cos", "cycle_loss"])
        for rec in self.per_sample:
            writer.writerow(
                [rec["id"], self.subsets.get(rec["id"], "")]
                + [repr(rec[k]) for k in ("psnr", "mse", "semantic_cos", "cycle_loss")]
            )
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str) -> "MetricReport":
        aggregates: dict = {}
        rows = []
        for line in text.splitlines():
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                aggregates[key.strip()] = _parse_scalar(value.strip())
            elif line.strip():
                rows.append(line)
        reader = csv.DictReader(rows)
        per_sample, subsets, ids = [], {}, []
        for row in reader:
            rec = {"id": row["id"]}
            for key in ("psnr", "mse", "semantic_cos", "cycle_loss"):
                rec[key] = float(row[key])
            per_sample.append(rec)
            ids.append(row["id"])
            if row.get("subset"):
                subsets[row["id"]] = row["subset"]
        return MetricReport(ids, per_sample, aggregates, None, None, subsets)


def _parse_scalar(text: str):
    try:
        if text in ("inf", "-inf"):
            return float(text)
        value = float(text)
        return int(value) if value == int(value) and "." not in text and "e" not in text else value
    except ValueError:
        return text


def _aggregate(per_sample: list[dict], extracted_feats, target_feats, kid_block: int) -> dict:
    agg = {
        "count": len(per_sample),
        "kid_block_size": kid_block,
        "mean_psnr": float(np.mean([r["psnr"] for r in per_sample])),
        "mean_mse": float(np.mean([r["mse"] for r in per_sample])),
        "mean_semantic_cos": float(np.mean([r["semantic_cos"] for r in per_sample])),
        "mean_cycle_loss": float(np.mean([r["cycle_loss"] for r in per_sample])),
    }
    if extracted_feats is not None and target_feats is not None and len(per_sample) >= 2:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            agg["fid_like"] = frechet_distance(extracted_feats, target_feats)
            agg["kid_like"] = kid_distance(extracted_feats, target_feats, kid_block)
    return agg


def evaluate_assets(
    assets: dict[str, np.ndarray],
    samples: list[tuple[str, PairedSample]],
    semantic_net: SemanticEncoder,
    inpainter,
    schedule: NoiseSchedule,
    feature_net: PatternFeatureNet,
    *,
    t_inpaint: int = 150,
    eval_seed: int = 0,
    crop_fraction: float = 0.875,
    kid_block_size: int = 50,
) -> MetricReport:
    """Score one extraction run against ground truth on a fixed sample list."""
    ids = [sample_id for sample_id, _ in samples]
    cycles = cycle_scores(assets, samples, inpainter, schedule, t_inpaint, eval_seed)
    per_sample = []
    subsets = {}
    for sample_id, sample in samples:
        extracted = assets[sample_id]
        target = sample.asset.pixels
        per_sample.append(
            {
                "id": sample_id,
                "psnr": psnr(extracted, target),
                "mse": mse(extracted, target),
                "semantic_cos": semantic_similarity(extracted, target, semantic_net),
                "cycle_loss": cycles[sample_id],
            }
        )
        subsets[sample_id] = scene_subset(sample.meta)
    extracted_feats = extract_features(
        feature_net, np.stack([assets[i] for i in ids]), crop_fraction
    )
    target_feats = extract_features(
        feature_net, np.stack([s.asset.pixels for _, s in samples]), crop_fraction
    )
    aggregates = _aggregate(per_sample, extracted_feats, target_feats, kid_block_size)
    return MetricReport(ids, per_sample, aggregates, extracted_feats, target_feats, subsets)


def evaluate_checkpoint(
    checkpoint_path: str | Path,
    samples: list[tuple[str, PairedSample]],
    inpainter,
    feature_net: PatternFeatureNet,
    cfg: dict,
    semantic_net: SemanticEncoder | None = None,
    save_dir: str | Path | None = None,
) -> MetricReport:
    """Extract with a stored checkpoint and score it.

    ``semantic_net`` overrides the scoring encoder so different checkpoints
    can be compared in one fixed embedding space; by default the
    checkpoint's own encoder is used.
    """
    bundle, meta, _ = load_checkpoint(checkpoint_path)
    schedule = linear_beta_schedule(
        meta["schedule"]["timesteps"],
        meta["schedule"]["beta_start"],
        meta["schedule"]["beta_end"],
    )
    with_edge = bool(meta["extra"].get("with_edge", True))
    assets = extract_assets(
        bundle, samples, schedule,
        steps=int(cfg["eval.ddim_steps"]),
        eta=float(cfg["eval.eta"]),
        seed=int(cfg["eval.seed"]),
        batch_size=int(cfg["eval.batch_size"]),
        with_edge=with_edge,
        save_dir=save_dir,
    )
    return evaluate_assets(
        assets, samples, semantic_net or bundle.semantic_encoder, inpainter, schedule,
        feature_net,
        t_inpaint=int(cfg["reward.t_inpaint"]),
        eval_seed=int(cfg["eval.seed"]),
        crop_fraction=float(cfg["eval.crop_fraction"]),
        kid_block_size=int(cfg["eval.kid_block_size"]),
    )


# ---------------------------------------------------------------------------
# Ablation grid
# ---------------------------------------------------------------------------

@dataclass
class AblationGrid:
    rows: tuple[str, ...]
    splits: tuple[str, ...]
    seeds: tuple[int, ...]
    eval_ids: list[str]
    cells: dict[tuple[str, str, int], MetricReport | None]
    warnings: list[str] = field(default_factory=list)

    def cell(self, row: str, split: str, seed: int) -> MetricReport | None:
        return self.cells.get((row, split, seed))


def test_sample_list(manifest: DatasetManifest, limit: int = 0) -> list[tuple[str, PairedSample]]:
    samples = load_split_samples(manifest, "test", limit=limit)
    if not samples:
        raise DataError(f"dataset {manifest.root} has no test split")
    return samples


def run_ablation(
    manifest: DatasetManifest,
    cfg: dict,
    runs_root: str | Path,
    seeds: tuple[int, ...],
    feature_net: PatternFeatureNet,
) -> AblationGrid:
    """Evaluate all (configuration x split x seed) cells on one held-out list.

    Checkpoints are found by convention under ``runs_root``: per seed,
    ``inpainter-s<seed>`` plus one directory per extractor configuration
    (see ``CELL_RUN_NAMES``). Missing checkpoints leave their cells absent
    with a warning rather than failing the grid.
    """
    runs_root = Path(runs_root)
    samples = test_sample_list(manifest, limit=int(cfg["eval.max_samples"]))
    eval_ids = [sample_id for sample_id, _ in samples]
    cells: dict[tuple[str, str, int], MetricReport | None] = {}
    notes: list[str] = []

    for seed in seeds:
        inpaint_path = runs_root / f"inpainter-s{seed}" / "checkpoint.npz"
        if not inpaint_path.is_file():
            notes.append(f"missing inpainter checkpoint for seed {seed}: {inpaint_path}")
            for row in ROW_LABELS:
                for split in SUBSETS:
                    cells[(row, split, seed)] = None
            continue
        inpaint_bundle, _, _ = load_checkpoint(inpaint_path)
        inpainter = inpaint_bundle.inpainter
        inpainter.eval()

        base_path = runs_root / f"{CELL_RUN_NAMES[ROW_LABELS[1]]}-s{seed}" / "checkpoint.npz"
        scoring_encoder = None
        if base_path.is_file():
            base_bundle, _, _ = load_checkpoint(base_path)
            scoring_encoder = base_bundle.semantic_encoder

        for row in ROW_LABELS:
            ckpt = runs_root / f"{CELL_RUN_NAMES[row]}-s{seed}" / "checkpoint.npz"
            if not ckpt.is_file():
                notes.append(f"missing checkpoint for cell '{row}' seed {seed}: {ckpt}")
                for split in SUBSETS:
                    cells[(row, split, seed)] = None
                continue
            report = evaluate_checkpoint(
                ckpt, samples, inpainter, feature_net, cfg, semantic_net=scoring_encoder
            )
            for split in SUBSETS:
                try:
                    cells[(row, split, seed)] = report.subset(split)
                except DataError:
                    cells[(row, split, seed)] = None
                    notes.append(f"subset '{split}' empty for cell '{row}' seed {seed}")

    for note in notes:
        warnings.warn(note, stacklevel=2)
    return AblationGrid(
        rows=ROW_LABELS,
        splits=SUBSETS,
        seeds=tuple(seeds),
        eval_ids=eval_ids,
        cells=cells,
        warnings=notes,
    )

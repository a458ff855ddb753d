"""Rendered outputs: ablation tables (CSV + aligned text), metric figures,
loss-curve plots, and qualitative contact sheets.

Figures are written with empty PNG metadata so repeated runs of the same
inputs produce identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from patchlift.evaluate import METRIC_COLUMNS, AblationGrid
from patchlift.synthdata.dataset import PairedSample

_PNG_META = {"Software": None}


def _cell_values(grid: AblationGrid, row: str, split: str, metric: str) -> list[float]:
    values = []
    for seed in grid.seeds:
        report = grid.cell(row, split, seed)
        if report is not None and metric in report.aggregates:
            values.append(report.aggregates[metric])
    return values


def _metric_key(metric: str) -> str:
    return {"semantic_cos": "mean_semantic_cos", "cycle_loss": "mean_cycle_loss"}.get(
        metric, metric
    )


def render_ablation_csv(grid: AblationGrid) -> str:
    """Per-seed long-format CSV; absent cells get empty metric fields."""
    lines = ["configuration,split,seed," + ",".join(METRIC_COLUMNS) + ",mean_psnr,count"]
    for row in grid.rows:
        for split in grid.splits:
            for seed in grid.seeds:
                report = grid.cell(row, split, seed)
                if report is None:
                    lines.append(f"{row},{split},{seed}" + "," * (len(METRIC_COLUMNS) + 2))
                    continue
                agg = report.aggregates
                fields = [f"{agg.get(_metric_key(m), float('nan')):.6f}" for m in METRIC_COLUMNS]
                lines.append(
                    f"{row},{split},{seed},"
                    + ",".join(fields)
                    + f",{agg['mean_psnr']:.6f},{agg['count']}"
                )
    return "\n".join(lines) + "\n"


def render_ablation_text(grid: AblationGrid) -> str:
    """Aligned table of seed-averaged metrics, one block per split."""
    label_width = max(len(r) for r in grid.rows) + 2
    col = 14
    out = []
    for split in grid.splits:
        out.append(f"== split: {split} (seeds {', '.join(str(s) for s in grid.seeds)}) ==")
        header = "configuration".ljust(label_width) + "".join(m.rjust(col) for m in METRIC_COLUMNS)
        out.append(header)
        for row in grid.rows:
            cells = []
            for metric in METRIC_COLUMNS:
                values = _cell_values(grid, row, split, _metric_key(metric))
                cells.append(("absent" if not values else f"{np.mean(values):.4f}").rjust(col))
            out.append(row.ljust(label_width) + "".join(cells))
        out.append("")
    return "\n".join(out)


def plot_ablation(grid: AblationGrid, path: str | Path) -> None:
    """Grouped bars of the seed-averaged metrics, one panel per metric."""
    fig, axes = plt.subplots(1, len(METRIC_COLUMNS), figsize=(4 * len(METRIC_COLUMNS), 3.2))
    x = np.arange(len(grid.rows))
    width = 0.8 / len(grid.splits)
    for ax, metric in zip(np.atleast_1d(axes), METRIC_COLUMNS):
        for k, split in enumerate(grid.splits):
            means = []
            for row in grid.rows:
                values = _cell_values(grid, row, split, _metric_key(metric))
                means.append(np.mean(values) if values else np.nan)
            ax.bar(x + k * width, means, width, label=split)
        ax.set_title(metric)
        ax.set_xticks(x + width / 2)
        ax.set_xticklabels([r.replace(" & ", "\n") for r in grid.rows], fontsize=7)
        ax.tick_params(axis="y", labelsize=8)
    np.atleast_1d(axes)[0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def write_ablation_outputs(grid: AblationGrid, out_dir: str | Path) -> dict[str, Path]:
    """Write ablation.csv / ablation.txt / ablation.png under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out_dir / "ablation.csv",
        "txt": out_dir / "ablation.txt",
        "png": out_dir / "ablation.png",
    }
    paths["csv"].write_text(render_ablation_csv(grid))
    paths["txt"].write_text(render_ablation_text(grid))
    plot_ablation(grid, paths["png"])
    return paths


# ---------------------------------------------------------------------------
# Loss curves
# ---------------------------------------------------------------------------

def plot_loss_curves(log_paths: dict[str, str | Path], out_path: str | Path) -> None:
    """Plot per-step losses from NDJSON logs; one labelled line per run."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for label, path in log_paths.items():
        steps, losses = [], []
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            steps.append(record["step"])
            losses.append(record.get("loss", record.get("l_total")))
        ax.plot(steps, losses, label=label, linewidth=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, metadata=_PNG_META)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Qualitative grids
# ---------------------------------------------------------------------------

def _to_hwc(img) -> np.ndarray:
    arr = img.detach().cpu().numpy() if hasattr(img, "detach") else np.asarray(img)
    if arr.ndim == 3 and arr.shape[0] in (1, 3):
        arr = np.moveaxis(arr, 0, -1)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.shape[-1] == 1:
        arr = np.repeat(arr, 3, axis=-1)
    return np.clip(arr, 0.0, 1.0)


def save_image_row(path: str | Path, images: list, titles: list[str] | None = None) -> None:
    """One row of images side by side (used for fine-tuning snapshots)."""
    fig, axes = plt.subplots(1, len(images), figsize=(2.2 * len(images), 2.4))
    for k, (ax, img) in enumerate(zip(np.atleast_1d(axes), images)):
        ax.imshow(_to_hwc(img))
        ax.set_axis_off()
        if titles:
            ax.set_title(titles[k], fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def contact_sheet(
    path: str | Path,
    samples: list[tuple[str, PairedSample]],
    extracted: dict[str, np.ndarray],
    max_rows: int = 8,
) -> None:
    """Reference | mask | extracted | ground-truth grid for quick inspection."""
    rows = samples[:max_rows]
    fig, axes = plt.subplots(len(rows), 4, figsize=(9, 2.2 * len(rows)), squeeze=False)
    for r, (sample_id, sample) in enumerate(rows):
        panels = [
            sample.reference,
            sample.mask.astype(np.float32),
            extracted[sample_id],
            sample.asset.pixels,
        ]
        for c, img in enumerate(panels):
            axes[r][c].imshow(_to_hwc(img))
            axes[r][c].set_axis_off()
        axes[r][0].set_title(sample_id, fontsize=7, loc="left")
    for c, title in enumerate(["reference", "mask", "extracted", "ground truth"]):
        axes[0][c].set_title(title, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)

"""Command-line entry point.

Commands: ``gen-data``, ``train {extractor|inpainter}``, ``finetune``,
``extract``, ``eval``, ``report``. Every command takes ``--config`` (plain
key-value file), ``--set key=value`` overrides, ``--seed``, and ``--out``
(the workspace root holding ``data/``, ``runs/``, ``eval/``, ``report/``),
and writes a resolved-config snapshot next to its outputs.

Exit codes: 0 success, 1 user error, 2 internal invariant failure.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from patchlift import config as config_mod
from patchlift.errors import ConfigError, InternalError, UserError
from patchlift.synthdata.dataset import generate_dataset, load_manifest

SNAPSHOT_NAME = "resolved-config.txt"


def _resolve(config_path: str | None, overrides: tuple[str, ...],
             seed: int | None, seed_key: str) -> dict:
    file_values = config_mod.load_config_file(config_path) if config_path else {}
    cfg = config_mod.resolve_config(file_values, config_mod.parse_overrides(list(overrides)))
    if seed is not None:
        cfg[seed_key] = int(seed)
    return cfg


def _snapshot(cfg: dict, directory: Path, command: str) -> None:
    config_mod.write_snapshot(cfg, directory / SNAPSHOT_NAME, header=f"command: {command}")


def _data_root(cfg: dict, out_root: str) -> Path:
    root = Path(str(cfg["data.root"]))
    return root if root.is_absolute() else Path(out_root) / root


def common_options(f):
    f = click.option("--config", "config_path", type=click.Path(), default=None,
                     help="Plain-text key-value config file.")(f)
    f = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                     help="Override a config key (repeatable).")(f)
    f = click.option("--seed", type=int, default=None, help="Run seed.")(f)
    f = click.option("--out", "out_root", type=click.Path(), default="out",
                     help="Workspace root for data/runs/eval/report.")(f)
    return f


@click.group()
def cli():
    """Flat-asset extraction pipeline."""


@cli.command("gen-data")
@common_options
@click.option("--n", "n_samples", type=int, default=None, help="Number of samples.")
def cmd_gen_data(config_path, overrides, seed, out_root, n_samples):
    """Render the paired dataset and write its manifest."""
    cfg = _resolve(config_path, overrides, seed, "train.seed")
    root = _data_root(cfg, out_root)
    manifest = generate_dataset(cfg, root, n_samples=n_samples, seed=cfg["train.seed"])
    _snapshot(cfg, root, "gen-data")
    click.echo(
        f"dataset: {len(manifest.ids)} samples "
        f"({len(manifest.ids_for('train'))} train / {len(manifest.ids_for('test'))} test) "
        f"at {root}"
    )


def _run_name(which: str, with_edge: bool, reward: bool = False) -> str:
    if which == "inpainter":
        return "inpainter"
    name = "extractor-edge" if with_edge else "extractor-noedge"
    return name + ("-reward" if reward else "")


@cli.command("train")
@click.argument("which", type=click.Choice(["extractor", "inpainter"]))
@common_options
@click.option("--epochs", type=int, default=None, help="Override train.epochs.")
@click.option("--resume", "resume_from", type=click.Path(), default=None,
              help="Checkpoint to resume from.")
def cmd_train(which, config_path, overrides, seed, out_root, epochs, resume_from):
    """Train the extractor or the inverse-task inpainter."""
    from patchlift.diffusion import linear_beta_schedule
    from patchlift.models import create_bundle
    from patchlift.training import TrainConfig, train_extractor, train_inpainter

    cfg = _resolve(config_path, overrides, seed, "train.seed")
    if epochs is not None:
        cfg["train.epochs"] = int(epochs)
    manifest = load_manifest(_data_root(cfg, out_root))
    run_seed = int(cfg["train.seed"])
    run_dir = Path(out_root) / "runs" / f"{_run_name(which, cfg['train.with_edge'])}-s{run_seed}"
    train_cfg = TrainConfig(
        learning_rate=float(cfg["train.learning_rate"]),
        batch_size=int(cfg["train.batch_size"]),
        epochs=int(cfg["train.epochs"]),
        seed=run_seed,
        checkpoint_every=int(cfg["train.checkpoint_every"]),
        with_edge=bool(cfg["train.with_edge"]),
        cond_dropout=float(cfg["train.cond_dropout"]),
        out_dir=str(run_dir),
    )
    schedule = linear_beta_schedule(
        int(cfg["diffusion.timesteps"]), float(cfg["diffusion.beta_start"]),
        float(cfg["diffusion.beta_end"]),
    )
    bundle = create_bundle(config_mod.section(cfg, "model"), seed=run_seed)
    train = train_extractor if which == "extractor" else train_inpainter
    result = train(manifest, bundle, schedule, train_cfg, resume_from=resume_from)
    _snapshot(cfg, run_dir, f"train {which}")
    click.echo(f"trained {which}: {result.steps} steps, final loss "
               f"{result.losses[-1]:.6f}, checkpoint {result.checkpoint_path}")


@cli.command("finetune")
@common_options
@click.option("--steps", type=int, default=None, help="Override reward.steps.")
@click.option("--lambda", "reward_weight", type=float, default=None,
              help="Override reward.weight.")
@click.option("--extractor", "extractor_path", type=click.Path(), default=None)
@click.option("--inpainter", "inpainter_path", type=click.Path(), default=None)
def cmd_finetune(config_path, overrides, seed, out_root, steps, reward_weight,
                 extractor_path, inpainter_path):
    """Reward fine-tune a trained extractor against the frozen inpainter."""
    from patchlift.diffusion import linear_beta_schedule
    from patchlift.models import load_checkpoint
    from patchlift.reward import RewardConfig, finetune
    from patchlift.training import load_training_tensors

    cfg = _resolve(config_path, overrides, seed, "reward.seed")
    if steps is not None:
        cfg["reward.steps"] = int(steps)
    if reward_weight is not None:
        cfg["reward.weight"] = float(reward_weight)
    run_seed = int(cfg["reward.seed"])
    runs = Path(out_root) / "runs"
    extractor_path = extractor_path or runs / f"{_run_name('extractor', cfg['train.with_edge'])}-s{run_seed}" / "checkpoint.npz"
    inpainter_path = inpainter_path or runs / f"inpainter-s{run_seed}" / "checkpoint.npz"
    for path, what in ((extractor_path, "extractor"), (inpainter_path, "inpainter")):
        if not Path(path).is_file():
            raise ConfigError(f"missing {what} checkpoint: {path} (train it first)")

    bundle, meta, _ = load_checkpoint(extractor_path)
    inpaint_bundle, _, _ = load_checkpoint(inpainter_path)
    schedule = linear_beta_schedule(
        meta["schedule"]["timesteps"], meta["schedule"]["beta_start"],
        meta["schedule"]["beta_end"],
    )
    manifest = load_manifest(_data_root(cfg, out_root))
    run_dir = runs / f"{_run_name('extractor', cfg['train.with_edge'], reward=True)}-s{run_seed}"
    reward_cfg = RewardConfig(
        t_threshold=int(cfg["reward.t_threshold"]),
        t_inpaint=int(cfg["reward.t_inpaint"]),
        weight=float(cfg["reward.weight"]),
        learning_rate=float(cfg["reward.learning_rate"]),
        steps=int(cfg["reward.steps"]),
        batch_size=int(cfg["reward.batch_size"]),
        seed=run_seed,
        masked_cycle=bool(cfg["reward.masked_cycle"]),
        with_edge=bool(meta["extra"].get("with_edge", True)),
        snapshot_every=int(cfg["reward.snapshot_every"]),
        out_dir=str(run_dir),
    )
    tensors = load_training_tensors(manifest, "train")
    result, diagnostics = finetune(
        tensors, bundle, inpaint_bundle.inpainter, schedule, reward_cfg
    )
    _snapshot(cfg, run_dir, "finetune")
    gated = float(np.mean([d.gated for d in diagnostics]))
    click.echo(f"fine-tuned: {result.steps} steps, gated fraction {gated:.3f}, "
               f"checkpoint {result.checkpoint_path}")


@cli.command("extract")
@common_options
@click.option("--image", "image_path", type=click.Path(), required=True)
@click.option("--mask", "mask_path", type=click.Path(), required=True)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), required=True)
@click.option("--output", "output_path", type=click.Path(), required=True)
def cmd_extract(config_path, overrides, seed, out_root, image_path, mask_path,
                checkpoint_path, output_path):
    """Extract the flat asset from one reference image + mask."""
    from patchlift.diffusion import linear_beta_schedule
    from patchlift.evaluate import extract_assets
    from patchlift.models import load_checkpoint
    from patchlift.synthdata.dataset import PairedSample, load_image, save_image
    from patchlift.synthdata.edges import derive_edge_map
    from patchlift.synthdata.patterns import AssetImage

    cfg = _resolve(config_path, overrides, seed, "eval.seed")
    reference = load_image(Path(image_path))
    mask_img = load_image(Path(mask_path))
    if mask_img.ndim == 3:
        mask_img = mask_img[..., 0]
    if reference.ndim != 3 or reference.shape[2] != 3:
        raise ConfigError(f"reference must be RGB, got shape {reference.shape}")
    if mask_img.shape != reference.shape[:2]:
        raise ConfigError(
            f"mask shape {mask_img.shape} does not match reference {reference.shape[:2]}"
        )
    mask = (mask_img >= 0.5).astype(np.uint8)
    bundle, meta, _ = load_checkpoint(checkpoint_path)
    schedule = linear_beta_schedule(
        meta["schedule"]["timesteps"], meta["schedule"]["beta_start"],
        meta["schedule"]["beta_end"],
    )
    sample = PairedSample(
        reference=reference,
        mask=mask,
        edge=derive_edge_map(reference, mask),
        asset=AssetImage(pixels=np.zeros_like(reference), id="query"),
        meta={"surface": {"kind": "unknown"}, "occluders": []},
    )
    assets = extract_assets(
        bundle, [("query", sample)], schedule,
        steps=int(cfg["eval.ddim_steps"]), eta=float(cfg["eval.eta"]),
        seed=int(cfg["eval.seed"]), batch_size=1,
        with_edge=bool(meta["extra"].get("with_edge", True)),
    )
    out = Path(output_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_image(out, assets["query"])
    _snapshot(cfg, out.parent, "extract")
    click.echo(f"asset written to {out}")


def _feature_net(cfg: dict, out_root: str, image_size: int):
    """Train (or load the cached) pattern-family feature extractor."""
    from patchlift.metrics import load_feature_net, save_feature_net, train_feature_extractor

    path = Path(out_root) / "feature-net.npz"
    families = tuple(f.strip() for f in str(cfg["data.families"]).split(",") if f.strip())
    if path.is_file():
        net, meta = load_feature_net(path)
        if tuple(meta["families"]) == families:
            return net
    net, accuracy = train_feature_extractor(
        image_size, families,
        seed=int(cfg["eval.feature_seed"]),
        epochs=int(cfg["eval.feature_epochs"]),
        per_family=int(cfg["eval.feature_bank_per_family"]),
    )
    save_feature_net(path, net, accuracy, families)
    click.echo(f"feature extractor accuracy: {accuracy:.3f}")
    return net


@cli.command("eval")
@common_options
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), required=True)
@click.option("--inpainter", "inpainter_path", type=click.Path(), default=None)
@click.option("--name", default=None, help="Output directory name under eval/.")
def cmd_eval(config_path, overrides, seed, out_root, checkpoint_path,
             inpainter_path, name):
    """Evaluate one checkpoint on the held-out split."""
    from patchlift.evaluate import evaluate_checkpoint, test_sample_list
    from patchlift.models import load_checkpoint
    from patchlift.report import contact_sheet
    from patchlift.synthdata.dataset import load_image

    cfg = _resolve(config_path, overrides, seed, "eval.seed")
    manifest = load_manifest(_data_root(cfg, out_root))
    samples = test_sample_list(manifest, limit=int(cfg["eval.max_samples"]))
    inpainter_path = inpainter_path or (
        Path(out_root) / "runs" / f"inpainter-s{int(cfg['train.seed'])}" / "checkpoint.npz"
    )
    if not Path(inpainter_path).is_file():
        raise ConfigError(f"missing inpainter checkpoint: {inpainter_path}")
    inpaint_bundle, _, _ = load_checkpoint(inpainter_path)
    feature_net = _feature_net(cfg, out_root, manifest.image_size)

    out_dir = Path(out_root) / "eval" / (name or Path(checkpoint_path).parent.name)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = evaluate_checkpoint(
        checkpoint_path, samples, inpaint_bundle.inpainter, feature_net, cfg,
        save_dir=out_dir / "assets",
    )
    (out_dir / "report.csv").write_text(report.to_csv())
    np.savez(
        out_dir / "features.npz",
        ids=np.array(report.ids),
        extracted=report.extracted_features,
        target=report.target_features,
    )
    extracted = {
        sample_id: load_image(out_dir / "assets" / sample_id / "extracted.png")
        for sample_id, _ in samples[:8]
    }
    contact_sheet(out_dir / "contact_sheet.png", samples[:8], extracted)
    _snapshot(cfg, out_dir, "eval")
    click.echo(
        f"evaluated {report.aggregates['count']} samples: "
        f"psnr {report.aggregates['mean_psnr']:.2f} dB, "
        f"fid_like {report.aggregates.get('fid_like', float('nan')):.3f}"
    )


@cli.command("report")
@common_options
@click.option("--seeds", "seeds_text", default="0", help="Comma-separated run seeds.")
def cmd_report(config_path, overrides, seed, out_root, seeds_text):
    """Evaluate the ablation grid and render its table and figure."""
    from patchlift.evaluate import run_ablation
    from patchlift.report import write_ablation_outputs

    cfg = _resolve(config_path, overrides, seed, "eval.seed")
    manifest = load_manifest(_data_root(cfg, out_root))
    try:
        seeds = tuple(int(s) for s in seeds_text.split(",") if s.strip())
    except ValueError as exc:
        raise ConfigError(f"bad --seeds value '{seeds_text}'") from exc
    if not seeds:
        raise ConfigError("--seeds must name at least one seed")
    feature_net = _feature_net(cfg, out_root, manifest.image_size)
    grid = run_ablation(manifest, cfg, Path(out_root) / "runs", seeds, feature_net)
    out_dir = Path(out_root) / "report"
    paths = write_ablation_outputs(grid, out_dir)
    _snapshot(cfg, out_dir, "report")
    for note in grid.warnings:
        click.echo(f"warning: {note}", err=True)
    click.echo(Path(paths["txt"]).read_text())
    click.echo(f"report written to {out_dir}")


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.exceptions.ClickException as exc:
        exc.show()
        return 1
    except UserError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except InternalError as exc:
        click.echo(f"internal error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

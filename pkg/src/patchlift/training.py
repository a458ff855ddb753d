"""Base training loops for the extractor and the inverse-task inpainter.

Both models train under the standard noise-prediction objective. Runs are
fully reproducible from (config, seed): timesteps, noise, condition dropout,
and shuffling all come from dedicated generators whose states are stored in
checkpoints, so a resumed run continues the loss curve exactly.

Loss curves are newline-delimited JSON records
``{"step", "epoch", "loss", "t": [...], "t_buckets": {...}}`` where
``t_buckets`` maps timestep deciles to that batch's mean loss.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from patchlift.diffusion import NoiseSchedule, q_sample_batch
from patchlift.errors import ConfigError, ContractError, DataError, InvariantError
from patchlift.models import (
    ConditionBundle,
    ModelBundle,
    encode_condition,
    encode_semantics,
    load_checkpoint,
    predict_inpaint_noise,
    predict_noise,
    save_checkpoint,
)
from patchlift.synthdata.dataset import DatasetManifest, load_split_samples


@dataclass
class TrainConfig:
    # Toy-scale learning rate; the full-scale reference setup used 1e-6.
    learning_rate: float = 1e-4
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    checkpoint_every: int = 0      # epochs between extra checkpoints; 0 = final only
    with_edge: bool = True         # False zeroes the edge channel (ablation)
    cond_dropout: float = 0.1      # P(zero the semantic embedding) per sample
    out_dir: str = "run"
    overfit_steps: int = 0         # > 0: single-sample fixed-noise capacity check
    limit: int = 0                 # cap on training samples (0 = all)

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1 and self.overfit_steps <= 0:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class TrainResult:
    checkpoint_path: str
    losses: list[float]
    steps: int
    log_path: str = ""
    extra: dict = field(default_factory=dict)


class NdjsonLogger:
    """Append-only newline-delimited JSON writer."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w")
        else:
            self._fh = None

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self._fh:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None


def load_training_tensors(
    manifest: DatasetManifest, split: str = "train", limit: int = 0
) -> dict[str, torch.Tensor]:
    """Load one split into NCHW float32 tensors (dataset sizes are desk-scale)."""
    pairs = load_split_samples(manifest, split, limit=limit)
    if not pairs:
        raise DataError(f"split '{split}' of {manifest.root} is empty")
    refs, masks, edges, assets, ids = [], [], [], [], []
    for sample_id, sample in pairs:
        refs.append(np.moveaxis(sample.reference, -1, 0))
        masks.append(sample.mask[None].astype(np.float32))
        edges.append(sample.edge[None])
        assets.append(np.moveaxis(sample.asset.pixels, -1, 0))
        ids.append(sample_id)
    return {
        "reference": torch.from_numpy(np.stack(refs)),
        "mask": torch.from_numpy(np.stack(masks)),
        "edge": torch.from_numpy(np.stack(edges)),
        "asset": torch.from_numpy(np.stack(assets)),
        "ids": ids,
    }


def _as_tensors(dataset) -> dict:
    if isinstance(dataset, DatasetManifest):
        return load_training_tensors(dataset)
    if isinstance(dataset, dict) and "reference" in dataset:
        return dataset
    raise ContractError("dataset must be a DatasetManifest or a tensor dict")


def _timestep_buckets(t_batch: torch.Tensor, per_sample_loss: torch.Tensor, T: int) -> dict:
    buckets: dict[str, float] = {}
    decile = ((t_batch - 1) * 10) // T
    for b in decile.unique():
        sel = decile == b
        buckets[str(int(b))] = float(per_sample_loss[sel].mean())
    return buckets


def _edge_channel(edge: torch.Tensor, with_edge: bool) -> torch.Tensor:
    return edge if with_edge else torch.zeros_like(edge)


# ---------------------------------------------------------------------------
# Optimizer/RNG state (for exact resume)
# ---------------------------------------------------------------------------

def _pack_train_state(
    optimizer: torch.optim.Adam, gen: torch.Generator, shuffle_rng: np.random.Generator,
    step: int, epoch: int,
) -> tuple[dict, dict[str, np.ndarray]]:
    arrays: dict[str, np.ndarray] = {}
    state = optimizer.state_dict()
    for idx, entry in state["state"].items():
        for key, value in entry.items():
            arrays[f"opt/{idx}/{key}"] = (
                value.detach().cpu().numpy() if torch.is_tensor(value) else np.asarray(value)
            )
    arrays["rng/torch"] = gen.get_state().numpy()
    meta = {
        "step": step,
        "epoch": epoch,
        "opt_param_groups": state["param_groups"],
        "rng_numpy": shuffle_rng.bit_generator.state,
    }
    return meta, arrays


def _restore_train_state(
    optimizer: torch.optim.Adam, gen: torch.Generator, shuffle_rng: np.random.Generator,
    meta: dict, arrays: dict[str, np.ndarray],
) -> tuple[int, int]:
    state: dict = {"state": {}, "param_groups": meta["opt_param_groups"]}
    for key, value in arrays.items():
        if not key.startswith("opt/"):
            continue
        _, idx, name = key.split("/", 2)
        entry = state["state"].setdefault(int(idx), {})
        entry[name] = torch.from_numpy(value.copy()) if value.ndim else torch.tensor(value)
    optimizer.load_state_dict(state)
    gen.set_state(torch.from_numpy(arrays["rng/torch"].copy()))
    shuffle_rng.bit_generator.state = meta["rng_numpy"]
    return int(meta["step"]), int(meta["epoch"])


# ---------------------------------------------------------------------------
# Shared loop
# ---------------------------------------------------------------------------

def _train_loop(
    which: str,
    dataset,
    bundle: ModelBundle,
    schedule: NoiseSchedule,
    cfg: TrainConfig,
    resume_from: str | None = None,
) -> TrainResult:
    cfg.validate()
    data = _as_tensors(dataset)
    n = data["reference"].shape[0]
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if which == "extractor":
        params = bundle.extractor_side_parameters()
    elif which == "inpainter":
        params = list(bundle.inpainter.parameters())
    else:
        raise ConfigError(f"unknown training target '{which}'")

    optimizer = torch.optim.Adam(params, lr=cfg.learning_rate)
    gen = torch.Generator().manual_seed(cfg.seed)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x51]))
    step = 0
    start_epoch = 0

    if resume_from:
        bundle_loaded, meta, extras = load_checkpoint(resume_from)
        for name, module in bundle.modules().items():
            module.load_state_dict(bundle_loaded.modules()[name].state_dict())
        train_meta = meta["extra"].get("train_state")
        if train_meta is None:
            raise ContractError(f"{resume_from} has no training state to resume from")
        step, start_epoch = _restore_train_state(optimizer, gen, shuffle_rng, train_meta, extras)

    logger = NdjsonLogger(out_dir / "loss.ndjson" if cfg.out_dir else None)
    losses: list[float] = []
    T = schedule.timesteps

    def checkpoint(epoch: int) -> str:
        train_meta, arrays = _pack_train_state(optimizer, gen, shuffle_rng, step, epoch)
        path = out_dir / "checkpoint.npz"
        save_checkpoint(
            path,
            bundle,
            schedule_params={
                "timesteps": T,
                "beta_start": float(schedule.betas[0]),
                "beta_end": float(schedule.betas[-1]),
            },
            extra_meta={
                "kind": which,
                "with_edge": cfg.with_edge,
                "seed": cfg.seed,
                "train_config": asdict(cfg),
                "train_state": train_meta,
            },
            extra_arrays=arrays,
        )
        return str(path)

    def one_step(idx: torch.Tensor, t_batch: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
        x_r = data["reference"][idx]
        m = data["mask"][idx]
        x_e = _edge_channel(data["edge"][idx], cfg.with_edge)
        x_a = data["asset"][idx]
        if which == "extractor":
            x_t = q_sample_batch(x_a, t_batch, eps, schedule)
            cond_maps = encode_condition(bundle.feature_encoder, x_r, m, x_e)
            sem = encode_semantics(bundle.semantic_encoder, x_r, m)
            if cfg.cond_dropout > 0:
                keep = (
                    torch.rand(sem.shape[0], generator=gen) >= cfg.cond_dropout
                ).to(sem.dtype)
                sem = sem * keep[:, None]
            eps_pred = predict_noise(
                bundle.extractor, x_t, t_batch, ConditionBundle(cond_maps, sem)
            )
        else:
            y_t = q_sample_batch(x_r, t_batch, eps, schedule)
            asset_cond = bundle.inpainter.encode_asset(x_a)
            eps_pred = predict_inpaint_noise(bundle.inpainter, y_t, t_batch, asset_cond, m)
        return ((eps_pred - eps) ** 2).mean(dim=(1, 2, 3))

    try:
        if cfg.overfit_steps > 0:
            # Capacity sanity mode: one sample, one fixed timestep, one fixed
            # noise draw, so the regression target is deterministic.
            idx = torch.zeros(1, dtype=torch.long)
            t_fixed = torch.full((1,), (T + 1) // 2, dtype=torch.long)
            eps_fixed = torch.randn(
                (1,) + tuple(data["asset"].shape[1:]), generator=gen
            )
            for _ in range(cfg.overfit_steps):
                optimizer.zero_grad(set_to_none=True)
                per = one_step(idx, t_fixed, eps_fixed)
                loss = per.mean()
                if not torch.isfinite(loss):
                    raise InvariantError(f"non-finite loss at step {step}")
                loss.backward()
                optimizer.step()
                step += 1
                losses.append(float(loss))
                logger.write({"step": step, "epoch": 0, "loss": float(loss),
                              "t": [int(t_fixed[0])],
                              "t_buckets": _timestep_buckets(t_fixed, per.detach(), T)})
            path = checkpoint(0)
            return TrainResult(path, losses, step, str(logger.path or ""))

        for epoch in range(start_epoch, cfg.epochs):
            perm = torch.from_numpy(shuffle_rng.permutation(n))
            for k in range(0, n, cfg.batch_size):
                idx = perm[k : k + cfg.batch_size]
                t_batch = torch.randint(1, T + 1, (len(idx),), generator=gen)
                eps = torch.randn(
                    (len(idx),) + tuple(data["asset"].shape[1:]), generator=gen
                )
                optimizer.zero_grad(set_to_none=True)
                per = one_step(idx, t_batch, eps)
                loss = per.mean()
                if not torch.isfinite(loss):
                    raise InvariantError(f"non-finite loss at step {step}")
                loss.backward()
                optimizer.step()
                step += 1
                losses.append(float(loss))
                logger.write({"step": step, "epoch": epoch, "loss": float(loss),
                              "t": [int(x) for x in t_batch],
                              "t_buckets": _timestep_buckets(t_batch, per.detach(), T)})
            if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                checkpoint(epoch + 1)
        path = checkpoint(cfg.epochs)
    finally:
        logger.close()
    return TrainResult(path, losses, step, str(logger.path or ""))


def train_extractor(
    dataset, bundle: ModelBundle, schedule: NoiseSchedule, cfg: TrainConfig,
    resume_from: str | None = None,
) -> TrainResult:
    """Train the conditional asset extractor (plus its condition encoders)."""
    return _train_loop("extractor", dataset, bundle, schedule, cfg, resume_from)


def train_inpainter(
    dataset, bundle: ModelBundle, schedule: NoiseSchedule, cfg: TrainConfig,
    resume_from: str | None = None,
) -> TrainResult:
    """Train the inverse-task inpainter (asset + mask -> reference)."""
    return _train_loop("inpainter", dataset, bundle, schedule, cfg, resume_from)

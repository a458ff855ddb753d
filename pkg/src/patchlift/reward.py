"""Reward-driven fine-tuning with one-step estimation and cycle consistency.

The extractor's noise prediction at a sampled timestep t yields a one-step
clean-asset estimate. When t is small enough (t <= t_threshold) that estimate
is trustworthy, so it is handed to the frozen inpainter, which reattaches it
into a noised copy of the reference at the fixed timestep t_inpaint; a second
one-step estimate recovers a clean reference, and the pixel-space discrepancy
against the original reference is the reward loss. Gradients flow through the
frozen inpainter's activations back into the extractor; the inpainter's
parameters never change.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from patchlift.diffusion import NoiseSchedule, estimate_x0, q_sample
from patchlift.errors import ConfigError, ContractError, InvariantError, ShapeError
from patchlift.models import (
    ConditionBundle,
    ModelBundle,
    bundle_checksum,
    encode_condition,
    encode_semantics,
    predict_inpaint_noise,
    predict_noise,
)
from patchlift.training import NdjsonLogger, TrainResult, _as_tensors, _edge_channel

# Estimated assets are clamped to this range before entering the inpainter;
# the margin past [0, 1] keeps boundary gradients alive early in training.
CLAMP_LO, CLAMP_HI = -0.1, 1.1


@dataclass
class RewardConfig:
    t_threshold: int = 300       # reward loss active for t <= t_threshold
    t_inpaint: int = 150         # fixed noising timestep for the inpainter input
    weight: float = 1.0          # multiplier on the cycle-consistency loss
    # Toy-scale fine-tune learning rate; full-scale reference value was 1e-7.
    learning_rate: float = 1e-5
    steps: int = 2000
    batch_size: int = 8
    seed: int = 0
    masked_cycle: bool = False   # True restricts the cycle loss to the mask
    with_edge: bool = True
    snapshot_every: int = 0      # steps between qualitative grids; 0 = off
    out_dir: str = "finetune"

    def validate(self, timesteps: int) -> None:
        if not 1 <= self.t_inpaint <= timesteps:
            raise ConfigError(f"t_inpaint {self.t_inpaint} outside [1, {timesteps}]")
        if not 1 <= self.t_threshold <= timesteps:
            raise ConfigError(f"t_threshold {self.t_threshold} outside [1, {timesteps}]")
        if self.weight < 0:
            raise ConfigError(f"reward weight must be >= 0, got {self.weight}")
        if self.learning_rate <= 0 or self.steps < 1 or self.batch_size < 1:
            raise ConfigError("learning_rate, steps, and batch_size must be positive")


@dataclass
class RewardDiagnostics:
    """Per-step record; l_reward is present exactly when the step was gated."""

    step: int
    t: int
    gated: bool
    l_train: float
    l_reward: float | None
    l_total: float

    def validate(self) -> None:
        if self.gated != (self.l_reward is not None):
            raise InvariantError(f"step {self.step}: gated flag inconsistent with l_reward")


# ---------------------------------------------------------------------------
# The estimation chain
# ---------------------------------------------------------------------------

def estimate_clean_asset(
    x_a_t: torch.Tensor, eps_pred: torch.Tensor, t: int, schedule: NoiseSchedule
) -> torch.Tensor:
    """One-step clean-asset estimate, clamped for the inpainter's benefit.

    Differentiable w.r.t. ``eps_pred``, so extractor gradients flow through.
    """
    x0 = estimate_x0(x_a_t, eps_pred, t, schedule)
    return x0.clamp(CLAMP_LO, CLAMP_HI)


def estimate_clean_reference(
    asset_estimate: torch.Tensor,
    reference: torch.Tensor,
    mask: torch.Tensor,
    schedule: NoiseSchedule,
    inpainter,
    t_inpaint: int,
    noise_seed: int | None = None,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """Reattach the estimated asset and recover a clean reference in one step.

    The reference is noised to ``t_inpaint`` with noise drawn from
    ``noise_seed`` (or supplied directly via ``noise``); the inpainter runs
    frozen, but gradients pass through its activations into
    ``asset_estimate``.
    """
    if (noise is None) == (noise_seed is None):
        raise ContractError("provide exactly one of noise_seed or noise")
    if noise is None:
        gen = torch.Generator().manual_seed(int(noise_seed))
        noise = torch.randn(reference.shape, generator=gen, dtype=reference.dtype)
    if noise.shape != reference.shape:
        raise ShapeError(f"noise shape {tuple(noise.shape)} != reference {tuple(reference.shape)}")
    y_t = q_sample(reference, t_inpaint, noise, schedule).x_t
    asset_condition = inpainter.encode_asset(asset_estimate)
    eps_pred = predict_inpaint_noise(inpainter, y_t, t_inpaint, asset_condition, mask)
    return estimate_x0(y_t, eps_pred, t_inpaint, schedule)


def cycle_loss(reference: torch.Tensor, reference_estimate: torch.Tensor,
               mask: torch.Tensor | None = None) -> torch.Tensor:
    """Pixel-space cycle-consistency: MSE over the full frame.

    Full-frame by default so background corruption by the inpainter is
    penalized too; pass ``mask`` to restrict to the asset region (ablation).
    """
    if reference.shape != reference_estimate.shape:
        raise ShapeError(
            f"shape mismatch {tuple(reference.shape)} vs {tuple(reference_estimate.shape)}"
        )
    sq = (reference - reference_estimate) ** 2
    if mask is None:
        return sq.mean()
    weight = mask.expand_as(sq)
    denom = weight.sum()
    if denom == 0:
        raise ContractError("masked cycle loss needs a non-empty mask")
    return (sq * weight).sum() / denom


def total_loss(l_train, l_reward, t: int, cfg: RewardConfig):
    """Gated objective: l_train + weight * l_reward for t <= t_threshold.

    The boundary is inclusive. Above the threshold l_reward is ignored;
    at or below it, a missing l_reward is a contract violation.
    """
    if t <= cfg.t_threshold:
        if l_reward is None:
            raise ContractError(f"t={t} is gated but no reward loss was provided")
        return l_train + cfg.weight * l_reward
    return l_train


# ---------------------------------------------------------------------------
# Fine-tuning loop
# ---------------------------------------------------------------------------

def _derived_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, step, 0x9E]).generate_state(1)[0])


def finetune(
    dataset,
    bundle: ModelBundle,
    inpainter,
    schedule: NoiseSchedule,
    cfg: RewardConfig,
) -> tuple[TrainResult, list[RewardDiagnostics]]:
    """Reward fine-tune the extractor against a frozen inpainter.

    ``bundle`` carries the extractor side (updated); ``inpainter`` is the
    separately trained inverse model (never updated; verified by checksum).
    Each step samples one shared timestep t, always computes the training
    loss, and adds the reward chain when gated.
    """
    cfg.validate(schedule.timesteps)
    data = _as_tensors(dataset)
    n = data["reference"].shape[0]
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    for p in inpainter.parameters():
        p.requires_grad_(False)
    frozen_before = _inpainter_checksum(inpainter)

    params = bundle.extractor_side_parameters()
    optimizer = torch.optim.Adam(params, lr=cfg.learning_rate)
    gen = torch.Generator().manual_seed(cfg.seed)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x51]))

    logger = NdjsonLogger(out_dir / "diagnostics.ndjson")
    diagnostics: list[RewardDiagnostics] = []
    losses: list[float] = []
    T = schedule.timesteps

    for step in range(1, cfg.steps + 1):
        idx = torch.from_numpy(
            shuffle_rng.choice(n, size=min(cfg.batch_size, n), replace=False)
        )
        x_r = data["reference"][idx]
        m = data["mask"][idx]
        x_e = _edge_channel(data["edge"][idx], cfg.with_edge)
        x_a = data["asset"][idx]

        t = int(torch.randint(1, T + 1, (1,), generator=gen))
        eps = torch.randn(x_a.shape, generator=gen)
        x_a_t = q_sample(x_a, t, eps, schedule).x_t

        cond_maps = encode_condition(bundle.feature_encoder, x_r, m, x_e)
        sem = encode_semantics(bundle.semantic_encoder, x_r, m)
        eps_pred = predict_noise(bundle.extractor, x_a_t, t, ConditionBundle(cond_maps, sem))
        l_train = ((eps_pred - eps) ** 2).mean()

        gated = t <= cfg.t_threshold
        l_reward = None
        if gated:
            asset_estimate = estimate_clean_asset(x_a_t, eps_pred, t, schedule)
            reference_estimate = estimate_clean_reference(
                asset_estimate, x_r, m, schedule, inpainter, cfg.t_inpaint,
                noise_seed=_derived_seed(cfg.seed, step),
            )
            l_reward = cycle_loss(x_r, reference_estimate, mask=m if cfg.masked_cycle else None)
        l_total = total_loss(l_train, l_reward, t, cfg)

        if not torch.isfinite(l_total):
            raise InvariantError(f"non-finite loss at fine-tune step {step}")
        optimizer.zero_grad(set_to_none=True)
        l_total.backward()
        optimizer.step()

        record = RewardDiagnostics(
            step=step, t=t, gated=gated,
            l_train=float(l_train),
            l_reward=None if l_reward is None else float(l_reward),
            l_total=float(l_total),
        )
        record.validate()
        diagnostics.append(record)
        losses.append(record.l_total)
        logger.write({k: v for k, v in asdict(record).items()})

        if cfg.snapshot_every and step % cfg.snapshot_every == 0 and gated:
            _write_snapshot(out_dir, step, x_r, asset_estimate, reference_estimate)

    logger.close()

    if _inpainter_checksum(inpainter) != frozen_before:
        raise InvariantError("inpainter parameters changed during fine-tuning")

    from patchlift.models import save_checkpoint

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
            "kind": "extractor",
            "with_edge": cfg.with_edge,
            "seed": cfg.seed,
            "reward_config": asdict(cfg),
            "reward_finetuned": True,
        },
    )
    result = TrainResult(str(path), losses, cfg.steps, str(logger.path or ""))
    return result, diagnostics


def _inpainter_checksum(inpainter) -> str:
    import hashlib

    h = hashlib.sha256()
    for key, tensor in sorted(inpainter.state_dict().items()):
        h.update(key.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def _write_snapshot(out_dir: Path, step: int, reference, asset_estimate, reference_estimate) -> None:
    from patchlift.report import save_image_row

    grid_dir = out_dir / "snapshots"
    grid_dir.mkdir(exist_ok=True)
    save_image_row(
        grid_dir / f"step_{step:06d}.png",
        [reference[0], asset_estimate[0].clamp(0, 1), reference_estimate[0].clamp(0, 1)],
        titles=["reference", "asset estimate", "cycle reconstruction"],
    )


def load_diagnostics(path: str | Path) -> list[RewardDiagnostics]:
    records = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        raw = json.loads(line)
        records.append(RewardDiagnostics(**raw))
    return records

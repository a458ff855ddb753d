"""DDPM/DDIM arithmetic: schedules, forward noising, one-step clean-image
estimation, and a deterministic-capable reverse sampler.

The schedule is kept in float64 so cumulative products and the one-step
inversion stay exact to tolerances far below float32 training noise. All
elementwise operations take scalar coefficients from the schedule and apply
plain arithmetic, so they work identically on numpy arrays and torch tensors
(and stay differentiable for the latter).

Timesteps are 1-based: t runs over [1, T], and ``alpha_bar(t)`` is the
cumulative product of the first t alphas. ``alpha_bar(0)`` is defined as 1
(the clean-data endpoint used by the sampler).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from patchlift.errors import ConfigError, ContractError, ShapeError


@dataclass(frozen=True)
class NoiseSchedule:
    """Beta/alpha tables for T discrete timesteps; the single source of all
    diffusion coefficients."""

    betas: np.ndarray        # (T,) float64
    alphas: np.ndarray       # 1 - betas
    alpha_bars: np.ndarray   # cumulative product of alphas

    @property
    def timesteps(self) -> int:
        return len(self.betas)

    def _check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.timesteps:
            raise ContractError(f"timestep {t} outside [1, {self.timesteps}]")
        return t

    def alpha_bar(self, t: int) -> float:
        if int(t) == 0:
            return 1.0
        return float(self.alpha_bars[self._check_t(t) - 1])

    def noising_coeffs(self, t: int) -> tuple[float, float]:
        """(sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t)) as python floats."""
        ab = self.alpha_bar(t)
        return math.sqrt(ab), math.sqrt(1.0 - ab)


def linear_beta_schedule(
    timesteps: int, beta_start: float = 1e-4, beta_end: float = 0.02
) -> NoiseSchedule:
    """Linearly spaced betas; validates the schedule invariants."""
    if timesteps < 1:
        raise ConfigError(f"timesteps must be >= 1, got {timesteps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    if alpha_bars[-1] <= 0.0 or np.any(np.diff(alpha_bars) >= 0):
        raise ConfigError("alpha_bars must stay in (0, 1) and strictly decrease")
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars)


@dataclass
class NoisyState:
    """A forward-noised image along with what produced it."""

    x_t: object   # array, same type as the inputs
    t: int
    eps: object   # the injected noise (kept for training targets)


def _check_shapes(a, b, names: str) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"{names}: {tuple(a.shape)} vs {tuple(b.shape)}")


def q_sample(x0, t: int, eps, schedule: NoiseSchedule) -> NoisyState:
    """Forward noising: x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.

    The noise is caller-supplied so reproducibility is the caller's choice.
    """
    _check_shapes(x0, eps, "x0 vs eps")
    a, b = schedule.noising_coeffs(t)
    return NoisyState(x_t=a * x0 + b * eps, t=int(t), eps=eps)


def q_sample_batch(x0, t_batch, eps, schedule: NoiseSchedule):
    """Vectorized forward noising for per-sample timesteps.

    ``t_batch`` is an integer array/tensor of shape (B,); broadcasting applies
    the per-sample coefficients over trailing dimensions. Agrees with
    :func:`q_sample` applied row by row.
    """
    import torch

    _check_shapes(x0, eps, "x0 vs eps")
    t = torch.as_tensor(t_batch, dtype=torch.long)
    if t.min() < 1 or t.max() > schedule.timesteps:
        raise ContractError(f"timesteps outside [1, {schedule.timesteps}]")
    ab = torch.from_numpy(schedule.alpha_bars).to(x0.dtype)[t - 1]
    view = (-1,) + (1,) * (x0.ndim - 1)
    a = ab.sqrt().view(view)
    b = (1.0 - ab).sqrt().view(view)
    return a * x0 + b * eps


def epsilon_loss(eps_pred, eps):
    """Mean squared error over all elements; zero iff the inputs are equal."""
    _check_shapes(eps_pred, eps, "eps_pred vs eps")
    return ((eps_pred - eps) ** 2).mean()


def estimate_x0(x_t, eps_pred, t: int, schedule: NoiseSchedule):
    """One-step clean-image estimate: (x_t - sqrt(1-ab_t) eps) / sqrt(ab_t).

    No clamping here; range handling is the caller's decision.
    """
    _check_shapes(x_t, eps_pred, "x_t vs eps_pred")
    a, b = schedule.noising_coeffs(t)
    return (x_t - b * eps_pred) / a


def ddim_timesteps(schedule: NoiseSchedule, steps: int) -> list[int]:
    """Decreasing timestep subsequence from T to 1 with ``steps`` entries."""
    T = schedule.timesteps
    if not 1 <= steps <= T:
        raise ConfigError(f"steps must be in [1, {T}], got {steps}")
    ts = np.unique(np.round(np.linspace(T, 1, steps)).astype(int))[::-1]
    return [int(t) for t in ts]


def ddim_sample(
    denoise_fn,
    condition,
    schedule: NoiseSchedule,
    steps: int,
    eta: float = 0.0,
    seed: int = 0,
    *,
    shape: tuple[int, ...] | None = None,
    clip_x0: bool = True,
):
    """Reverse sampling; deterministic for eta=0 and a fixed seed/condition.

    ``denoise_fn(x_t, t, condition) -> eps`` supplies the noise prediction.
    ``shape`` defaults to a 3-channel image inferred from the condition's
    finest feature map. Output is in model space; callers clamp to [0, 1]
    for export. ``clip_x0`` clips the per-step clean estimate to [0, 1],
    which stabilizes early sampling and does not affect oracle denoisers.
    """
    import torch

    if not 0.0 <= eta <= 1.0:
        raise ConfigError(f"eta must be in [0, 1], got {eta}")
    if shape is None:
        if condition is None or not getattr(condition, "lowlevel", None):
            raise ContractError("ddim_sample needs an explicit shape without a condition")
        finest = condition.lowlevel[0]
        shape = (finest.shape[0], 3, finest.shape[2], finest.shape[3])

    gen = torch.Generator().manual_seed(int(seed))
    x = torch.randn(*shape, generator=gen)
    ts = ddim_timesteps(schedule, steps)
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        eps = denoise_fn(x, t, condition)
        x0_hat = estimate_x0(x, eps, t, schedule)
        if clip_x0:
            x0_hat = x0_hat.clamp(0.0, 1.0)
        ab_prev = schedule.alpha_bar(t_prev)
        ab_t = schedule.alpha_bar(t)
        sigma = eta * math.sqrt((1 - ab_prev) / (1 - ab_t)) * math.sqrt(1 - ab_t / ab_prev)
        dir_coeff = math.sqrt(max(0.0, 1 - ab_prev - sigma**2))
        x = math.sqrt(ab_prev) * x0_hat + dir_coeff * eps
        if sigma > 0:
            x = x + sigma * torch.randn(*shape, generator=gen)
    return x

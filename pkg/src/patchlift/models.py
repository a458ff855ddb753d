"""Toy-scale conditional denoisers and encoders.

Four networks cooperate:

* ``FeatureEncoder`` turns (reference, mask, edge) into per-resolution
  low-level feature maps (spatial conditioning).
* ``SemanticEncoder`` maps the masked reference to a global embedding
  (non-spatial conditioning).
* the extractor ``Denoiser`` predicts the noise on the flat asset, fusing
  low-level features by channel concatenation at matching resolutions and the
  semantic embedding by per-level scale-shift modulation.
* ``InpaintModel`` performs the inverse task: denoise the reference frame
  given the mask and features of the (estimated) asset, encoded by its own
  feature encoder.

All networks are plain float32 conv stacks with three resolution levels, so
inputs must have sides divisible by 4. Checkpoints are ``.npz`` archives of
named parameter arrays plus one JSON config block.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from patchlift import __version__
from patchlift.errors import ContractError, DataError, ShapeError

CHECKPOINT_FORMAT = 1
LEVELS = 3


@dataclass
class ConditionBundle:
    """Per-sample conditioning for a denoiser forward pass."""

    lowlevel: list[torch.Tensor] = field(default_factory=list)  # finest first
    semantic: torch.Tensor | None = None


def _groups(channels: int) -> int:
    return math.gcd(8, channels)


class SinusoidalTimeEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        if dim % 2:
            raise ContractError(f"time embedding dim must be even, got {dim}")
        self.dim = dim

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / (half - 1)
        )
        args = t[:, None] * freqs[None, :]
        return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ConvBlock(nn.Module):
    """conv-norm-act x2 with scale-shift modulation from an embedding."""

    def __init__(self, c_in: int, c_out: int, emb_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm1 = nn.GroupNorm(_groups(c_out), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.norm2 = nn.GroupNorm(_groups(c_out), c_out)
        self.film = nn.Linear(emb_dim, 2 * c_out)

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = F.silu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        scale, shift = self.film(emb)[:, :, None, None].chunk(2, dim=1)
        return F.silu(h * (1.0 + scale) + shift)


class PlainBlock(nn.Module):
    """conv-norm-act x2 without modulation (for condition encoders)."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm1 = nn.GroupNorm(_groups(c_out), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.norm2 = nn.GroupNorm(_groups(c_out), c_out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.silu(self.norm2(self.conv2(F.silu(self.norm1(self.conv1(x))))))


class FeatureEncoder(nn.Module):
    """Per-resolution low-level feature maps at the denoiser's three levels."""

    def __init__(self, in_channels: int, width: int = 16):
        super().__init__()
        self.in_channels = in_channels
        self.width = width
        self.block0 = PlainBlock(in_channels, width)
        self.block1 = PlainBlock(width, 2 * width)
        self.block2 = PlainBlock(2 * width, 3 * width)

    @property
    def out_channels(self) -> tuple[int, int, int]:
        return (self.width, 2 * self.width, 3 * self.width)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        f0 = self.block0(x)
        f1 = self.block1(F.avg_pool2d(f0, 2))
        f2 = self.block2(F.avg_pool2d(f1, 2))
        return [f0, f1, f2]


class SemanticEncoder(nn.Module):
    """Global embedding of the masked reference (mask applied internally)."""

    def __init__(self, embed_dim: int = 128, width: int = 16):
        super().__init__()
        self.embed_dim = embed_dim
        self.net = nn.Sequential(
            nn.Conv2d(3, width, 3, stride=2, padding=1),
            nn.GroupNorm(_groups(width), width),
            nn.SiLU(),
            nn.Conv2d(width, 2 * width, 3, stride=2, padding=1),
            nn.GroupNorm(_groups(2 * width), 2 * width),
            nn.SiLU(),
            nn.Conv2d(2 * width, 4 * width, 3, stride=2, padding=1),
            nn.GroupNorm(_groups(4 * width), 4 * width),
            nn.SiLU(),
        )
        self.proj = nn.Linear(4 * width, embed_dim)

    def forward(self, masked_image: torch.Tensor) -> torch.Tensor:
        h = self.net(masked_image)
        return self.proj(h.mean(dim=(2, 3)))


class Denoiser(nn.Module):
    """Small encoder-decoder noise predictor with pluggable conditioning.

    ``cond_channels`` declares the per-level feature-map channels this
    denoiser expects to concatenate (finest level first); ``semantic_dim``
    enables scale-shift injection of a global embedding at every level.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int = 3,
        base_width: int = 32,
        cond_channels: tuple[int, int, int] | None = None,
        semantic_dim: int | None = None,
        time_dim: int = 64,
    ):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.base_width = base_width
        self.cond_channels = tuple(cond_channels) if cond_channels else None
        self.semantic_dim = semantic_dim
        self.time_dim = time_dim

        w = base_width
        c = self.cond_channels or (0, 0, 0)
        self.time_embed = SinusoidalTimeEmbedding(time_dim)
        self.time_mlp = nn.Sequential(nn.Linear(time_dim, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim))
        self.semantic_proj = nn.Linear(semantic_dim, time_dim) if semantic_dim else None

        self.enc0 = ConvBlock(in_channels + c[0], w, time_dim)
        self.enc1 = ConvBlock(w + c[1], 2 * w, time_dim)
        self.enc2 = ConvBlock(2 * w + c[2], 3 * w, time_dim)
        self.dec1 = ConvBlock(3 * w + 2 * w, 2 * w, time_dim)
        self.dec0 = ConvBlock(2 * w + w, w, time_dim)
        self.head = nn.Conv2d(w, out_channels, 3, padding=1)
        # Damped head keeps early training stable while leaving the output
        # sensitive to its inputs (unlike a zero init).
        with torch.no_grad():
            self.head.weight.mul_(0.1)
            self.head.bias.zero_()

    def _check_condition(self, x: torch.Tensor, cond: ConditionBundle | None) -> ConditionBundle:
        cond = cond or ConditionBundle()
        if self.cond_channels is not None:
            if len(cond.lowlevel) != LEVELS:
                raise ContractError(
                    f"denoiser expects {LEVELS} low-level feature maps, got {len(cond.lowlevel)}"
                )
            for level, (fmap, channels) in enumerate(zip(cond.lowlevel, self.cond_channels)):
                expected = (x.shape[0], channels, x.shape[2] >> level, x.shape[3] >> level)
                if tuple(fmap.shape) != expected:
                    raise ShapeError(
                        f"condition level {level}: expected {expected}, got {tuple(fmap.shape)}"
                    )
        if self.semantic_dim is not None:
            if cond.semantic is None:
                raise ContractError("denoiser configured for a semantic embedding but none given")
            if tuple(cond.semantic.shape) != (x.shape[0], self.semantic_dim):
                raise ShapeError(
                    f"semantic embedding: expected {(x.shape[0], self.semantic_dim)},"
                    f" got {tuple(cond.semantic.shape)}"
                )
        return cond

    def forward(self, x: torch.Tensor, t, cond: ConditionBundle | None = None) -> torch.Tensor:
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ShapeError(f"input sides must be divisible by 4, got {tuple(x.shape)}")
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} input channels, got {x.shape[1]}")
        cond = self._check_condition(x, cond)

        if isinstance(t, (int, np.integer)):
            t = torch.full((x.shape[0],), float(t), dtype=x.dtype, device=x.device)
        else:
            t = torch.as_tensor(t, dtype=x.dtype, device=x.device).reshape(x.shape[0])
        emb = self.time_mlp(self.time_embed(t))
        if self.semantic_proj is not None:
            emb = emb + self.semantic_proj(cond.semantic)

        def cat_cond(h: torch.Tensor, level: int) -> torch.Tensor:
            if self.cond_channels is None:
                return h
            return torch.cat([h, cond.lowlevel[level]], dim=1)

        h0 = self.enc0(cat_cond(x, 0), emb)
        h1 = self.enc1(cat_cond(F.avg_pool2d(h0, 2), 1), emb)
        h2 = self.enc2(cat_cond(F.avg_pool2d(h1, 2), 2), emb)
        d1 = self.dec1(torch.cat([F.interpolate(h2, scale_factor=2, mode="nearest"), h1], dim=1), emb)
        d0 = self.dec0(torch.cat([F.interpolate(d1, scale_factor=2, mode="nearest"), h0], dim=1), emb)
        return self.head(d0)


class InpaintModel(nn.Module):
    """Inverse-task model: reattach an asset into the masked reference frame.

    Bundles its own asset feature encoder with a 4-channel denoiser
    (noisy reference RGB + mask).
    """

    def __init__(self, base_width: int = 32, cond_width: int = 16, time_dim: int = 64):
        super().__init__()
        self.asset_encoder = FeatureEncoder(3, cond_width)
        self.denoiser = Denoiser(
            in_channels=4,
            out_channels=3,
            base_width=base_width,
            cond_channels=self.asset_encoder.out_channels,
            semantic_dim=None,
            time_dim=time_dim,
        )

    def encode_asset(self, asset: torch.Tensor) -> list[torch.Tensor]:
        return self.asset_encoder(asset)

    def forward(self, y_t: torch.Tensor, t, asset_condition: list[torch.Tensor], mask: torch.Tensor) -> torch.Tensor:
        if mask.shape != (y_t.shape[0], 1, y_t.shape[2], y_t.shape[3]):
            raise ShapeError(f"mask must be (B,1,H,W) matching y_t, got {tuple(mask.shape)}")
        x = torch.cat([y_t, mask], dim=1)
        return self.denoiser(x, t, ConditionBundle(lowlevel=asset_condition))


# ---------------------------------------------------------------------------
# Conditioning operations
# ---------------------------------------------------------------------------

def _as_binary(mask: torch.Tensor) -> torch.Tensor:
    if not torch.all((mask == 0) | (mask == 1)):
        raise ContractError("mask must be binary (values in {0, 1})")
    return mask


def encode_condition(
    feature_encoder: FeatureEncoder,
    reference: torch.Tensor,
    mask: torch.Tensor,
    edge: torch.Tensor,
) -> list[torch.Tensor]:
    """Low-level feature maps from channel-concatenated (reference, mask, edge)."""
    if reference.shape[2:] != mask.shape[2:] or reference.shape[2:] != edge.shape[2:]:
        raise ShapeError(
            f"resolution mismatch: reference {tuple(reference.shape)}, "
            f"mask {tuple(mask.shape)}, edge {tuple(edge.shape)}"
        )
    _as_binary(mask)
    return feature_encoder(torch.cat([reference, mask, edge], dim=1))


def encode_semantics(
    semantic_encoder: SemanticEncoder, reference: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """Embed the masked reference; masking happens here, not at the caller."""
    _as_binary(mask)
    return semantic_encoder(mask * reference)


def predict_noise(
    extractor: Denoiser, x_t: torch.Tensor, t, cond: ConditionBundle
) -> torch.Tensor:
    """Noise prediction of the asset denoiser under full conditioning."""
    if cond is None:
        raise ContractError("extractor requires a condition bundle")
    return extractor(x_t, t, cond)


def predict_inpaint_noise(
    inpainter: InpaintModel,
    y_t: torch.Tensor,
    t,
    asset_condition: list[torch.Tensor],
    mask: torch.Tensor,
) -> torch.Tensor:
    """Noise prediction over the reference frame, conditioned on the asset."""
    if not asset_condition:
        raise ContractError("inpainter requires asset condition features")
    return inpainter(y_t, t, asset_condition, mask)


# ---------------------------------------------------------------------------
# The four-network bundle and its checkpoints
# ---------------------------------------------------------------------------

class ModelBundle:
    """feature/semantic encoders + extractor + inpainter, checkpointed together."""

    COMPONENTS = ("feature_encoder", "semantic_encoder", "extractor", "inpainter")

    def __init__(self, model_cfg: dict):
        self.config = {
            "base_width": int(model_cfg.get("base_width", 32)),
            "cond_width": int(model_cfg.get("cond_width", 16)),
            "semantic_dim": int(model_cfg.get("semantic_dim", 128)),
            "time_dim": int(model_cfg.get("time_dim", 64)),
        }
        c = self.config
        self.feature_encoder = FeatureEncoder(5, c["cond_width"])
        self.semantic_encoder = SemanticEncoder(c["semantic_dim"], c["cond_width"])
        self.extractor = Denoiser(
            in_channels=3,
            out_channels=3,
            base_width=c["base_width"],
            cond_channels=self.feature_encoder.out_channels,
            semantic_dim=c["semantic_dim"],
            time_dim=c["time_dim"],
        )
        self.inpainter = InpaintModel(c["base_width"], c["cond_width"], c["time_dim"])

    def modules(self) -> dict[str, nn.Module]:
        return {name: getattr(self, name) for name in self.COMPONENTS}

    def extractor_side_parameters(self) -> list[torch.Tensor]:
        """Everything the reward fine-tune is allowed to update."""
        params: list[torch.Tensor] = []
        for name in ("feature_encoder", "semantic_encoder", "extractor"):
            params.extend(getattr(self, name).parameters())
        return params

    def eval(self) -> "ModelBundle":
        for module in self.modules().values():
            module.eval()
        return self


def create_bundle(model_cfg: dict, seed: int) -> ModelBundle:
    """Construct a freshly initialized bundle; deterministic in ``seed``."""
    torch.manual_seed(int(seed))
    return ModelBundle(model_cfg)


def save_checkpoint(
    path: str | Path,
    bundle: ModelBundle,
    schedule_params: dict,
    extra_meta: dict | None = None,
    extra_arrays: dict[str, np.ndarray] | None = None,
) -> None:
    """Write a single-archive checkpoint: parameter arrays + a config block."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    for component, module in bundle.modules().items():
        for key, tensor in module.state_dict().items():
            arrays[f"param/{component}/{key}"] = tensor.detach().cpu().numpy()
    meta = {
        "format": CHECKPOINT_FORMAT,
        "package_version": __version__,
        "model": bundle.config,
        "schedule": dict(schedule_params),
        "extra": dict(extra_meta or {}),
    }
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    if extra_arrays:
        arrays.update(extra_arrays)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[ModelBundle, dict, dict[str, np.ndarray]]:
    """Load a checkpoint; returns (bundle, meta, non-parameter arrays)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    with np.load(path) as archive:
        data = {k: archive[k] for k in archive.files}
    if "__meta__" not in data:
        raise DataError(f"{path} is not a model checkpoint (missing config block)")
    meta = json.loads(bytes(data.pop("__meta__")).decode())
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"unsupported checkpoint format {meta.get('format')} in {path}")
    bundle = ModelBundle(meta["model"])
    states: dict[str, dict[str, torch.Tensor]] = {name: {} for name in ModelBundle.COMPONENTS}
    extras: dict[str, np.ndarray] = {}
    for key, value in data.items():
        if key.startswith("param/"):
            _, component, param_key = key.split("/", 2)
            states[component][param_key] = torch.from_numpy(value.copy())
        else:
            extras[key] = value
    for component, module in bundle.modules().items():
        module.load_state_dict(states[component])
    return bundle, meta, extras


def bundle_checksum(bundle: ModelBundle, components: tuple[str, ...] | None = None) -> str:
    """Digest of selected components' parameters (frozenness checks)."""
    import hashlib

    h = hashlib.sha256()
    for name in components or ModelBundle.COMPONENTS:
        module = getattr(bundle, name)
        for key, tensor in sorted(module.state_dict().items()):
            h.update(key.encode())
            h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()

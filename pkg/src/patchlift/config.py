"""Plain-text key-value configuration with dotted sections.

A config file is a sequence of ``section.key = value`` lines; ``#`` starts a
comment. Values are parsed as Python literals where possible (ints, floats,
booleans) and kept as strings otherwise. Precedence is
CLI overrides > config file > built-in defaults, and every resolved config can
be written back out as a snapshot so any artifact is reconstructible without
shell history.
"""

from __future__ import annotations

import ast
import hashlib
from pathlib import Path

from patchlift.errors import ConfigError

# One flat registry of every knob, grouped by dotted section. Values double as
# defaults and as type witnesses: a file/override value must coerce to the
# default's type.
DEFAULTS: dict[str, object] = {
    # -- dataset generation -------------------------------------------------
    "data.root": "data",              # dataset directory, relative to --out
    "data.image_size": 64,            # square side; renders and assets share it
    "data.n_samples": 2000,
    "data.test_fraction": 0.10,
    "data.pattern_dir": "",           # optional directory of user PNG assets
    "data.families": "stripes,blobs,rings,glyphs",
    "data.surface_kinds": "plane,cylinder,sphere_cap",
    "data.curvature_min": 0.15,
    "data.curvature_max": 0.80,
    "data.extent": 1.0,               # world-unit size of the asset patch
    "data.azimuth_limit": 0.90,       # radians; sampled in [-limit, limit]
    "data.elevation_max": 0.90,       # radians; sampled in [0, max]
    "data.distance_min": 2.2,
    "data.distance_max": 3.2,
    "data.fov_min": 0.80,
    "data.fov_max": 1.00,
    "data.ambient_min": 0.55,
    "data.ambient_max": 0.85,
    "data.dir_light_max": 1,          # number of directional lights, 0..max
    "data.dir_intensity_max": 0.45,
    "data.occluder_p0": 0.5,          # P(no occluder); P(1) = occluder_p1
    "data.occluder_p1": 0.3,
    "data.occluder_coverage_max": 0.30,
    # -- diffusion schedule --------------------------------------------------
    "diffusion.timesteps": 1000,
    "diffusion.beta_start": 1e-4,
    "diffusion.beta_end": 0.02,
    # -- network sizes -------------------------------------------------------
    "model.base_width": 32,
    "model.cond_width": 16,
    "model.semantic_dim": 128,
    "model.time_dim": 64,
    # -- base training -------------------------------------------------------
    # Toy-scale learning rate; the reference full-scale setup used 1e-6.
    "train.learning_rate": 1e-4,
    "train.batch_size": 16,
    "train.epochs": 30,
    "train.seed": 0,
    "train.checkpoint_every": 0,      # epochs between extra checkpoints; 0 = final only
    "train.with_edge": True,          # False zeroes the edge channel (ablation)
    "train.cond_dropout": 0.1,        # P(zero the semantic embedding) per sample
    # -- reward fine-tuning --------------------------------------------------
    "reward.t_threshold": 300,        # reward loss active for t <= threshold
    "reward.t_inpaint": 150,          # fixed noising timestep for the inpainter input
    "reward.weight": 1.0,             # multiplier on the cycle-consistency loss
    # Toy-scale fine-tune learning rate; full-scale reference value was 1e-7.
    "reward.learning_rate": 1e-5,
    "reward.steps": 2000,
    "reward.batch_size": 8,
    "reward.seed": 0,
    "reward.masked_cycle": False,     # True restricts the cycle loss to the mask
    "reward.snapshot_every": 0,       # steps between qualitative grids; 0 = off
    # -- evaluation ----------------------------------------------------------
    "eval.ddim_steps": 50,
    "eval.eta": 0.0,
    "eval.seed": 0,
    "eval.batch_size": 16,
    "eval.max_samples": 0,            # cap on test ids; 0 = evaluate all
    "eval.crop_fraction": 0.875,      # center crop before set-distance features
    "eval.kid_block_size": 50,
    "eval.feature_seed": 0,
    "eval.feature_epochs": 3,
    "eval.feature_bank_per_family": 256,
}


def _parse_value(text: str) -> object:
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text.strip("\"'")


def _coerce(key: str, value: object) -> object:
    """Coerce ``value`` to the type of the registered default for ``key``."""
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"config key '{key}' expects a boolean, got {value!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key '{key}' expects an integer, got {value!r}")
        if isinstance(value, float) and value != int(value):
            raise ConfigError(f"config key '{key}' expects an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key '{key}' expects a number, got {value!r}")
        return float(value)
    return str(value)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    """Parse dotted ``key = value`` lines into a dict (keys not yet validated)."""
    out: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = _parse_value(value)
    return out


def load_config_file(path: str | Path) -> dict[str, object]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), source=str(path))


def parse_overrides(pairs: list[str] | tuple[str, ...]) -> dict[str, object]:
    """Parse ``key=value`` override strings (the CLI's ``--set`` arguments)."""
    out: dict[str, object] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        out[key.strip()] = _parse_value(value)
    return out


def resolve_config(
    file_values: dict[str, object] | None = None,
    overrides: dict[str, object] | None = None,
) -> dict[str, object]:
    """Merge defaults, file values, and overrides; reject unknown keys."""
    resolved = dict(DEFAULTS)
    for layer in (file_values or {}, overrides or {}):
        for key, value in layer.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key '{key}'")
            resolved[key] = _coerce(key, value)
    return resolved


def format_config(cfg: dict[str, object], header: str | None = None) -> str:
    lines = []
    if header:
        lines.extend(f"# {part}" for part in header.splitlines())
    section = None
    for key in sorted(cfg):
        current = key.split(".", 1)[0]
        if current != section:
            if section is not None:
                lines.append("")
            section = current
        value = cfg[key]
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, str):
            text = value
        else:
            text = repr(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def write_snapshot(cfg: dict[str, object], path: str | Path, header: str | None = None) -> None:
    """Write the resolved config next to a run's outputs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_config(cfg, header=header))


def config_hash(cfg: dict[str, object], section: str | None = None) -> str:
    """Stable short hash of a config (optionally restricted to one section)."""
    subset = {
        k: v for k, v in sorted(cfg.items())
        if section is None or k.startswith(section + ".")
    }
    blob = format_config(subset).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def section(cfg: dict[str, object], name: str) -> dict[str, object]:
    """Return ``{key-without-prefix: value}`` for one dotted section."""
    prefix = name + "."
    return {k[len(prefix):]: v for k, v in cfg.items() if k.startswith(prefix)}

"""Procedural flat-asset bank.

Assets are square RGB arrays in [0, 1] drawn from a handful of visually
distinct pattern families (stripes, blobs, rings, glyphs). Every asset is a
pure function of (family, size, seed), so the bank never needs to be stored.
A directory of user PNGs can be mixed in as an extra "user" family.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from patchlift.errors import ConfigError, DataError

FAMILIES = ("stripes", "blobs", "rings", "glyphs")


@dataclass
class AssetImage:
    """A flat, front-view pattern: the extraction target."""

    pixels: np.ndarray  # (S, S, 3) float32 in [0, 1]
    id: str

    def __post_init__(self) -> None:
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3 or p.shape[0] != p.shape[1]:
            raise DataError(f"asset '{self.id}' must be square RGB, got shape {p.shape}")
        if p.min() < 0.0 or p.max() > 1.0:
            raise DataError(f"asset '{self.id}' has values outside [0, 1]")

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    # Pixel centers in [0, 1]^2; x along columns, y along rows.
    c = (np.arange(size) + 0.5) / size
    return np.meshgrid(c, c, indexing="xy")


def _palette(rng: np.random.Generator, n: int) -> np.ndarray:
    # Saturated-ish colors away from pure black/white so shading stays visible.
    return rng.uniform(0.08, 0.95, size=(n, 3))


def _stripes(size: int, rng: np.random.Generator) -> np.ndarray:
    x, y = _grid(size)
    angle = rng.uniform(0.0, np.pi)
    freq = rng.uniform(1.5, 4.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    wave = np.sin(2 * np.pi * freq * (np.cos(angle) * x + np.sin(angle) * y) + phase)
    softness = rng.uniform(2.0, 8.0)
    blend = 0.5 * (1.0 + np.tanh(softness * wave))
    c0, c1 = _palette(rng, 2)
    return blend[..., None] * c1 + (1.0 - blend[..., None]) * c0


def _blobs(size: int, rng: np.random.Generator) -> np.ndarray:
    x, y = _grid(size)
    base, *colors = _palette(rng, 1 + rng.integers(4, 8))
    img = np.tile(base, (size, size, 1))
    for color in colors:
        cx, cy = rng.uniform(0.1, 0.9, size=2)
        radius = rng.uniform(0.08, 0.22)
        bump = np.exp(-(((x - cx) ** 2 + (y - cy) ** 2) / (2 * radius**2)))
        img = img * (1.0 - bump[..., None]) + bump[..., None] * color
    return img


def _rings(size: int, rng: np.random.Generator) -> np.ndarray:
    x, y = _grid(size)
    cx, cy = rng.uniform(0.3, 0.7, size=2)
    r = np.sqrt((x - cx) ** 2 + (y - cy) ** 2)
    freq = rng.uniform(2.0, 5.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    wave = 0.5 * (1.0 + np.sin(2 * np.pi * freq * r + phase))
    bands = np.floor(wave * 3).clip(0, 2).astype(int)
    colors = _palette(rng, 3)
    return colors[bands]


def _glyphs(size: int, rng: np.random.Generator) -> np.ndarray:
    # Blocky letter-like composites: a background plus 3-5 axis-aligned bars.
    bg, fg = _palette(rng, 2)
    img = np.tile(bg, (size, size, 1))
    n_bars = int(rng.integers(3, 6))
    for _ in range(n_bars):
        horizontal = rng.random() < 0.5
        thick = max(2, int(rng.uniform(0.08, 0.2) * size))
        span0 = int(rng.uniform(0.05, 0.4) * size)
        span1 = int(rng.uniform(0.6, 0.95) * size)
        pos = int(rng.uniform(0.1, 0.9) * size)
        lo, hi = max(0, pos - thick // 2), min(size, pos + (thick + 1) // 2)
        if horizontal:
            img[lo:hi, span0:span1] = fg
        else:
            img[span0:span1, lo:hi] = fg
    return img


_GENERATORS = {
    "stripes": _stripes,
    "blobs": _blobs,
    "rings": _rings,
    "glyphs": _glyphs,
}


def make_asset(family: str, size: int, seed: int) -> AssetImage:
    """Generate one asset; deterministic in (family, size, seed)."""
    if family not in _GENERATORS:
        raise ConfigError(f"unknown pattern family '{family}' (choose from {FAMILIES})")
    rng = _rng(seed, FAMILIES.index(family))
    img = np.clip(_GENERATORS[family](size, rng), 0.0, 1.0).astype(np.float32)
    return AssetImage(pixels=img, id=f"{family}-{seed:06d}")


class PatternBank:
    """Deterministic source of assets for dataset generation and metrics.

    ``pattern_dir`` mixes user-supplied PNGs (resized to ``size``) into the
    rotation; procedural families otherwise cover everything.
    """

    def __init__(self, size: int, families: tuple[str, ...] = FAMILIES, pattern_dir: str = ""):
        if not families:
            raise ConfigError("pattern bank needs at least one family")
        for f in families:
            if f not in _GENERATORS:
                raise ConfigError(f"unknown pattern family '{f}' (choose from {FAMILIES})")
        self.size = size
        self.families = tuple(families)
        self.user_images: list[AssetImage] = []
        if pattern_dir:
            self.user_images = _load_user_images(pattern_dir, size)

    def draw(self, seed: int) -> tuple[AssetImage, str]:
        """Draw (asset, family) for one sample seed."""
        rng = _rng(seed, 9001)
        n_choices = len(self.families) + (1 if self.user_images else 0)
        pick = int(rng.integers(n_choices))
        if pick == len(self.families):
            asset = self.user_images[int(rng.integers(len(self.user_images)))]
            return asset, "user"
        family = self.families[pick]
        return make_asset(family, self.size, seed), family


def _load_user_images(pattern_dir: str, size: int) -> list[AssetImage]:
    root = Path(pattern_dir)
    if not root.is_dir():
        raise ConfigError(f"pattern_dir is not a directory: {pattern_dir}")
    images = []
    for path in sorted(root.glob("*.png")):
        with Image.open(path) as im:
            im = im.convert("RGB").resize((size, size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 255.0
        images.append(AssetImage(pixels=arr, id=f"user-{path.stem}"))
    if not images:
        raise ConfigError(f"pattern_dir contains no PNG files: {pattern_dir}")
    return images

"""CPU renderer producing paired (reference, mask) images.

Rendering is per-pixel inverse UV mapping: each pixel's ray is intersected
with the textured patch, the asset is bilinearly sampled at the hit UV, and
the result is Lambert-shaded and composited over a procedural background.

Anti-aliasing contract: pixel coverage is measured on a fixed 2x2 subsample
grid (offsets 0.25/0.75). Fully covered pixels are shaded once at the pixel
center; partially covered (boundary) pixels average their four subsamples;
the binary mask is coverage >= 0.5. Occluders are rasterized at pixel centers
only, so ``mask_with_occluders == mask_without & ~occluded`` holds exactly.
"""

from __future__ import annotations

import numpy as np

from patchlift.errors import DegenerateViewError, ShapeError
from patchlift.synthdata.patterns import AssetImage
from patchlift.synthdata.scene import (
    CameraSpec,
    LightSpec,
    OccluderSpec,
    SurfaceSpec,
    intersect,
    pixel_rays,
)

# Subsample offsets (in pixels) used for coverage; part of the mask contract.
SUBSAMPLE_OFFSETS = ((0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75))


def sample_bilinear(image: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear lookup with clamp-to-edge; u/v in [0, 1] texture coordinates."""
    size = image.shape[0]
    fx = np.clip(u * size - 0.5, 0.0, size - 1.0)
    fy = np.clip(v * size - 0.5, 0.0, size - 1.0)
    x0 = np.floor(fx).astype(int)
    y0 = np.floor(fy).astype(int)
    x1 = np.minimum(x0 + 1, size - 1)
    y1 = np.minimum(y0 + 1, size - 1)
    wx = (fx - x0)[..., None]
    wy = (fy - y0)[..., None]
    top = image[y0, x0] * (1 - wx) + image[y0, x1] * wx
    bot = image[y1, x0] * (1 - wx) + image[y1, x1] * wx
    return top * (1 - wy) + bot * wy


def shade(normals: np.ndarray, light: LightSpec) -> np.ndarray:
    """Lambert intensity per point, clamped to [0, 1]."""
    intensity = np.full(normals.shape[:-1], light.ambient)
    for direction, strength in light.directional:
        # ``direction`` is the light's travel direction; flip for the cosine.
        intensity = intensity + strength * np.maximum(
            0.0, -np.einsum("...k,k->...", normals, np.asarray(direction))
        )
    return np.clip(intensity, 0.0, 1.0)


def procedural_background(size: int, seed: int) -> np.ndarray:
    """Low-frequency RGB value noise: two bilinearly upsampled random lattices."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB6]))
    img = np.zeros((size, size, 3))
    for lattice, weight in ((3, 0.65), (7, 0.35)):
        coarse = rng.uniform(0.0, 1.0, size=(lattice, lattice, 3))
        pos = np.linspace(0, lattice - 1, size)
        i0 = np.floor(pos).astype(int)
        i1 = np.minimum(i0 + 1, lattice - 1)
        w = (pos - i0)[:, None, None]
        rows = coarse[i0] * (1 - w) + coarse[i1] * w          # (size, lattice, 3)
        wx = (pos - i0)[None, :, None]
        img += weight * (rows[:, i0] * (1 - wx) + rows[:, i1] * wx)
    return np.clip(img, 0.0, 1.0)


def _shade_hits(
    asset: AssetImage,
    surface: SurfaceSpec,
    origin: np.ndarray,
    dirs: np.ndarray,
    light: LightSpec,
) -> tuple[np.ndarray, np.ndarray]:
    hit, u, v, normal = intersect(surface, origin, dirs)
    color = np.zeros(dirs.shape[:-1] + (3,))
    if np.any(hit):
        texel = sample_bilinear(asset.pixels.astype(np.float64), u[hit], v[hit])
        color[hit] = texel * shade(normal[hit], light)[..., None]
    return hit, color


def render_pair(
    asset: AssetImage,
    surface: SurfaceSpec,
    camera: CameraSpec,
    light: LightSpec,
    occluders: list[OccluderSpec] | None = None,
    background_seed: int = 0,
    size: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Render one (reference, mask) pair.

    Returns ``reference`` as (S, S, 3) float32 in [0, 1] and ``mask`` as
    (S, S) uint8 in {0, 1} marking visible (unoccluded) projected-asset
    pixels. Raises :class:`DegenerateViewError` when the projection covers no
    pixel at all.
    """
    surface.validate()
    camera.validate()
    light.validate()
    occluders = occluders or []
    for occ in occluders:
        occ.validate()
    size = size or asset.size

    cols, rows = np.meshgrid(np.arange(size), np.arange(size), indexing="xy")

    # Coverage on the fixed subsample grid.
    sub_hits = []
    sub_colors = []
    for ox, oy in SUBSAMPLE_OFFSETS:
        px = (cols + ox) / size
        py = (rows + oy) / size
        origin, dirs = pixel_rays(camera, px, py)
        hit, color = _shade_hits(asset, surface, origin, dirs, light)
        sub_hits.append(hit)
        sub_colors.append(color)
    coverage = np.mean(sub_hits, axis=0)

    if not np.any(coverage > 0):
        raise DegenerateViewError(
            f"projection covers no pixels (kind={surface.kind}, camera={camera})"
        )

    background = procedural_background(size, background_seed)
    reference = background.copy()

    # Interior pixels: one shaded sample at the pixel center.
    full = coverage >= 1.0
    origin, dirs = pixel_rays(camera, (cols + 0.5) / size, (rows + 0.5) / size)
    hit_c, color_c = _shade_hits(asset, surface, origin, dirs, light)
    interior = full & hit_c
    reference[interior] = color_c[interior]
    # A fully covered pixel whose center ray misses can occur only from float
    # ties at the patch border; fall back to the subsample average there.
    partial = (coverage > 0) & ~interior
    if np.any(partial):
        stack = np.stack(
            [np.where(h[..., None], c, background) for h, c in zip(sub_hits, sub_colors)]
        )
        reference[partial] = stack.mean(axis=0)[partial]

    mask = (coverage >= 0.5).astype(np.uint8)
    reference = np.clip(reference, 0.0, 1.0).astype(np.float32)
    return apply_occluders(reference, mask, occluders)


def apply_occluders(
    reference: np.ndarray, mask: np.ndarray, occluders: list[OccluderSpec]
) -> tuple[np.ndarray, np.ndarray]:
    """Draw occluders on top of a rendered pair (pixel-center rasterization).

    Hard-edged by design: membership is evaluated only at pixel centers, so
    the occluded mask is exactly ``mask & ~occluded`` and the paired-sample
    mask invariant stays decomposable.
    """
    if not occluders:
        return reference, mask
    reference = reference.copy()
    mask = mask.copy()
    size_y, size_x = mask.shape
    cols, rows = np.meshgrid(np.arange(size_x), np.arange(size_y), indexing="xy")
    pcx, pcy = cols + 0.5, rows + 0.5
    for occ in occluders:
        occ.validate()
        inside = occ.contains(pcx, pcy)
        reference[inside] = np.asarray(occ.color, dtype=np.float32)
        mask[inside] = 0
    return reference, mask


def projected_coverage(
    surface: SurfaceSpec, camera: CameraSpec, size: int
) -> np.ndarray:
    """Subsample coverage map of the bare patch (no shading, no occluders)."""
    cols, rows = np.meshgrid(np.arange(size), np.arange(size), indexing="xy")
    hits = []
    for ox, oy in SUBSAMPLE_OFFSETS:
        origin, dirs = pixel_rays(camera, (cols + ox) / size, (rows + oy) / size)
        hit, _, _, _ = intersect(surface, origin, dirs)
        hits.append(hit)
    return np.mean(hits, axis=0)


def validate_images(reference: np.ndarray, mask: np.ndarray) -> None:
    if reference.ndim != 3 or reference.shape[2] != 3:
        raise ShapeError(f"reference must be HxWx3, got {reference.shape}")
    if mask.shape != reference.shape[:2]:
        raise ShapeError(
            f"mask shape {mask.shape} does not match reference {reference.shape[:2]}"
        )

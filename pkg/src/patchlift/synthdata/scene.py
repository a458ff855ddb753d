"""Scene geometry: parametric surfaces, cameras, lights, and occluders.

World conventions (shared with the renderer and its tests):

* The asset patch is centered on the world origin with its outward normal
  along +Z at the patch center; +Y is "up" and maps to decreasing asset row.
* UV coordinates cover the patch: u in [0, 1] left-to-right, v in [0, 1]
  top-to-bottom, matching image array indexing of the flat asset.
* The camera sits in the +Z (front) hemisphere, looks at the origin, and uses
  a square pinhole projection with a vertical field of view ``fov``.
* Surface curvature is the reciprocal of the bend radius measured in units of
  the patch's u extent: ``radius = extent_u / curvature``. The curved patch
  subtends ``curvature`` radians, so curvature 0 degenerates to the plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from patchlift.errors import ConfigError, DegenerateViewError

WORLD_UP = np.array([0.0, 1.0, 0.0])

SURFACE_KINDS = ("plane", "cylinder", "sphere_cap")

# Curved surfaces below this curvature are numerically indistinguishable from
# a plane in the quadric intersection; reject them at validation time.
MIN_CURVATURE = 1e-3


@dataclass
class SurfaceSpec:
    kind: str
    curvature: float
    extent: tuple[float, float]  # (u_size, v_size) in world units

    def validate(self) -> None:
        if self.kind not in SURFACE_KINDS:
            raise ConfigError(f"unknown surface kind '{self.kind}'")
        if self.extent[0] <= 0 or self.extent[1] <= 0:
            raise ConfigError(f"surface extent must be positive, got {self.extent}")
        if self.kind == "plane":
            if self.curvature != 0:
                raise ConfigError("plane surfaces must have curvature 0")
        else:
            if not (MIN_CURVATURE <= self.curvature <= math.pi):
                raise ConfigError(
                    f"curved surface needs curvature in [{MIN_CURVATURE}, pi], got {self.curvature}"
                )

    @property
    def radius(self) -> float:
        if self.kind == "plane":
            raise ConfigError("plane has no bend radius")
        return self.extent[0] / self.curvature


@dataclass
class CameraSpec:
    azimuth: float    # radians in [-pi/2, pi/2]
    elevation: float  # radians in [0, pi/2)
    distance: float   # world units > 0
    fov: float        # radians in (0, pi), vertical

    def validate(self) -> None:
        if not -math.pi / 2 <= self.azimuth <= math.pi / 2:
            raise ConfigError(f"azimuth {self.azimuth} outside [-pi/2, pi/2]")
        if not 0 <= self.elevation < math.pi / 2:
            raise ConfigError(f"elevation {self.elevation} outside [0, pi/2)")
        if self.distance <= 0:
            raise ConfigError(f"distance must be positive, got {self.distance}")
        if not 0 < self.fov < math.pi:
            raise ConfigError(f"fov {self.fov} outside (0, pi)")

    def position(self) -> np.ndarray:
        ce = math.cos(self.elevation)
        return self.distance * np.array(
            [ce * math.sin(self.azimuth), math.sin(self.elevation), ce * math.cos(self.azimuth)]
        )

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Return (origin, right, up, forward) for a camera looking at the origin."""
        origin = self.position()
        forward = -origin / np.linalg.norm(origin)
        right = np.cross(forward, WORLD_UP)
        norm = np.linalg.norm(right)
        if norm < 1e-9:  # looking straight down; excluded by the elevation bound
            raise DegenerateViewError("camera forward is parallel to world up")
        right = right / norm
        up = np.cross(right, forward)
        return origin, right, up, forward


@dataclass
class LightSpec:
    ambient: float
    # (unit direction of travel, intensity >= 0) per directional light
    directional: list[tuple[np.ndarray, float]] = field(default_factory=list)

    def validate(self) -> None:
        if not 0.0 <= self.ambient <= 1.0:
            raise ConfigError(f"ambient {self.ambient} outside [0, 1]")
        for direction, intensity in self.directional:
            if intensity < 0:
                raise ConfigError("light intensity must be non-negative")
            if abs(np.linalg.norm(direction) - 1.0) > 1e-6:
                raise ConfigError("light directions must be unit vectors")


@dataclass
class OccluderSpec:
    """Axis-aligned rectangle or ellipse drawn on top in image space (pixels)."""

    kind: str                      # "rect" | "ellipse"
    params: tuple[float, ...]      # rect: (x0, y0, w, h); ellipse: (cx, cy, rx, ry)
    color: tuple[float, float, float]

    def validate(self) -> None:
        if self.kind not in ("rect", "ellipse"):
            raise ConfigError(f"unknown occluder kind '{self.kind}'")
        if len(self.params) != 4:
            raise ConfigError("occluder params must have four entries")

    def contains(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        """Membership of image-space points; evaluated at pixel centers."""
        if self.kind == "rect":
            x0, y0, w, h = self.params
            return (px >= x0) & (px < x0 + w) & (py >= y0) & (py < y0 + h)
        cx, cy, rx, ry = self.params
        return ((px - cx) / rx) ** 2 + ((py - cy) / ry) ** 2 <= 1.0


# ---------------------------------------------------------------------------
# Camera sampling
# ---------------------------------------------------------------------------

@dataclass
class CameraRanges:
    """Closed sampling ranges; degenerate (lo == hi) ranges pin a value."""

    azimuth: tuple[float, float] = (-math.pi / 2, math.pi / 2)
    elevation: tuple[float, float] = (0.0, 1.2)
    distance: tuple[float, float] = (2.2, 3.2)
    fov: tuple[float, float] = (0.8, 1.0)

    def validate(self) -> None:
        for name, (lo, hi) in (
            ("azimuth", self.azimuth),
            ("elevation", self.elevation),
            ("distance", self.distance),
            ("fov", self.fov),
        ):
            if lo > hi:
                raise ConfigError(f"empty {name} range [{lo}, {hi}]")
        probe_lo = CameraSpec(self.azimuth[0], self.elevation[0], self.distance[0], self.fov[0])
        probe_hi = CameraSpec(
            self.azimuth[1],
            # elevation's upper bound is open; nudge the probe inside
            min(self.elevation[1], math.pi / 2 - 1e-9),
            self.distance[1],
            self.fov[1],
        )
        probe_lo.validate()
        probe_hi.validate()
        if self.elevation[1] >= math.pi / 2:
            raise ConfigError(f"elevation range must stay below pi/2, got {self.elevation}")


def sample_camera(rng_seed: int, ranges: CameraRanges | None = None) -> CameraSpec:
    """Draw a front-hemisphere camera, uniform per component within ``ranges``."""
    ranges = ranges or CameraRanges()
    ranges.validate()
    rng = np.random.default_rng(np.random.SeedSequence([rng_seed, 0xCA3]))
    spec = CameraSpec(
        azimuth=float(rng.uniform(*ranges.azimuth)),
        elevation=float(rng.uniform(*ranges.elevation)),
        distance=float(rng.uniform(*ranges.distance)),
        fov=float(rng.uniform(*ranges.fov)),
    )
    spec.validate()
    return spec


# ---------------------------------------------------------------------------
# Rays and surface mapping
# ---------------------------------------------------------------------------

def pixel_rays(camera: CameraSpec, px: np.ndarray, py: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rays through image-space points (pixel units, origin at the top-left).

    Returns (origin (3,), directions (..., 3)); directions are unit vectors.
    ``px``/``py`` may be fractional (subsample positions).
    """
    origin, right, up, forward = camera.basis()
    t_half = math.tan(camera.fov / 2)
    x_ndc = px * 2.0 - 1.0   # px, py already normalized to [0, 1] by the caller
    y_ndc = 1.0 - py * 2.0
    d = (
        forward
        + t_half * x_ndc[..., None] * right
        + t_half * y_ndc[..., None] * up
    )
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    return origin, d


def surface_point(surface: SurfaceSpec, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Map UV coordinates to world points on the patch."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u_size, v_size = surface.extent
    if surface.kind == "plane":
        return np.stack([(u - 0.5) * u_size, (0.5 - v) * v_size, np.zeros_like(u)], axis=-1)
    r = surface.radius
    if surface.kind == "cylinder":
        theta = (u - 0.5) * surface.curvature
        return np.stack(
            [r * np.sin(theta), (0.5 - v) * v_size, r * np.cos(theta) - r], axis=-1
        )
    theta_u = (u - 0.5) * (u_size / r)
    theta_v = (0.5 - v) * (v_size / r)
    return np.stack(
        [
            r * np.cos(theta_v) * np.sin(theta_u),
            r * np.sin(theta_v),
            r * np.cos(theta_v) * np.cos(theta_u) - r,
        ],
        axis=-1,
    )


def intersect(
    surface: SurfaceSpec, origin: np.ndarray, dirs: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Intersect rays with the textured patch.

    Returns (hit, u, v, normal): ``hit`` is True where the nearest
    front-facing intersection lies inside the patch's UV unit square; u, v,
    and normal are valid only where ``hit`` is set.
    """
    u_size, v_size = surface.extent
    dirs = np.asarray(dirs, dtype=np.float64)
    shape = dirs.shape[:-1]
    u = np.zeros(shape)
    v = np.zeros(shape)
    normal = np.zeros(shape + (3,))

    if surface.kind == "plane":
        dz = dirs[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(dz) > 1e-12, -origin[2] / dz, -1.0)
        hit = t > 1e-9
        p = origin + t[..., None] * dirs
        u = p[..., 0] / u_size + 0.5
        v = 0.5 - p[..., 1] / v_size
        normal[..., 2] = 1.0
        facing = dz < 0
    elif surface.kind == "cylinder":
        r = surface.radius
        # Quadric x^2 + (z + r)^2 = r^2; axis along Y through (0, *, -r).
        ox, oz = origin[0], origin[2] + r
        dx, dz = dirs[..., 0], dirs[..., 2]
        a = dx**2 + dz**2
        b = 2 * (ox * dx + oz * dz)
        c = ox**2 + oz**2 - r**2
        disc = b**2 - 4 * a * c
        ok = (disc >= 0) & (a > 1e-14)
        sqrt_disc = np.sqrt(np.where(ok, disc, 0.0))
        t = np.where(ok, (-b - sqrt_disc) / (2 * np.where(ok, a, 1.0)), -1.0)
        hit = ok & (t > 1e-9)
        p = origin + t[..., None] * dirs
        theta = np.arctan2(p[..., 0], p[..., 2] + r)
        u = theta / surface.curvature + 0.5
        v = 0.5 - p[..., 1] / v_size
        normal = np.stack(
            [np.sin(theta), np.zeros(shape), np.cos(theta)], axis=-1
        )
        facing = np.einsum("...k,...k->...", normal, dirs) < 0
    else:  # sphere_cap
        r = surface.radius
        center = np.array([0.0, 0.0, -r])
        oc = origin - center
        b = 2 * np.einsum("...k,k->...", dirs, oc)
        c = float(oc @ oc) - r**2
        disc = b**2 - 4 * c
        ok = disc >= 0
        sqrt_disc = np.sqrt(np.where(ok, disc, 0.0))
        t = np.where(ok, (-b - sqrt_disc) / 2, -1.0)
        hit = ok & (t > 1e-9)
        p = origin + t[..., None] * dirs
        q = p - center
        normal = q / r
        theta_v = np.arcsin(np.clip(q[..., 1] / r, -1.0, 1.0))
        theta_u = np.arctan2(q[..., 0], q[..., 2])
        u = theta_u * r / u_size + 0.5
        v = 0.5 - theta_v * r / v_size
        facing = np.einsum("...k,...k->...", normal, dirs) < 0

    inside = (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (v <= 1.0)
    return hit & facing & inside, u, v, normal


def project_point(camera: CameraSpec, points: np.ndarray, size: int) -> np.ndarray:
    """Forward-project world points to image pixel coordinates (px, py)."""
    origin, right, up, forward = camera.basis()
    q = np.asarray(points, dtype=np.float64) - origin
    depth = q @ forward
    if np.any(depth <= 1e-9):
        raise DegenerateViewError("point behind the camera")
    t_half = math.tan(camera.fov / 2)
    x_ndc = (q @ right) / (depth * t_half)
    y_ndc = (q @ up) / (depth * t_half)
    px = (x_ndc + 1.0) / 2.0 * size
    py = (1.0 - y_ndc) / 2.0 * size
    return np.stack([px, py], axis=-1)

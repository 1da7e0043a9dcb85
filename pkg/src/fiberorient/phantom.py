"""Synthetic volumes with analytically known fiber orientation.

Two fixtures:

* a uniform fiber field, a product of sines that is constant along one axis;
* a helical annulus around a z-parallel axis whose fiber angle rotates
  linearly from the inner to the outer wall.  Texture is made of rods traced
  exactly along the analytic field and blurred into Gaussian tubes.

Random numbers come from numpy's PCG64 bit generator, whose stream is fixed
for a given seed on every platform.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.ndimage import gaussian_filter

from .volume_io import write_volume

ROD_STEP = 0.5
ROD_BATCH = 1 << 15


@dataclass(frozen=True)
class AnnulusPhantomSpec:
    dims: tuple[int, int, int] = (128, 128, 128)
    cx: float = 63.5
    cy: float = 63.5
    r_inner: float = 16.0
    r_outer: float = 58.0
    ha_endo: float = 60.0
    ha_epi: float = -60.0
    rod_count: int = 20000
    rod_length: float = 40.0  # half-length: rods span +-rod_length of arc around their seed
    rod_sigma: float = 1.0
    seed: int = 0
    noise: float = 0.0
    mask_z_margin: int = 0
    texture_margin: float = 0.0  # rods also fill this many voxels inside r_inner and outside r_outer

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        nx, ny, nz = self.dims
        if min(self.dims) < 1:
            raise ValueError("dims must be positive")
        if not 0 < self.r_inner < self.r_outer < min(nx, ny) / 2:
            raise ValueError("need 0 < r_inner < r_outer < min(nx, ny) / 2")
        for name in ("ha_endo", "ha_epi"):
            if not -90 <= getattr(self, name) <= 90:
                raise ValueError(f"{name} must lie in [-90, 90]")
        if self.rod_count < 1:
            raise ValueError("rod_count must be >= 1")
        if self.rod_length <= 0 or self.rod_sigma <= 0:
            raise ValueError("rod_length and rod_sigma must be > 0")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.texture_margin < 0:
            raise ValueError("texture_margin must be >= 0")
        if not 0 < self.r_inner - self.texture_margin or not self.r_outer + self.texture_margin < min(nx, ny) / 2:
            raise ValueError("textured annulus r_inner - texture_margin .. r_outer + texture_margin must fit")
        if not 0 <= 2 * self.mask_z_margin < nz:
            raise ValueError("mask_z_margin must leave at least one slice")

    @property
    def seeding_volume(self) -> float:
        """Volume of the annulus over the z range rods are seeded in (the volume plus rod_length on each side)."""
        height = self.dims[2] + 2.0 * self.rod_length
        ri, ro = self.texture_radii
        return math.pi * (ro**2 - ri**2) * height

    @property
    def texture_radii(self) -> tuple[float, float]:
        return self.r_inner - self.texture_margin, self.r_outer + self.texture_margin

    @property
    def rod_density(self) -> float:
        """Rods per voxel^3 of the textured annulus over the seeding z range."""
        return self.rod_count / self.seeding_volume

    def with_density(self, density: float) -> AnnulusPhantomSpec:
        """Copy with ``rod_count`` raised so that ``rod_density >= density``."""
        return replace(self, rod_count=max(1, math.ceil(density * self.seeding_volume)))

    def manifest(self) -> str:
        lines = [f"kind = helical_annulus"]
        for key, value in asdict(self).items():
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


@dataclass
class GroundTruth:
    orientation: Callable
    ha: Callable
    ia: Callable
    mask: np.ndarray  # uint8 (nz, ny, nx)


def _radius(spec: AnnulusPhantomSpec, x, y):
    return np.hypot(np.asarray(x, dtype=np.float64) - spec.cx, np.asarray(y, dtype=np.float64) - spec.cy)


def helix_angle_at_depth(spec: AnnulusPhantomSpec, depth):
    return spec.ha_endo + np.asarray(depth, dtype=np.float64) * (spec.ha_epi - spec.ha_endo)


def analytic_ha(spec: AnnulusPhantomSpec, p) -> float:
    x, y, _ = p
    r = float(_radius(spec, x, y))
    if not spec.r_inner <= r <= spec.r_outer:
        raise ValueError(f"point {tuple(p)} is outside the annulus (r={r:.3f})")
    d = (r - spec.r_inner) / (spec.r_outer - spec.r_inner)
    return float(helix_angle_at_depth(spec, d))


def analytic_ia(spec: AnnulusPhantomSpec, p) -> float:
    analytic_ha(spec, p)  # range check
    return 0.0


def analytic_orientation(spec: AnnulusPhantomSpec, p) -> np.ndarray:
    """Unit fiber direction cos(theta) c_hat + sin(theta) z_hat at voxel-space point ``p``."""
    x, y, _ = p
    theta = math.radians(analytic_ha(spec, p))
    r = float(_radius(spec, x, y))
    c_hat = np.array([-(y - spec.cy) / r, (x - spec.cx) / r, 0.0])
    return math.cos(theta) * c_hat + math.sin(theta) * np.array([0.0, 0.0, 1.0])


def analytic_orientation_grid(spec: AnnulusPhantomSpec, shape=None) -> np.ndarray:
    """Analytic fiber field ``(3, nz, ny, nx)`` at voxel centers; zero outside the annulus."""
    nz, ny, nx = shape if shape is not None else spec.dims[::-1]
    y, x = np.mgrid[0:ny, 0:nx].astype(np.float64)
    r = _radius(spec, x, y)
    inside = (r >= spec.r_inner) & (r <= spec.r_outer)
    d = (r - spec.r_inner) / (spec.r_outer - spec.r_inner)
    theta = np.radians(helix_angle_at_depth(spec, d))
    rs = np.where(r == 0, 1.0, r)
    cxh, cyh = -(y - spec.cy) / rs, (x - spec.cx) / rs
    f = np.stack([np.cos(theta) * cxh, np.cos(theta) * cyh, np.sin(theta)])
    f = np.where(inside, f, 0.0)
    return np.broadcast_to(f[:, None], (3, nz, ny, nx))


def annulus_mask(spec: AnnulusPhantomSpec) -> np.ndarray:
    """Annulus occupancy; slices within ``mask_z_margin`` of the z faces are left out."""
    nx, ny, nz = spec.dims
    y, x = np.mgrid[0:ny, 0:nx]
    r = _radius(spec, x, y)
    plane = ((r >= spec.r_inner) & (r <= spec.r_outer)).astype(np.uint8)
    mask = np.zeros((nz, ny, nx), dtype=np.uint8)
    m = spec.mask_z_margin
    mask[m: nz - m] = plane
    return mask


def _deposit(grid: np.ndarray, pts: np.ndarray) -> None:
    """Trilinear (cloud-in-cell) deposit of unit weights at ``pts`` (N, 3) in x, y, z order.

    ``grid`` carries a one-voxel apron on every face so all eight corners of
    a kept point are in range.
    """
    pz, py, px = grid.shape
    base = np.floor(pts)
    frac = pts - base
    base = base.astype(np.int64) + 1
    keep = (
        (base[:, 0] >= 0) & (base[:, 0] < px - 1)
        & (base[:, 1] >= 0) & (base[:, 1] < py - 1)
        & (base[:, 2] >= 0) & (base[:, 2] < pz - 1)
    )
    base, frac = base[keep], frac[keep]
    lin = (base[:, 2] * py + base[:, 1]) * px + base[:, 0]
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
    indices, weights = [], []
    for oz, wz in ((0, gz), (1, fz)):
        for oy, wy in ((0, gy), (1, fy)):
            wzy = wz * wy
            for ox, wx in ((0, gx), (1, fx)):
                indices.append(lin + ((oz * py + oy) * px + ox))
                weights.append(wzy * wx)
    flat = grid.reshape(-1)
    flat += np.bincount(np.concatenate(indices), weights=np.concatenate(weights), minlength=flat.size)


def _rod_points(spec: AnnulusPhantomSpec, seeds: np.ndarray) -> np.ndarray:
    """Exact helices through each seed; fibers keep their radius so the path is closed-form."""
    ri, ro = spec.texture_radii
    r = np.sqrt(ri**2 + seeds[:, 0] * (ro**2 - ri**2))
    phi0 = 2.0 * np.pi * seeds[:, 1]
    # The annulus continues past both z faces; seeding over the extended
    # range keeps the rod density uniform inside the volume.
    z0 = -0.5 - spec.rod_length + seeds[:, 2] * (spec.dims[2] + 2.0 * spec.rod_length)
    d = (r - spec.r_inner) / (spec.r_outer - spec.r_inner)
    # outside the analyzed wall the linear law is continued, up to +-90 degrees
    theta = np.radians(np.clip(helix_angle_at_depth(spec, d), -90.0, 90.0))
    half = int(round(spec.rod_length / ROD_STEP))
    s = np.arange(-half, half + 1, dtype=np.float64) * ROD_STEP
    phi = phi0[:, None] + s[None, :] * (np.cos(theta) / r)[:, None]
    z = z0[:, None] + s[None, :] * np.sin(theta)[:, None]
    x = spec.cx + r[:, None] * np.cos(phi)
    y = spec.cy + r[:, None] * np.sin(phi)
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)


def generate_helical_annulus(spec: AnnulusPhantomSpec):
    """Return ``(volume float32, mask uint8, GroundTruth)``, arrays shaped ``(nz, ny, nx)``.

    Rod centerlines are deposited trilinearly every half voxel along their
    arc length, then blurred by a Gaussian of width ``rod_sigma``; the sum is
    rescaled to [0, 1].
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    seeds = rng.random((spec.rod_count, 3))
    nx, ny, nz = spec.dims
    grid = np.zeros((nz + 2, ny + 2, nx + 2), dtype=np.float64)
    for b0 in range(0, spec.rod_count, ROD_BATCH):
        _deposit(grid, _rod_points(spec, seeds[b0: b0 + ROD_BATCH]))
    grid = grid[1:-1, 1:-1, 1:-1]
    grid = gaussian_filter(grid, spec.rod_sigma, mode="constant", truncate=4.0)
    if spec.noise > 0:
        grid /= max(grid.max(), 1e-300)
        grid += rng.normal(0.0, spec.noise, size=grid.shape)
    lo, hi = grid.min(), grid.max()
    volume = ((grid - lo) / (hi - lo if hi > lo else 1.0)).astype(np.float32)
    mask = annulus_mask(spec)
    truth = GroundTruth(
        orientation=lambda p: analytic_orientation(spec, p),
        ha=lambda p: analytic_ha(spec, p),
        ia=lambda p: analytic_ia(spec, p),
        mask=mask,
    )
    return volume, mask, truth


_AXIS_VECTORS = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}


def _axis_name(direction) -> str:
    if isinstance(direction, str):
        if direction not in _AXIS_VECTORS:
            raise ValueError(f"direction must be a coordinate axis, got {direction!r}")
        return direction
    v = tuple(float(c) for c in direction)
    for name, axis in _AXIS_VECTORS.items():
        if v == axis or v == tuple(-c for c in axis):
            return name
    raise ValueError(f"direction must be a coordinate axis, got {direction}")


def generate_uniform_fiber(dims, direction="z", periods=(8.0, 8.0)):
    """Product-of-sines volume constant along ``direction``; fiber is that axis everywhere.

    For z: ``I = sin(2 pi x / px) sin(2 pi y / py)``; for x:
    ``I = sin(2 pi y / py) sin(2 pi z / px)``; for y:
    ``I = sin(2 pi x / px) sin(2 pi z / py)``.
    """
    name = _axis_name(direction)
    nx, ny, nz = (int(n) for n in dims)
    px, py = (float(p) for p in periods)
    z, y, x = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    wave = lambda c, period: np.sin(2.0 * np.pi * c / period)
    if name == "z":
        vol = wave(x, px) * wave(y, py)
    elif name == "x":
        vol = wave(y, py) * wave(z, px)
    else:
        vol = wave(x, px) * wave(z, py)
    fiber = np.array(_AXIS_VECTORS[name])
    mask = np.ones((nz, ny, nx), dtype=np.uint8)
    truth = GroundTruth(
        orientation=lambda p: fiber.copy(),
        ha=lambda p: None,
        ia=lambda p: None,
        mask=mask,
    )
    return vol.astype(np.float32), truth


def write_phantom(spec: AnnulusPhantomSpec, directory, overwrite: bool = False) -> dict:
    """Generate the helical annulus and write it under ``directory``.

    Writes datasets ``volume`` and ``mask``, ``phantom.txt`` with the
    generating parameters and ``config.ini`` pointing at them with the long
    axis through the annulus center.  Returns the written paths by name.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    volume, mask, _ = generate_helical_annulus(spec)
    write_volume(directory / "volume", volume, overwrite=overwrite)
    write_volume(directory / "mask", mask, dtype="uint8", overwrite=overwrite)
    (directory / "phantom.txt").write_text(spec.manifest(), encoding="utf-8")
    nz = spec.dims[2]
    config = (
        "[input]\n"
        "volume = volume\n"
        "mask = mask\n\n"
        "[frame]\n"
        f"axis_point_a = {spec.cx!r},{spec.cy!r},0.0\n"
        f"axis_point_b = {spec.cx!r},{spec.cy!r},{float(max(nz - 1, 1))!r}\n\n"
        "[output]\n"
        "directory = output\n"
    )
    (directory / "config.ini").write_text(config, encoding="utf-8")
    return {
        "volume": directory / "volume",
        "mask": directory / "mask",
        "manifest": directory / "phantom.txt",
        "config": directory / "config.ini",
    }

"""Regional quantification of angle maps: transmural profiles and region statistics.

Helical and intrusion angles are orientations with period 180 degrees, so
means and spreads use the doubled-angle method.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cardiac_frame import AngleMaps, AxisModel
from .volume_io import VoxelBox

_R_ONE = 1e-12  # resultant lengths this close to 1 count as zero spread
RAY_STEP = 0.25


@dataclass(frozen=True)
class SectorSpec:
    z_range: tuple[int, int] | None = None  # half-open slice range, None = all slices
    azimuth: tuple[float, float] = (0.0, 360.0)  # degrees, half-open, wraps when start > stop
    n_bins: int = 20

    def __post_init__(self):
        if self.n_bins < 2:
            raise ValueError(f"n_bins must be >= 2, got {self.n_bins}")
        if self.z_range is not None and not self.z_range[0] < self.z_range[1]:
            raise ValueError(f"empty z range {self.z_range}")
        a0, a1 = self.azimuth
        if a0 == a1 or not (math.isfinite(a0) and math.isfinite(a1)):
            raise ValueError(f"empty azimuth range {self.azimuth}")

    def azimuth_contains(self, phi: np.ndarray) -> np.ndarray:
        a0, a1 = self.azimuth
        if a1 - a0 >= 360.0:
            return np.ones(np.shape(phi), dtype=bool)
        a0, a1 = a0 % 360.0, a1 % 360.0
        if a0 < a1:
            return (phi >= a0) & (phi < a1)
        return (phi >= a0) | (phi < a1)


@dataclass
class TransmuralProfile:
    depth: np.ndarray  # bin centers in [0, 1]
    mean: np.ndarray  # circular mean, degrees; NaN for empty bins
    std: np.ndarray  # circular std, degrees; NaN for empty bins
    count: np.ndarray  # voxels per bin

    @property
    def n_bins(self) -> int:
        return len(self.depth)


@dataclass(frozen=True)
class RegionStats:
    mean_ha: float
    std_ha: float
    mean_fa: float
    valid_count: int


def circular_stats(angles) -> tuple[float, float]:
    """Axial mean and spread in degrees.

    The mean is ``0.5 atan2(sum sin 2a, sum cos 2a)``; the spread is
    ``0.5 sqrt(-2 ln R)`` with ``R`` the mean resultant length of the doubled
    angles (infinite when ``R`` is 0).
    """
    a = np.radians(np.asarray(angles, dtype=np.float64))
    if a.size == 0:
        raise ValueError("no angles")
    s, c = np.sum(np.sin(2 * a)), np.sum(np.cos(2 * a))
    return _from_sums(s, c, a.size)


def _from_sums(s: float, c: float, n: float) -> tuple[float, float]:
    mean = math.degrees(0.5 * math.atan2(s, c))
    r = math.hypot(s, c) / n
    if r >= 1.0 - _R_ONE:
        return mean, 0.0
    return mean, math.degrees(0.5 * math.sqrt(-2.0 * math.log(r))) if r > 0 else math.inf


def _cylindrical(box: VoxelBox, axis: AxisModel):
    nz, ny, nx = box.shape
    z = np.arange(box.lo[2], box.hi[2], dtype=np.float64)
    cx, cy = axis.center(z)
    dx = np.arange(box.lo[0], box.hi[0], dtype=np.float64)[None, None, :] - cx[:, None, None]
    dy = np.arange(box.lo[1], box.hi[1], dtype=np.float64)[None, :, None] - cy[:, None, None]
    r = np.sqrt(dx * dx + dy * dy)
    phi = np.degrees(np.arctan2(dy, dx)) % 360.0
    return r, phi


def _ray_extents(mask: np.ndarray, r: np.ndarray, box: VoxelBox, axis: AxisModel):
    """Smallest and largest voxel-center radius of mask voxels crossed by each ray.

    Ray ``z * 360 + k`` leaves the axis at azimuth ``k + 0.5`` degrees within
    slice ``z``; it is sampled every quarter voxel and each sample picks its
    nearest voxel.  Rays without mask voxels get ``(inf, -inf)``.
    """
    nz, ny, nx = mask.shape
    lo_x, lo_y, lo_z = box.lo
    cx, cy = axis.center(np.arange(lo_z, lo_z + nz, dtype=np.float64))
    ang = np.radians(np.arange(360) + 0.5)
    r_endo = np.full(nz * 360, np.inf)
    r_epi = np.full(nz * 360, -np.inf)
    for z in range(nz):
        if not mask[z].any():
            continue
        ox, oy = cx[z] - lo_x, cy[z] - lo_y
        reach = max(math.hypot(max(abs(ox), abs(nx - 1 - ox)), max(abs(oy), abs(ny - 1 - oy))), 1.0)
        t = np.arange(0.0, reach + 0.5, RAY_STEP)
        x = np.floor(ox + t[None, :] * np.cos(ang)[:, None] + 0.5).astype(np.int64)
        y = np.floor(oy + t[None, :] * np.sin(ang)[:, None] + 0.5).astype(np.int64)
        inside = (x >= 0) & (x < nx) & (y >= 0) & (y < ny)
        xs, ys = np.where(inside, x, 0), np.where(inside, y, 0)
        hit = inside & mask[z][ys, xs]
        rv = r[z][ys, xs]
        r_endo[z * 360: (z + 1) * 360] = np.min(np.where(hit, rv, np.inf), axis=1)
        r_epi[z * 360: (z + 1) * 360] = np.max(np.where(hit, rv, -np.inf), axis=1)
    return r_endo, r_epi


def transmural_profile(maps: AngleMaps, mask, axis: AxisModel, sector: SectorSpec | None = None,
                       angle: str = "ha") -> TransmuralProfile:
    """Binned circular statistics of an angle map against normalized wall depth.

    Parameters
    ----------
    maps : AngleMaps
        Angle maps and validity over ``maps.box``.
    mask : array-like
        Wall mask congruent with the maps; defines the wall extent per ray.
    axis : AxisModel
        Long axis.
    sector : SectorSpec, optional
        Slice range, azimuth range and bin count; defaults to everything
        with 20 bins.
    angle : {"ha", "ia"}
        Which map to profile.

    Returns
    -------
    TransmuralProfile

    Notes
    -----
    Rays are 1 degree of azimuth by one slice; a voxel belongs to the ray
    whose degree contains its azimuth.  On each ray the wall spans from the
    smallest to the largest center radius of the mask voxels the ray line
    passes through; depth is ``(r - r_endo) / (r_epi - r_endo)`` clamped to
    [0, 1].  Rays whose wall has zero thickness are skipped.

    Raises
    ------
    ValueError
        No valid voxel falls in the sector.
    """
    sector = sector or SectorSpec()
    if angle not in ("ha", "ia"):
        raise ValueError(f"angle must be 'ha' or 'ia', got {angle!r}")
    values = getattr(maps, angle)
    mask = np.asarray(mask) != 0
    if mask.shape != values.shape:
        raise ValueError("mask does not match the angle maps")
    box = maps.box
    r, phi = _cylindrical(box, axis)
    ray_phi = np.minimum(np.floor(phi).astype(np.int64), 359)
    r_endo, r_epi = _ray_extents(mask, r, box, axis)
    ray = np.arange(box.shape[0], dtype=np.int64)[:, None, None] * 360 + ray_phi

    sel = maps.valid & mask & sector.azimuth_contains(phi)
    if sector.z_range is not None:
        z = np.arange(box.lo[2], box.hi[2])
        zin = (z >= sector.z_range[0]) & (z < sector.z_range[1])
        sel &= zin[:, None, None]
    if not np.any(sel):
        raise ValueError("no valid voxels in the sector")
    rays = ray[sel]
    lo, hi = r_endo[rays], r_epi[rays]
    wall = hi > lo
    lo, hi = lo[wall], hi[wall]
    rv = r[sel][wall]
    a = np.radians(values[sel][wall].astype(np.float64))
    depth = np.clip((rv - lo) / (hi - lo), 0.0, 1.0)
    nb = sector.n_bins
    b = np.minimum((depth * nb).astype(np.int64), nb - 1)
    count = np.bincount(b, minlength=nb)
    s = np.bincount(b, weights=np.sin(2 * a), minlength=nb)
    c = np.bincount(b, weights=np.cos(2 * a), minlength=nb)
    mean = np.full(nb, np.nan)
    std = np.full(nb, np.nan)
    for i in range(nb):
        if count[i]:
            mean[i], std[i] = _from_sums(s[i], c[i], count[i])
    centers = (np.arange(nb) + 0.5) / nb
    return TransmuralProfile(centers, mean, std, count)


def regional_stats(maps: AngleMaps, mask, region: VoxelBox) -> RegionStats | None:
    """Circular HA statistics and mean FA over valid voxels of ``region``; ``None`` if there are none."""
    sub = maps.box.intersect(region)
    if sub is None:
        raise ValueError(f"region {region} does not intersect the maps box {maps.box}")
    sl = sub.slices_within(maps.box)
    ok = maps.valid[sl]
    if mask is not None:
        ok = ok & (np.asarray(mask)[sl] != 0)
    n = int(np.count_nonzero(ok))
    if n == 0:
        return None
    mean, std = circular_stats(maps.ha[sl][ok])
    fa = float(np.mean(maps.fa[sl][ok].astype(np.float64)))
    return RegionStats(mean, std, fa, n)


def format_profile_csv(profile: TransmuralProfile) -> str:
    """CSV text with header ``depth,mean_ha,std_ha,count``; empty bins write ``nan``."""
    lines = ["depth,mean_ha,std_ha,count"]
    for d, m, s, n in zip(profile.depth, profile.mean, profile.std, profile.count):
        lines.append(f"{d:.6f},{m:.6f},{s:.6f},{int(n)}")
    return "\n".join(lines) + "\n"


def write_profile_csv(profile: TransmuralProfile, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_profile_csv(profile))

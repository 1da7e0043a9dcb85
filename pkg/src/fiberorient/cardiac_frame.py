"""Cylindrical cardiac frame and voxel-wise helical / intrusion angle maps.

The long axis runs along +z of the volume grid.  Its in-plane center is
interpolated piecewise-linearly between user-given per-slice centers and
held constant beyond the first and last entries.

Angles fold the sign of the fiber so that its circumferential component is
non-negative; both angles therefore lie in [-90, 90] and do not depend on
the sign stored for the fiber.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .structure_tensor import OrientationField
from .volume_io import VoxelBox

SENTINEL = -999.0
R_MIN = 2.0
ANGLE_SLAB_VOXELS = 1 << 18


class DegenerateFrameError(ValueError):
    """Point too close to the long axis, or fiber with no tangential component."""


@dataclass(frozen=True)
class AxisModel:
    centers: tuple[tuple[float, float, float], ...]  # (z, cx, cy) with strictly increasing z

    def __post_init__(self):
        centers = tuple(tuple(float(v) for v in c) for c in self.centers)
        if len(centers) < 2:
            raise ValueError("axis needs at least two centers")
        if any(len(c) != 3 for c in centers):
            raise ValueError("axis centers are (z, cx, cy) triples")
        zs = [c[0] for c in centers]
        if any(b <= a for a, b in zip(zs, zs[1:])):
            raise ValueError("axis center z values must be strictly increasing")
        object.__setattr__(self, "centers", centers)

    @classmethod
    def from_points(cls, a, b) -> AxisModel:
        """Axis through two voxel-space points given as (x, y, z)."""
        (ax, ay, az), (bx, by, bz) = a, b
        if az == bz:
            raise ValueError("axis points must differ in z")
        pts = sorted([(az, ax, ay), (bz, bx, by)])
        return cls(tuple(pts))

    @classmethod
    def from_csv(cls, path) -> AxisModel:
        """Read ``z,cx,cy`` lines; blank lines and ``#`` comments are skipped."""
        rows = []
        with open(path, newline="", encoding="utf-8") as f:
            for lineno, row in enumerate(csv.reader(f), 1):
                if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                    continue
                try:
                    z, cx, cy = (float(v) for v in row)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: expected 'z,cx,cy', got {row}") from None
                rows.append((z, cx, cy))
        return cls(tuple(rows))

    def center(self, z):
        """In-plane center ``(cx, cy)`` at slice coordinate(s) ``z``."""
        zs, cx, cy = (np.array(v) for v in zip(*self.centers))
        return np.interp(z, zs, cx), np.interp(z, zs, cy)


@dataclass(frozen=True)
class LocalBasis:
    r_hat: np.ndarray
    c_hat: np.ndarray
    z_hat: np.ndarray


@dataclass
class AngleMaps:
    box: VoxelBox
    ha: np.ndarray
    ia: np.ndarray
    fa: np.ndarray
    valid: np.ndarray  # bool


def local_basis(axis: AxisModel, p, r_min: float = R_MIN) -> LocalBasis:
    x, y, z = (float(v) for v in p)
    cx, cy = axis.center(z)
    dx, dy = x - float(cx), y - float(cy)
    dist = math.hypot(dx, dy)
    if dist < r_min:
        raise DegenerateFrameError(f"point {tuple(p)} is {dist:.3f} voxels from the axis")
    r = np.array([dx / dist, dy / dist, 0.0])
    zh = np.array([0.0, 0.0, 1.0])
    return LocalBasis(r, np.cross(zh, r), zh)


def fold_components(fr, fc, fz):
    """Flip fibers so that fc > 0, or fc == 0 and fz > 0, or both zero and fr >= 0.

    Works on scalars or arrays; returned zeros are never negative zero.
    """
    fr, fc, fz = np.asarray(fr, dtype=np.float64), np.asarray(fc, dtype=np.float64), np.asarray(fz, dtype=np.float64)
    flip = (fc < 0) | ((fc == 0) & (fz < 0)) | ((fc == 0) & (fz == 0) & (fr < 0))
    sign = np.where(flip, -1.0, 1.0)
    return fr * sign + 0.0, fc * sign + 0.0, fz * sign + 0.0


def _components(f, basis: LocalBasis):
    f = np.asarray(f, dtype=np.float64)
    return float(f @ basis.r_hat), float(f @ basis.c_hat), float(f @ basis.z_hat)


def helical_angle(f, basis: LocalBasis) -> float:
    """Angle of the fiber's tangential projection above the circumferential direction, degrees."""
    fr, fc, fz = fold_components(*_components(f, basis))
    if fc == 0 and fz == 0:
        raise DegenerateFrameError("purely radial fiber has no helical angle")
    return math.degrees(math.atan2(float(fz), float(fc)))


def intrusion_angle(f, basis: LocalBasis) -> float:
    """Angle toward the radial direction within the circumferential-radial plane, degrees."""
    fr, fc, fz = fold_components(*_components(f, basis))
    return math.degrees(math.atan2(float(fr), float(fc)))


def angle_maps_from_vectors(vectors, box: VoxelBox, axis: AxisModel, r_min: float = R_MIN):
    """HA, IA (float64 degrees) and the geometric validity for fibers ``(3, nz, ny, nx)`` over ``box``.

    A voxel is geometrically valid when its fiber is nonzero, it lies at least
    ``r_min`` from the axis and its fiber is not purely radial.
    """
    fx, fy, fz = (np.asarray(v, dtype=np.float64) for v in vectors)
    zc = np.arange(box.lo[2], box.hi[2], dtype=np.float64)
    cx, cy = axis.center(zc)
    dx = np.arange(box.lo[0], box.hi[0], dtype=np.float64)[None, None, :] - cx[:, None, None]
    dy = np.arange(box.lo[1], box.hi[1], dtype=np.float64)[None, :, None] - cy[:, None, None]
    dist = np.sqrt(dx * dx + dy * dy)
    near = dist < r_min
    safe = np.where(near, 1.0, dist)
    rx, ry = dx / safe, dy / safe
    fr = fx * rx + fy * ry
    fc = fy * rx - fx * ry
    fr, fc, fzf = fold_components(fr, fc, fz)
    valid = ~near & ((fc != 0) | (fzf != 0))
    ha = np.degrees(np.arctan2(fzf, fc))
    ia = np.degrees(np.arctan2(fr, fc))
    return ha, ia, valid


def helical_angles_along(points, tangents, axis: AxisModel, r_min: float = R_MIN) -> np.ndarray:
    """HA in degrees of tangents ``(n, 3)`` at points ``(n, 3)``; ``SENTINEL`` where undefined."""
    points = np.asarray(points, dtype=np.float64)
    t = np.asarray(tangents, dtype=np.float64)
    cx, cy = axis.center(points[:, 2])
    dx, dy = points[:, 0] - cx, points[:, 1] - cy
    dist = np.sqrt(dx * dx + dy * dy)
    near = dist < r_min
    safe = np.where(near, 1.0, dist)
    rx, ry = dx / safe, dy / safe
    fr = t[:, 0] * rx + t[:, 1] * ry
    fc = t[:, 1] * rx - t[:, 0] * ry
    fr, fc, fz = fold_components(fr, fc, t[:, 2])
    ok = ~near & ((fc != 0) | (fz != 0))
    return np.where(ok, np.degrees(np.arctan2(fz, fc)), SENTINEL)


def compute_angle_maps(field: OrientationField, axis: AxisModel, mask=None, r_min: float = R_MIN) -> AngleMaps:
    """Voxel-wise HA, IA and FA; invalid voxels carry ``SENTINEL`` in all three maps.

    A voxel is valid when the mask is set, the tensor is non-degenerate, the
    voxel is off-axis and the fiber has a tangential component.
    """
    box = field.box
    shape = box.shape
    if mask is None:
        mask = np.ones(shape, dtype=bool)
    mask = np.asarray(mask)
    if mask.shape != shape:
        raise ValueError(f"mask shape {mask.shape} does not match field box {shape}")
    ha = np.empty(shape, dtype=np.float32)
    ia = np.empty(shape, dtype=np.float32)
    fa = np.empty(shape, dtype=np.float32)
    valid = np.empty(shape, dtype=bool)
    nz, ny, nx = shape
    step = max(1, min(ANGLE_SLAB_VOXELS, nz * ny * nx // 16) // (ny * nx))
    for z0 in range(0, nz, step):
        z1 = min(z0 + step, nz)
        sub = VoxelBox((box.lo[0], box.lo[1], box.lo[2] + z0), (box.hi[0], box.hi[1], box.lo[2] + z1))
        vec = field.vectors[:, z0:z1]
        h, i, ok = angle_maps_from_vectors(vec, sub, axis, r_min)
        ok &= (mask[z0:z1] != 0) & np.any(vec != 0, axis=0)
        ha[z0:z1] = np.where(ok, h, SENTINEL)
        ia[z0:z1] = np.where(ok, i, SENTINEL)
        fa[z0:z1] = np.where(ok, field.fa[z0:z1], SENTINEL)
        valid[z0:z1] = ok
    return AngleMaps(box, ha, ia, fa, valid)

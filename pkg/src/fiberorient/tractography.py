"""Deterministic streamline tractography through a fiber orientation field.

Fibers are orientations, so every interpolation flips the eight neighboring
vectors toward a reference direction before weighting them.  The reference
is the previous step direction, the only gauge that stays continuous along
a line.  Lines are integrated with fixed-step fourth-order Runge-Kutta in
both directions from each seed.

All arithmetic is element-wise over a batch of lines, so a line's points do
not depend on which other seeds share its batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cardiac_frame import R_MIN, SENTINEL, AxisModel, helical_angles_along
from .eigen import fiber_direction_batch
from .structure_tensor import OrientationField

MIN_NORM = 1e-6
SEED_BATCH = 4096


class InterpolationError(ValueError):
    """Point outside the field, all-degenerate neighborhood, or vanishing interpolant."""


@dataclass(frozen=True)
class TractoParams:
    step: float = 0.5
    fa_min: float = 0.1
    max_angle_deg: float = 60.0
    max_steps: int = 10000
    seed_spacing: int = 4
    min_length: float = 10.0

    def __post_init__(self):
        if not 0 < self.step <= 2:
            raise ValueError(f"step must lie in (0, 2], got {self.step}")
        if not 0 <= self.fa_min < 1:
            raise ValueError(f"fa_min must lie in [0, 1), got {self.fa_min}")
        if not 0 < self.max_angle_deg <= 90:
            raise ValueError(f"max_angle_deg must lie in (0, 90], got {self.max_angle_deg}")
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise ValueError(f"max_steps must be a positive integer, got {self.max_steps}")
        if int(self.seed_spacing) != self.seed_spacing or self.seed_spacing < 1:
            raise ValueError(f"seed_spacing must be a positive integer, got {self.seed_spacing}")
        if not self.min_length >= 0:
            raise ValueError(f"min_length must be >= 0, got {self.min_length}")


@dataclass
class Streamline:
    points: np.ndarray  # (n, 3) voxel coordinates x, y, z
    ha: np.ndarray  # (n,) degrees, SENTINEL where undefined
    seed_index: int
    step: float | None = None

    @property
    def length(self) -> float:
        """Arc length: ``step * (n - 1)`` for fixed-step lines, else the polyline length."""
        n = len(self.points)
        if self.step is not None:
            return self.step * (n - 1)
        return float(np.sum(np.sqrt(np.sum(np.diff(self.points, axis=0) ** 2, axis=1))))


def seed_grid(mask, fa_map, params: TractoParams, valid=None, origin=(0, 0, 0)) -> np.ndarray:
    """Lattice seeds at voxel centers, ``(n, 3)`` in x, y, z order, z-major.

    The lattice starts ``seed_spacing // 2`` voxels in from the low corner;
    a seed is kept when the mask is set, FA >= ``fa_min`` and, if given,
    ``valid`` is set.
    """
    fa_map = np.asarray(fa_map)
    mask = np.ones(fa_map.shape, dtype=bool) if mask is None else np.asarray(mask) != 0
    if mask.shape != fa_map.shape:
        raise ValueError(f"mask shape {mask.shape} does not match FA shape {fa_map.shape}")
    s = int(params.seed_spacing)
    o = s // 2
    keep = mask & (fa_map >= params.fa_min)
    if valid is not None:
        keep &= np.asarray(valid, dtype=bool)
    sub = keep[o::s, o::s, o::s]
    z, y, x = np.nonzero(sub)  # C order of (z, y, x) is z-major
    pts = np.stack([x * s + o, y * s + o, z * s + o], axis=1).astype(np.float64)
    return pts + np.asarray(origin, dtype=np.float64)


def _field_dims(field: OrientationField) -> np.ndarray:
    nz, ny, nx = field.vectors.shape[1:]
    return np.array([nx, ny, nz], dtype=np.float64)


def _inside(q: np.ndarray, dims: np.ndarray) -> np.ndarray:
    return np.all((q >= 0) & (q <= dims - 1), axis=1)


def _interp(vectors: np.ndarray, dims: np.ndarray, q: np.ndarray, ref: np.ndarray):
    """Sign-coherent trilinear interpolation at local coordinates ``q`` (N, 3).

    Returns unit directions ``(N, 3)`` and a success flag per point.
    """
    inside = _inside(q, dims)
    qc = np.where(inside[:, None], q, 0.0)
    top = np.maximum(dims.astype(np.intp) - 1, 0)
    i0 = np.minimum(np.floor(qc).astype(np.intp), np.maximum(top - 1, 0))
    t = qc - i0
    i1 = np.minimum(i0 + 1, top)
    acc = np.zeros_like(qc)
    for dz in (0, 1):
        iz = i1[:, 2] if dz else i0[:, 2]
        wz = t[:, 2] if dz else 1.0 - t[:, 2]
        for dy in (0, 1):
            iy = i1[:, 1] if dy else i0[:, 1]
            wy = t[:, 1] if dy else 1.0 - t[:, 1]
            for dx in (0, 1):
                ix = i1[:, 0] if dx else i0[:, 0]
                wx = t[:, 0] if dx else 1.0 - t[:, 0]
                v = vectors[:, iz, iy, ix].astype(np.float64).T
                dot = v[:, 0] * ref[:, 0] + v[:, 1] * ref[:, 1] + v[:, 2] * ref[:, 2]
                w = wz * wy * wx * np.where(dot < 0, -1.0, 1.0)
                # degenerate neighbors are zero vectors and drop out here
                acc += w[:, None] * v
    norm = np.sqrt(acc[:, 0] ** 2 + acc[:, 1] ** 2 + acc[:, 2] ** 2)
    ok = inside & (norm >= MIN_NORM)
    out = acc / np.where(ok, norm, 1.0)[:, None]
    return out, ok


def interpolate_direction(field: OrientationField, p, reference) -> np.ndarray:
    """Unit fiber direction at voxel-space point ``p``, sign-aligned with ``reference``.

    Parameters
    ----------
    field : OrientationField
        Fiber vectors over ``field.box``; zero vectors mark degenerate voxels.
    p : sequence of 3 floats
        Point ``(x, y, z)``; must lie within the voxel-center hull of the box.
    reference : sequence of 3 floats
        Unit vector the neighbors are flipped toward.

    Raises
    ------
    InterpolationError
        Point outside the field, all eight neighbors degenerate, or the
        weighted sum shorter than 1e-6.
    """
    dims = _field_dims(field)
    q = np.asarray(p, dtype=np.float64)[None, :] - np.asarray(field.box.lo, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)[None, :]
    if not _inside(q, dims)[0]:
        raise InterpolationError(f"point {tuple(p)} is outside the field box {field.box}")
    d, ok = _interp(field.vectors, dims, q, ref)
    if not ok[0]:
        raise InterpolationError(f"no usable fiber direction near {tuple(p)}")
    return d[0]


def _nearest(q: np.ndarray, dims: np.ndarray):
    idx = np.floor(q + 0.5).astype(np.intp)
    top = dims.astype(np.intp) - 1
    idx = np.clip(idx, 0, top)
    return idx[:, 2], idx[:, 1], idx[:, 0]


def _admissible(field: OrientationField, mask, q, dims, fa_min):
    ok = _inside(q, dims)
    qc = np.where(ok[:, None], q, 0.0)
    iz, iy, ix = _nearest(qc, dims)
    ok &= field.fa[iz, iy, ix] >= fa_min
    if mask is not None:
        ok &= mask[iz, iy, ix] != 0
    return ok


def _integrate(field: OrientationField, mask, q0: np.ndarray, d0: np.ndarray, params: TractoParams):
    """March every line from ``q0`` along ``d0``; returns a list of (k, 3) point arrays (seed excluded)."""
    dims = _field_dims(field)
    h = float(params.step)
    cos_max = math.cos(math.radians(params.max_angle_deg))
    n = len(q0)
    pos = q0.copy()
    ref = d0.copy()
    alive = np.arange(n)
    history = []  # (line indices, positions) per step
    for _ in range(int(params.max_steps)):
        if alive.size == 0:
            break
        p, r = pos[alive], ref[alive]
        k1, ok = _interp(field.vectors, dims, p, r)
        k2, ok2 = _interp(field.vectors, dims, p + (0.5 * h) * k1, k1)
        k3, ok3 = _interp(field.vectors, dims, p + (0.5 * h) * k2, k2)
        k4, ok4 = _interp(field.vectors, dims, p + h * k3, k3)
        d = k1 + 2.0 * k2 + 2.0 * k3 + k4
        norm = np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2 + d[:, 2] ** 2)
        ok &= ok2 & ok3 & ok4 & (norm >= MIN_NORM)
        d = d / np.where(ok, norm, 1.0)[:, None]
        turn = d[:, 0] * r[:, 0] + d[:, 1] * r[:, 1] + d[:, 2] * r[:, 2]
        ok &= turn >= cos_max
        new = p + h * d
        ok &= _admissible(field, mask, new, dims, params.fa_min)
        alive = alive[ok]
        pos[alive] = new[ok]
        ref[alive] = d[ok]
        history.append((alive, new[ok]))
    if not history:
        return [np.empty((0, 3)) for _ in range(n)]
    line_of = np.concatenate([idx for idx, _ in history])
    pts = np.concatenate([p for _, p in history])
    order = np.argsort(line_of, kind="stable")  # history is in step order
    counts = np.bincount(line_of, minlength=n)
    return np.split(pts[order], np.cumsum(counts)[:-1])


def _tangents(points: np.ndarray) -> np.ndarray:
    t = np.empty_like(points)
    if len(points) >= 3:
        t[1:-1] = points[2:] - points[:-2]
    t[0] = points[1] - points[0]
    t[-1] = points[-1] - points[-2]
    return t


def track(field: OrientationField, seeds, params: TractoParams, axis: AxisModel | None = None,
          mask=None, r_min: float = R_MIN) -> list[Streamline]:
    """Integrate from every seed in both directions; rejected seeds are left out.

    Parameters
    ----------
    field : OrientationField
        Fiber vectors and FA over ``field.box``.
    seeds : array-like (n, 3)
        Voxel-space seed points ``(x, y, z)``.
    params : TractoParams
    axis : AxisModel, optional
        Long axis for per-point helical angles; without it HA is SENTINEL.
    mask : array-like, optional
        Tissue mask congruent with the field; lines stop on leaving it.

    Returns
    -------
    list of Streamline
        In seed order, with ``seed_index`` the row of ``seeds``.

    Raises
    ------
    ValueError
        A seed lies outside the field box.
    """
    seeds = np.asarray(seeds, dtype=np.float64).reshape(-1, 3)
    dims = _field_dims(field)
    lo = np.asarray(field.box.lo, dtype=np.float64)
    q = seeds - lo
    if not np.all(_inside(q, dims)):
        bad = int(np.nonzero(~_inside(q, dims))[0][0])
        raise ValueError(f"seed {tuple(seeds[bad])} is outside the field box {field.box}")
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != field.fa.shape:
            raise ValueError("mask does not match the field")
    lines = []
    for b0 in range(0, len(seeds), SEED_BATCH):
        qb = q[b0: b0 + SEED_BATCH]
        iz, iy, ix = _nearest(qb, dims)
        f0 = field.vectors[:, iz, iy, ix].astype(np.float64).T
        usable = _admissible(field, mask, qb, dims, params.fa_min) & np.any(f0 != 0, axis=1)
        start = np.nonzero(usable)[0]
        if start.size == 0:
            continue
        d0 = fiber_direction_batch(f0[start].T).T
        d0 = d0 / np.sqrt(np.sum(d0 * d0, axis=1))[:, None]
        qs = qb[start]
        fwd = _integrate(field, mask, qs, d0, params)
        bwd = _integrate(field, mask, qs, -d0, params)
        for j, s in enumerate(start):
            pts = np.concatenate([bwd[j][::-1], qs[j][None, :], fwd[j]]) + lo
            if len(pts) < 2 or params.step * (len(pts) - 1) < params.min_length:
                continue
            if axis is not None:
                ha = helical_angles_along(pts, _tangents(pts), axis, r_min)
            else:
                ha = np.full(len(pts), SENTINEL)
            lines.append(Streamline(pts, ha, b0 + int(s), params.step))
    return lines


def integrate_streamline(field: OrientationField, seed, params: TractoParams, axis: AxisModel | None = None,
                         mask=None) -> Streamline | None:
    """Single-seed tracking; ``None`` when the seed is rejected or the line is too short."""
    out = track(field, np.asarray(seed, dtype=np.float64)[None, :], params, axis, mask)
    return out[0] if out else None


def filter_streamlines(lines, params: TractoParams, target_count: int | None = None) -> list[Streamline]:
    """Drop lines shorter than ``min_length``, order by seed, optionally subsample.

    Subsampling keeps positions ``i * n // target_count`` of the seed-ordered
    survivors for ``i = 0 .. target_count - 1``.
    """
    kept = [ln for ln in lines if ln.length >= params.min_length]
    kept.sort(key=lambda ln: ln.seed_index)
    if target_count is not None:
        if target_count < 0:
            raise ValueError("target_count must be >= 0")
        n = len(kept)
        if target_count < n:
            kept = [kept[i * n // target_count] for i in range(target_count)]
    return kept

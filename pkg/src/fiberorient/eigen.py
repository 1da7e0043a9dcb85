"""Symmetric 3x3 eigendecomposition, vectorized over voxels.

Eigenvalues come from the trigonometric solution of the characteristic
polynomial.  The eigenvector of the best separated eigenvalue is taken from
row cross products of ``A - lambda I``; the remaining pair is resolved by a
2x2 rotation in its orthogonal complement, which keeps the triple
orthonormal even for repeated eigenvalues.  Voxels whose reconstruction
residual is still too large are redone with cyclic Jacobi sweeps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

RESIDUAL_TOL = 1e-4
CLAMP_TOL = 1e-6


@dataclass(frozen=True)
class Sym3:
    sxx: float
    syy: float
    szz: float
    sxy: float
    sxz: float
    syz: float

    def as_matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.sxx, self.sxy, self.sxz],
                [self.sxy, self.syy, self.syz],
                [self.sxz, self.syz, self.szz],
            ],
            dtype=np.float64,
        )

    @classmethod
    def from_matrix(cls, m) -> Sym3:
        m = np.asarray(m, dtype=np.float64)
        return cls(m[0, 0], m[1, 1], m[2, 2], m[0, 1], m[0, 2], m[1, 2])


@dataclass(frozen=True)
class EigenTriple:
    lambdas: tuple[float, float, float]
    vectors: np.ndarray  # rows e1, e2, e3

    @property
    def e1(self) -> np.ndarray:
        return self.vectors[0]

    @property
    def e2(self) -> np.ndarray:
        return self.vectors[1]

    @property
    def e3(self) -> np.ndarray:
        return self.vectors[2]


def _cross(a, b):
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def _matvec(s, v):
    a, b, c, d, e, f = s
    return (
        a * v[0] + d * v[1] + e * v[2],
        d * v[0] + b * v[1] + f * v[2],
        e * v[0] + f * v[1] + c * v[2],
    )


def _dot(u, v):
    return u[0] * v[0] + u[1] * v[1] + u[2] * v[2]


def _analytic(s: np.ndarray):
    """Analytic solve for a ``(6, N)`` float64 batch, returning unsorted pairs."""
    n = s.shape[1]
    scale = np.max(np.abs(s), axis=0)
    zero = scale == 0
    s = s / np.where(zero, 1.0, scale)
    a, b, c, d, e, f = s

    q = (a + b + c) / 3.0
    p1 = d * d + e * e + f * f
    p2 = (a - q) ** 2 + (b - q) ** 2 + (c - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    flat = p == 0
    pp = np.where(flat, 1.0, p)
    b00, b11, b22 = (a - q) / pp, (b - q) / pp, (c - q) / pp
    b01, b02, b12 = d / pp, e / pp, f / pp
    det = b00 * (b11 * b22 - b12 * b12) - b01 * (b01 * b22 - b12 * b02) + b02 * (b01 * b12 - b11 * b02)
    r = np.clip(det / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    l1 = q + 2.0 * p * np.cos(phi)
    l3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    l2 = 3.0 * q - l1 - l3

    iso = np.where(l1 - l2 >= l2 - l3, l1, l3)
    m0 = (a - iso, d, e)
    m1 = (d, b - iso, f)
    m2 = (e, f, c - iso)
    crosses = [_cross(m0, m1), _cross(m0, m2), _cross(m1, m2)]
    norms = np.stack([_dot(cr, cr) for cr in crosses])
    pick = np.argmax(norms, axis=0)
    best = np.take_along_axis(norms, pick[None], axis=0)[0]
    v = [np.choose(pick, [cr[k] for cr in crosses]) for k in range(3)]
    ok = best > 0
    inv = 1.0 / np.sqrt(np.where(ok, best, 1.0))
    v = [np.where(ok, v[0] * inv, 0.0), np.where(ok, v[1] * inv, 0.0), np.where(ok, v[2] * inv, 1.0)]

    use_xz = np.abs(v[0]) > np.abs(v[1])
    nxz = np.sqrt(v[0] ** 2 + v[2] ** 2)
    nyz = np.sqrt(v[1] ** 2 + v[2] ** 2)
    nxz = np.where(nxz == 0, 1.0, nxz)
    nyz = np.where(nyz == 0, 1.0, nyz)
    u = [
        np.where(use_xz, -v[2] / nxz, 0.0),
        np.where(use_xz, 0.0, v[2] / nyz),
        np.where(use_xz, v[0] / nxz, -v[1] / nyz),
    ]
    w = _cross(v, u)
    su = (a, b, c, d, e, f)
    au = _matvec(su, u)
    aw = _matvec(su, w)
    alpha = _dot(u, au)
    beta = _dot(w, au)
    gamma = _dot(w, aw)
    theta = 0.5 * np.arctan2(2.0 * beta, alpha - gamma)
    cs, sn = np.cos(theta), np.sin(theta)
    x1 = [cs * u[k] + sn * w[k] for k in range(3)]
    x2 = [-sn * u[k] + cs * w[k] for k in range(3)]
    mu1 = alpha * cs * cs + 2.0 * beta * cs * sn + gamma * sn * sn
    mu2 = alpha * sn * sn - 2.0 * beta * cs * sn + gamma * cs * cs
    muv = _dot(v, _matvec(su, v))

    lam = np.stack([muv, mu1, mu2])
    vecs = np.stack([np.stack(v), np.stack(x1), np.stack(x2)])  # (pair, comp, N)
    lam = np.where(flat, q, lam)
    eye = np.eye(3)[:, :, None]
    vecs = np.where(flat, eye, vecs)
    lam = lam * scale
    vecs = np.where(zero, eye, vecs)
    return lam, vecs


def _sort_desc(lam, vecs):
    order = np.argsort(-lam, axis=0, kind="stable")
    lam = np.take_along_axis(lam, order, axis=0)
    vecs = np.take_along_axis(vecs, order[:, None, :], axis=0)
    return lam, vecs


def _residual(s, lam, vecs):
    rec = np.zeros_like(s)
    pairs = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
    for i in range(3):
        for c, (j, k) in enumerate(pairs):
            rec[c] += lam[i] * vecs[i, j] * vecs[i, k]
    return np.max(np.abs(rec - s), axis=0)


def jacobi_eigh(m, max_sweeps: int = 64):
    """Cyclic Jacobi for one symmetric 3x3 matrix; returns unsorted (values, columns)."""
    a = [[float(m[i][j]) for j in range(3)] for i in range(3)]
    v = [[1.0 if i == j else 0.0 for j in range(3)] for i in range(3)]
    for _ in range(max_sweeps):
        off = abs(a[0][1]) + abs(a[0][2]) + abs(a[1][2])
        if off == 0.0:
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = a[p][q]
            if apq == 0.0:
                continue
            tau = (a[q][q] - a[p][p]) / (2.0 * apq)
            t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
            c = 1.0 / math.sqrt(1.0 + t * t)
            s = t * c
            for k in range(3):
                akp, akq = a[k][p], a[k][q]
                a[k][p] = c * akp - s * akq
                a[k][q] = s * akp + c * akq
            for k in range(3):
                apk, aqk = a[p][k], a[q][k]
                a[p][k] = c * apk - s * aqk
                a[q][k] = s * apk + c * aqk
            for k in range(3):
                vkp, vkq = v[k][p], v[k][q]
                v[k][p] = c * vkp - s * vkq
                v[k][q] = s * vkp + c * vkq
    return [a[0][0], a[1][1], a[2][2]], v


def eigendecompose_batch(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a ``(6, N)`` batch of symmetric tensors.

    Components are ordered sxx, syy, szz, sxy, sxz, syz.  Returns eigenvalues
    ``(3, N)`` sorted descending and eigenvectors ``(3, 3, N)`` where
    ``vecs[i]`` is the unit eigenvector of ``lam[i]``.  No clamping is applied.
    """
    s = np.asarray(s, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("tensor components must be finite")
    lam, vecs = _sort_desc(*_analytic(s))
    res = _residual(s, lam, vecs)
    bad = np.nonzero(res > RESIDUAL_TOL * np.maximum(1.0, lam[0]))[0]
    for i in bad:
        m = Sym3(*s[:, i]).as_matrix()
        vals, cols = jacobi_eigh(m)
        lam[:, i] = vals
        vecs[:, :, i] = np.asarray(cols).T
    if bad.size:
        sub_lam, sub_vecs = _sort_desc(lam[:, bad], vecs[:, :, bad])
        lam[:, bad] = sub_lam
        vecs[:, :, bad] = sub_vecs
    return lam, vecs


def eigendecompose(s: Sym3) -> EigenTriple:
    """Sorted eigenvalues and orthonormal eigenvectors of one tensor.

    Negative eigenvalues within ``CLAMP_TOL * lambda1`` are clamped to zero.
    """
    comps = np.array([[s.sxx], [s.syy], [s.szz], [s.sxy], [s.sxz], [s.syz]], dtype=np.float64)
    lam, vecs = eigendecompose_batch(comps)
    lam = lam[:, 0]
    tol = CLAMP_TOL * max(lam[0], 0.0)
    lam = np.where((lam < 0) & (lam >= -tol), 0.0, lam)
    return EigenTriple(tuple(float(x) for x in lam), vecs[:, :, 0].copy())


def fiber_direction_batch(e3: np.ndarray) -> np.ndarray:
    """Sign-normalize ``(3, N)`` vectors: the largest-magnitude component is made positive.

    Ties prefer z, then y, then x.
    """
    mag = np.abs(e3)
    pick = np.where(
        (mag[2] >= mag[1]) & (mag[2] >= mag[0]), 2, np.where(mag[1] >= mag[0], 1, 0)
    )
    lead = np.take_along_axis(e3, pick[None], axis=0)[0]
    sign = np.where(lead < 0, -1.0, 1.0)
    return e3 * sign


def fiber_direction(t: EigenTriple) -> np.ndarray:
    """Fiber direction (smallest-eigenvalue eigenvector) with the deterministic sign rule."""
    return fiber_direction_batch(np.asarray(t.e3, dtype=np.float64)[:, None])[:, 0]

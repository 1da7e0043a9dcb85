"""Reference implementations written independently of the package code.

Each oracle is deliberately naive: explicit Python loops over plain floats,
so its correctness can be checked by reading it.
"""
from __future__ import annotations

import math

import numpy as np


def gaussian_taps(sigma: float, truncate: float = 4.0) -> list[float]:
    """Plain Gaussian samples on [-R, R], normalized to sum 1."""
    r = int(math.ceil(truncate * sigma))
    w = [math.exp(-0.5 * (k / sigma) ** 2) for k in range(-r, r + 1)]
    total = 0.0
    for v in w:
        total += v
    return [v / total for v in w]


def derivative_taps(sigma: float, truncate: float = 4.0) -> list[float]:
    """Gaussian-derivative samples for correlation, scaled so sum_k k * w_k = 1 (unit ramp -> 1)."""
    r = int(math.ceil(truncate * sigma))
    w = [k * math.exp(-0.5 * (k / sigma) ** 2) for k in range(-r, r + 1)]
    moment = 0.0
    for k, v in zip(range(-r, r + 1), w):
        moment += k * v
    return [v / moment for v in w]


def _direct_pass(vol: np.ndarray, taps: list[float], axis: int) -> np.ndarray:
    """out[i] = sum_k taps[k] * vol[i + k] along ``axis`` (0=x, 1=y, 2=z), Python floats, one float32 rounding.

    Antisymmetric taps are summed center-out over differences of mirrored samples.
    """
    nz, ny, nx = vol.shape
    n = len(taps)
    shape = [nz, ny, nx]
    shape[2 - axis] -= n - 1
    out = np.zeros(shape, dtype=np.float32)
    data = vol.tolist()
    step = [(0, 0, 1), (0, 1, 0), (1, 0, 0)][axis]
    r = n // 2
    antisym = n > 1 and taps[r] == 0.0 and all(taps[r + j] == -taps[r - j] for j in range(1, r + 1))

    def at(z, y, x, k):
        return float(data[z + k * step[0]][y + k * step[1]][x + k * step[2]])

    for z in range(shape[0]):
        for y in range(shape[1]):
            for x in range(shape[2]):
                acc = 0.0
                if antisym:
                    for j in range(1, r + 1):
                        acc += (at(z, y, x, r + j) - at(z, y, x, r - j)) * taps[r + j]
                else:
                    for k in range(n):
                        acc += taps[k] * at(z, y, x, k)
                out[z, y, x] = acc
    return out


def direct_gaussian_derivative(vol: np.ndarray, gauss, deriv, axis: int) -> np.ndarray:
    """Valid-region separable Gaussian derivative along ``axis`` with passes in x, y, z order.

    ``gauss`` and ``deriv`` are the tap lists; each pass rounds to float32.
    """
    g = [float(w) for w in gauss]
    d = [float(w) for w in deriv]
    out = np.asarray(vol, dtype=np.float32)
    for ax in range(3):
        out = _direct_pass(out, d if ax == axis else g, ax)
    return out


def jacobi_eigenvalues(m, rel_tol: float = 1e-20, max_sweeps: int = 100):
    """Cyclic Jacobi on a symmetric 3x3 matrix.

    Uses the classic rotation angle ``theta = (a_qq - a_pp) / (2 a_pq)`` and
    full matrix products ``J^T A J``; sweeps stop once the off-diagonal
    mass drops below ``rel_tol`` times the largest entry.  Returns (eigenvalues descending,
    eigenvectors as columns in the same order).
    """
    a = np.array(m, dtype=np.float64)
    v = np.eye(3)
    for _ in range(max_sweeps):
        off = abs(a[0, 1]) + abs(a[0, 2]) + abs(a[1, 2])
        if off <= rel_tol * np.max(np.abs(a)):
            break
        for p in range(2):
            for q in range(p + 1, 3):
                if a[p, q] == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(a[p, q]) < 1e-150 * abs(diff):
                    t = a[p, q] / diff  # theta overflows; tan of the rotation is ~ 1 / (2 theta)
                else:
                    theta = diff / (2.0 * a[p, q])
                    t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                j = np.eye(3)
                j[p, p] = c
                j[q, q] = c
                j[p, q] = s
                j[q, p] = -s
                a = j.T @ a @ j
                v = v @ j
    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], v[:, order]


def read_vtk_polydata(path):
    """Minimal legacy ASCII VTK polydata reader.

    Returns ``(points (n, 3) float64, lines list of index lists, scalars
    dict name -> float64 array)``.
    """
    with open(path, encoding="ascii") as f:
        text = f.read()
    rows = text.split("\n")
    if not rows[0].startswith("# vtk DataFile"):
        raise ValueError("not a legacy VTK file")
    if rows[2].strip() != "ASCII":
        raise ValueError("only ASCII is supported")
    tokens = " ".join(rows[3:]).split()
    pos = 0

    def take(k):
        nonlocal pos
        out = tokens[pos:pos + k]
        pos += k
        return out

    points, lines, scalars = None, [], {}
    n_points = 0
    while pos < len(tokens):
        key = take(1)[0]
        if key == "DATASET":
            if take(1)[0] != "POLYDATA":
                raise ValueError("expected POLYDATA")
        elif key == "POINTS":
            n_points, _dtype = int(take(1)[0]), take(1)[0]
            points = np.array([float(t) for t in take(3 * n_points)]).reshape(n_points, 3)
        elif key == "LINES":
            n_lines, size = int(take(1)[0]), int(take(1)[0])
            used = 0
            for _ in range(n_lines):
                k = int(take(1)[0])
                lines.append([int(t) for t in take(k)])
                used += k + 1
            if used != size:
                raise ValueError(f"LINES size {size} does not match {used}")
        elif key == "POINT_DATA":
            if int(take(1)[0]) != n_points:
                raise ValueError("POINT_DATA count differs from POINTS")
        elif key == "SCALARS":
            name, _dtype, _ncomp = take(3)
            if take(2) != ["LOOKUP_TABLE", "default"]:
                raise ValueError("expected default lookup table")
            scalars[name] = np.array([float(t) for t in take(n_points)])
        else:
            raise ValueError(f"unexpected token {key!r}")
    return points, lines, scalars

"""Writers for angle maps, vector fields, 8-bit previews and VTK polylines."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .cardiac_frame import SENTINEL
from .eigen import fiber_direction_batch
from .structure_tensor import OrientationField
from .volume_io import write_volume

VTK_TITLE = "fiberorient streamlines"


def preview_bytes(angles, valid) -> np.ndarray:
    """Map degrees in [-90, 90] linearly to [0, 255], rounding halves up; invalid voxels become 0."""
    a = np.asarray(angles, dtype=np.float64)
    scaled = np.floor((np.clip(a, -90.0, 90.0) + 90.0) / 180.0 * 255.0 + 0.5)
    return np.where(np.asarray(valid, dtype=bool), scaled, 0).astype(np.uint8)


def write_pgm(path, image: np.ndarray) -> None:
    """Binary 8-bit PGM (P5)."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(image.tobytes())


def write_previews(angles, valid, directory, prefix: str = "slice", fmt: str = "pgm", z0: int = 0) -> list[Path]:
    """One grayscale image per z slice, named ``<prefix>_<z:04d>.<fmt>`` with z counted from ``z0``."""
    if fmt not in ("pgm", "png"):
        raise ValueError(f"preview format must be 'pgm' or 'png', got {fmt!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data = preview_bytes(angles, valid)
    paths = []
    for z, plane in enumerate(data):
        p = directory / f"{prefix}_{z0 + z:04d}.{fmt}"
        if fmt == "pgm":
            write_pgm(p, plane)
        else:
            from PIL import Image

            Image.fromarray(plane).save(p)
        paths.append(p)
    return paths


def write_angle_map(values, valid, path, spacing=(1.0, 1.0, 1.0), preview_dir=None,
                    preview_format: str = "pgm", overwrite: bool = False) -> None:
    """Float32 dataset with ``SENTINEL`` at invalid voxels, plus optional per-slice previews."""
    values = np.asarray(values)
    valid = np.asarray(valid, dtype=bool)
    if values.shape != valid.shape:
        raise ValueError(f"map shape {values.shape} differs from validity shape {valid.shape}")
    out = np.where(valid, values, SENTINEL).astype(np.float32)
    write_volume(path, out, dtype="float32", spacing=spacing, overwrite=overwrite)
    if preview_dir is not None:
        write_previews(values, valid, preview_dir, prefix=Path(path).name, fmt=preview_format)


def write_vector_field(field: OrientationField, directory, spacing=(1.0, 1.0, 1.0), overwrite: bool = False) -> None:
    """Datasets ``fx``, ``fy``, ``fz`` (sign-normalized fibers) and ``fa`` under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    v = np.asarray(field.vectors, dtype=np.float64)
    shape = v.shape[1:]
    flat = fiber_direction_batch(v.reshape(3, -1)).reshape((3,) + shape) + 0.0
    for k, name in enumerate(("fx", "fy", "fz")):
        write_volume(directory / name, flat[k].astype(np.float32), dtype="float32", spacing=spacing,
                     overwrite=overwrite)
    write_volume(directory / "fa", np.asarray(field.fa, dtype=np.float32), dtype="float32", spacing=spacing,
                 overwrite=overwrite)


def _fmt(v: float) -> str:
    s = f"{v:.6f}"
    return "0.000000" if s == "-0.000000" else s


def write_vtk_polylines(lines, path, spacing=(1.0, 1.0, 1.0), title: str = VTK_TITLE) -> None:
    """Legacy ASCII VTK polydata with one polyline per streamline and per-point helical angle.

    Coordinates are voxel positions scaled by ``spacing``; every number is
    written with six decimals.
    """
    lines = list(lines)
    if not lines:
        raise ValueError("no streamlines to export")
    for ln in lines:
        if len(ln.points) < 2:
            raise ValueError(f"streamline from seed {ln.seed_index} has fewer than two points")
    sx, sy, sz = (float(s) for s in spacing)
    n = sum(len(ln.points) for ln in lines)
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET POLYDATA", f"POINTS {n} float"]
    for ln in lines:
        for x, y, z in np.asarray(ln.points, dtype=np.float64):
            out.append(f"{_fmt(x * sx)} {_fmt(y * sy)} {_fmt(z * sz)}")
    out.append(f"LINES {len(lines)} {len(lines) + n}")
    start = 0
    for ln in lines:
        k = len(ln.points)
        out.append(" ".join([str(k)] + [str(i) for i in range(start, start + k)]))
        start += k
    out.append(f"POINT_DATA {n}")
    out.append("SCALARS helix_angle float 1")
    out.append("LOOKUP_TABLE default")
    for ln in lines:
        out.extend(_fmt(float(h)) for h in ln.ha)
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write("\n".join(out) + "\n")

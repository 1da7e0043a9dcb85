"""Raw volume datasets with text sidecars, plus read-only image-stack ingestion.

A dataset named ``NAME`` is the pair ``NAME.meta`` (``key = value`` text) and
``NAME.raw`` (little-endian voxels, x fastest, then y, then z).  In memory a
volume is a numpy array of shape ``(nz, ny, nx)`` so C order matches the file
layout.  Boxes are always given in ``(x, y, z)`` order.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

DTYPES = {
    "uint8": np.dtype("<u1"),
    "uint16": np.dtype("<u2"),
    "float32": np.dtype("<f4"),
}
STACK_SUFFIXES = {".tif", ".tiff", ".png", ".pgm", ".bmp"}
_PIL_MODES = {"L": "uint8", "I;16": "uint16", "I;16L": "uint16", "I;16B": "uint16", "F": "float32"}
_MAX_VOXELS = 2**62


class MetadataError(ValueError):
    """Malformed or inconsistent volume metadata."""


@dataclass(frozen=True)
class VolumeMeta:
    dims: tuple[int, int, int]
    dtype: str
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or len(spacing) != 3:
            raise MetadataError("dims and spacing need three components")
        for name, n in zip("xyz", dims):
            if n < 1:
                raise MetadataError(f"n{name} must be >= 1, got {n}")
        for name, s in zip("xyz", spacing):
            if not np.isfinite(s) or s <= 0:
                raise MetadataError(f"s{name} must be > 0, got {s}")
        if self.dtype not in DTYPES:
            raise MetadataError(f"unsupported dtype {self.dtype!r}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def shape(self) -> tuple[int, int, int]:
        """Array shape ``(nz, ny, nx)``."""
        return self.dims[::-1]

    @property
    def itemsize(self) -> int:
        return DTYPES[self.dtype].itemsize

    @property
    def nbytes(self) -> int:
        return int(np.prod(self.dims, dtype=object)) * self.itemsize

    @property
    def box(self) -> VoxelBox:
        return VoxelBox((0, 0, 0), self.dims)


@dataclass(frozen=True)
class VoxelBox:
    """Half-open voxel box; ``lo`` may be negative for padded reads."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    def __post_init__(self):
        lo = tuple(int(v) for v in self.lo)
        hi = tuple(int(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("box corners need three components")
        if any(h <= l for l, h in zip(lo, hi)):
            raise ValueError(f"empty box lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def size(self) -> tuple[int, int, int]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    @property
    def shape(self) -> tuple[int, int, int]:
        """Array shape ``(nz, ny, nx)`` of a block covering this box."""
        return self.size[::-1]

    @property
    def volume(self) -> int:
        n = 1
        for s in self.size:
            n *= s
        return n

    def expand(self, margin: int | Sequence[int]) -> VoxelBox:
        m = _triple(margin)
        return VoxelBox(
            tuple(l - k for l, k in zip(self.lo, m)),
            tuple(h + k for h, k in zip(self.hi, m)),
        )

    def shrink(self, margin: int | Sequence[int]) -> VoxelBox:
        return self.expand(tuple(-k for k in _triple(margin)))

    def contains(self, other: VoxelBox) -> bool:
        return all(a <= b for a, b in zip(self.lo, other.lo)) and all(
            a >= b for a, b in zip(self.hi, other.hi)
        )

    def intersect(self, other: VoxelBox) -> VoxelBox | None:
        lo = tuple(max(a, b) for a, b in zip(self.lo, other.lo))
        hi = tuple(min(a, b) for a, b in zip(self.hi, other.hi))
        if any(h <= l for l, h in zip(lo, hi)):
            return None
        return VoxelBox(lo, hi)

    def slices_within(self, outer: VoxelBox) -> tuple[slice, slice, slice]:
        """Index expression selecting this box from an array covering ``outer``."""
        if not outer.contains(self):
            raise ValueError(f"{self} is not inside {outer}")
        return tuple(
            slice(l - ol, h - ol)
            for l, h, ol in zip(self.lo[::-1], self.hi[::-1], outer.lo[::-1])
        )


def _triple(v) -> tuple[int, int, int]:
    if np.ndim(v) == 0:
        return (int(v),) * 3
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ValueError("expected three components")
    return t


@dataclass
class ScalarBlock:
    box: VoxelBox
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.box.shape:
            raise ValueError(
                f"block values shape {self.values.shape} does not match box shape {self.box.shape}"
            )


@dataclass
class MaskBlock:
    box: VoxelBox
    values: np.ndarray  # uint8, 0 background / 1 tissue

    def __post_init__(self):
        if self.values.shape != self.box.shape:
            raise ValueError("mask values do not match box shape")


def dataset_paths(path) -> tuple[Path, Path]:
    """Return ``(meta, raw)`` paths for a dataset given its stem or either file."""
    p = Path(path)
    if p.suffix in (".meta", ".raw"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".meta"), p.with_name(p.name + ".raw")


def _parse_triple(text: str, cast, key: str):
    parts = [s.strip() for s in text.split(",")]
    if len(parts) != 3:
        raise MetadataError(f"{key} needs three comma-separated values, got {text!r}")
    try:
        return tuple(cast(s) for s in parts)
    except ValueError:
        raise MetadataError(f"malformed {key}: {text!r}") from None


def parse_sidecar(text: str) -> VolumeMeta:
    fields = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise MetadataError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in ("dims", "dtype", "spacing"):
            raise MetadataError(f"line {lineno}: unknown key {key!r}")
        fields[key] = value
    for key in ("dims", "dtype"):
        if key not in fields:
            raise MetadataError(f"missing required key {key!r}")
    dims = _parse_triple(fields["dims"], int, "dims")
    spacing = _parse_triple(fields.get("spacing", "1,1,1"), float, "spacing")
    return VolumeMeta(dims, fields["dtype"], spacing)


def format_sidecar(meta: VolumeMeta) -> str:
    dims = ",".join(str(n) for n in meta.dims)
    spacing = ",".join(repr(s) for s in meta.spacing)
    return f"dims = {dims}\ndtype = {meta.dtype}\nspacing = {spacing}\n"


def _stack_files(directory: Path) -> list[Path]:
    files = sorted(
        p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in STACK_SUFFIXES
    )
    if not files:
        raise FileNotFoundError(f"no image slices found in {directory}")
    return files


def _read_slice(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        if img.mode not in _PIL_MODES:
            raise MetadataError(f"{path.name}: unsupported pixel mode {img.mode!r}")
        return np.asarray(img).astype(DTYPES[_PIL_MODES[img.mode]], copy=False)


def _stack_meta(directory: Path) -> VolumeMeta:
    from PIL import Image

    files = _stack_files(directory)
    modes, sizes = set(), set()
    for f in files:
        with Image.open(f) as img:
            modes.add(img.mode)
            sizes.add(img.size)
    if len(sizes) != 1:
        raise MetadataError(f"inconsistent slice dimensions in {directory}: {sorted(sizes)}")
    dtypes = {_PIL_MODES.get(m) for m in modes}
    if None in dtypes or len(dtypes) != 1:
        raise MetadataError(f"unsupported or mixed pixel modes in {directory}: {sorted(modes)}")
    (nx, ny), = sizes
    return VolumeMeta((nx, ny, len(files)), dtypes.pop())


def read_metadata(path) -> VolumeMeta:
    """Read volume metadata from a sidecar file (or dataset stem) or an image-stack directory."""
    p = Path(path)
    if p.is_dir():
        return _stack_meta(p)
    meta_path, _ = dataset_paths(p)
    if not meta_path.is_file():
        raise FileNotFoundError(f"metadata file not found: {meta_path}")
    return parse_sidecar(meta_path.read_text(encoding="utf-8"))


def _clamped_indices(box: VoxelBox, dims) -> list[np.ndarray]:
    """Per-axis source indices (z, y, x order) with edge replication."""
    return [
        np.clip(np.arange(lo, hi), 0, n - 1)
        for lo, hi, n in zip(box.lo[::-1], box.hi[::-1], dims[::-1])
    ]


def _open_raw(meta: VolumeMeta, path, mode="r") -> np.memmap:
    _, raw = dataset_paths(path)
    return np.memmap(raw, dtype=DTYPES[meta.dtype], mode=mode, shape=meta.shape)


def _gather(source, meta: VolumeMeta, box: VoxelBox) -> np.ndarray:
    if box.volume >= _MAX_VOXELS:
        raise OverflowError(f"box volume {box.volume} overflows index arithmetic")
    zi, yi, xi = _clamped_indices(box, meta.dims)
    # Read the clamped bounding slab once, then replicate edges by fancy indexing.
    slab = source[zi[0]: zi[-1] + 1, yi[0]: yi[-1] + 1, xi[0]: xi[-1] + 1]
    slab = np.asarray(slab)
    return slab[np.ix_(zi - zi[0], yi - yi[0], xi - xi[0])]


def _read_native(meta: VolumeMeta, path, box: VoxelBox) -> np.ndarray:
    p = Path(path)
    if p.is_dir():
        files = _stack_files(p)
        zi, yi, xi = _clamped_indices(box, meta.dims)
        planes = {}
        out = np.empty(box.shape, dtype=DTYPES[meta.dtype])
        for k, z in enumerate(zi):
            if z not in planes:
                img = _read_slice(files[z])
                if img.shape != (meta.dims[1], meta.dims[0]):
                    raise MetadataError(f"{files[z].name}: slice shape {img.shape} differs")
                planes[z] = img[np.ix_(yi, xi)]
            out[k] = planes[z]
        return out
    return _gather(_open_raw(meta, p), meta, box)


def read_region(meta: VolumeMeta, path, box: VoxelBox) -> ScalarBlock:
    """Read ``box`` as float32, replicating edge voxels outside the volume.

    Integer voxels are converted without rescaling.
    """
    values = _read_native(meta, path, box)
    return ScalarBlock(box, np.ascontiguousarray(values, dtype=np.float32))


def read_mask_region(meta: VolumeMeta, path, box: VoxelBox) -> MaskBlock:
    """Read a mask region; any nonzero voxel counts as tissue."""
    values = _read_native(meta, path, box)
    return MaskBlock(box, (values != 0).astype(np.uint8))


def create_dataset(meta: VolumeMeta, path, overwrite: bool = False) -> None:
    """Create a zero-filled raw dataset plus its sidecar."""
    meta_path, raw_path = dataset_paths(path)
    if not meta_path.parent.is_dir():
        raise FileNotFoundError(f"parent directory does not exist: {meta_path.parent}")
    if not overwrite and (meta_path.exists() or raw_path.exists()):
        raise FileExistsError(f"dataset already exists: {raw_path}")
    with open(raw_path, "wb") as f:
        f.truncate(meta.nbytes)
    meta_path.write_text(format_sidecar(meta), encoding="utf-8")


def ensure_dataset(meta: VolumeMeta, path) -> None:
    """Create the dataset unless an identical one exists; existing bytes are never zeroed.

    Safe to call from several independent jobs sharing one output directory.
    """
    meta_path, raw_path = dataset_paths(path)
    if meta_path.exists():
        existing = read_metadata(meta_path)
        if existing != meta:
            raise MetadataError(f"{meta_path} holds {existing}, expected {meta}")
    fd = os.open(raw_path, os.O_RDWR | os.O_CREAT, 0o644)
    try:
        size = os.fstat(fd).st_size
        if size not in (0, meta.nbytes):
            raise MetadataError(f"{raw_path} has {size} bytes, expected {meta.nbytes}")
        if size == 0:
            os.ftruncate(fd, meta.nbytes)
    finally:
        os.close(fd)
    if not meta_path.exists():
        meta_path.write_text(format_sidecar(meta), encoding="utf-8")


def write_region(meta: VolumeMeta, path, box: VoxelBox, block: ScalarBlock) -> None:
    """Write ``block`` into an existing dataset; only voxels inside ``box`` change."""
    if block.box != box:
        raise ValueError(f"block box {block.box} differs from target box {box}")
    if not meta.box.contains(box):
        raise ValueError(f"write box {box} is outside volume dims {meta.dims}")
    _, raw_path = dataset_paths(path)
    if raw_path.stat().st_size != meta.nbytes:
        raise ValueError(f"{raw_path} size does not match metadata")
    dtype = DTYPES[meta.dtype]
    values = np.asarray(block.values)
    if dtype.kind == "u":
        info = np.iinfo(dtype)
        if not (np.all(values == np.round(values)) and values.min() >= info.min and values.max() <= info.max):
            raise ValueError(f"values not representable as {meta.dtype}")
    mm = _open_raw(meta, path, mode="r+")
    mm[box.slices_within(meta.box)] = values.astype(dtype)
    mm.flush()
    del mm


def read_volume(path) -> np.ndarray:
    """Whole volume as float32 ``(nz, ny, nx)``."""
    meta = read_metadata(path)
    return read_region(meta, path, meta.box).values


def write_volume(path, values: np.ndarray, dtype: str | None = None, spacing=(1.0, 1.0, 1.0),
                 overwrite: bool = False) -> VolumeMeta:
    """Create a dataset from a full ``(nz, ny, nx)`` array."""
    values = np.asarray(values)
    if dtype is None:
        dtype = {np.dtype(np.uint8): "uint8", np.dtype(np.uint16): "uint16"}.get(values.dtype, "float32")
    meta = VolumeMeta(values.shape[::-1], dtype, spacing)
    create_dataset(meta, path, overwrite=overwrite)
    write_region(meta, path, meta.box, ScalarBlock(meta.box, values))
    return meta

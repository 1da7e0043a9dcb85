"""Gradient structure tensors, their eigenstructure and fractional anisotropy.

All filtering is "valid mode": a block padded by the kernel radius on every
face yields exact results on its core, so chunked and monolithic runs agree
bit for bit.  Each 1D stage sums taps in a fixed order into a float64
accumulator and rounds to float32; stages run x, then y, then z.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .eigen import eigendecompose_batch, fiber_direction_batch
from .volume_io import ScalarBlock, VoxelBox

AXES = {"x": 0, "y": 1, "z": 2}
COMPONENTS = ("sxx", "syy", "szz", "sxy", "sxz", "syz")
# Upper bound on voxels per float64 working slab inside a 1D pass.
SLAB_VOXELS = 1 << 18
# Eigen batches hold roughly 100 float64 temporaries per voxel, so they are
# capped at a fraction of the block to keep the working set proportional.
EIGEN_BATCH = 1 << 16
EIGEN_BATCH_MIN = 1 << 12


class InsufficientPaddingError(ValueError):
    """The input block does not carry enough halo for the requested output region."""


@dataclass(frozen=True)
class StructureTensorParams:
    sigma_gradient: float = 1.0
    sigma_tensor: float = 3.0
    truncate: float = 4.0

    def __post_init__(self):
        if not self.sigma_gradient > 0:
            raise ValueError(f"sigma_gradient must be > 0, got {self.sigma_gradient}")
        if not self.sigma_tensor >= 0:
            raise ValueError(f"sigma_tensor must be >= 0, got {self.sigma_tensor}")
        if not self.truncate >= 2:
            raise ValueError(f"truncate must be >= 2, got {self.truncate}")

    @property
    def gradient_radius(self) -> int:
        return kernel_radius(self.sigma_gradient, self.truncate)

    @property
    def tensor_radius(self) -> int:
        return kernel_radius(self.sigma_tensor, self.truncate)

    @property
    def halo(self) -> int:
        return self.gradient_radius + self.tensor_radius


@dataclass
class TensorBlock:
    box: VoxelBox
    components: np.ndarray  # (6, nz, ny, nx) float32 in COMPONENTS order

    def __post_init__(self):
        if self.components.shape != (6,) + self.box.shape:
            raise ValueError("tensor planes do not match box shape")


@dataclass
class OrientationField:
    """Per-voxel fiber direction, sorted eigenvalues and FA over ``box``.

    ``vectors`` has shape ``(3, nz, ny, nx)`` holding (fx, fy, fz); degenerate
    voxels store the zero vector.  ``lambdas`` is ``(3, nz, ny, nx)`` with
    lambda1 >= lambda2 >= lambda3.
    """

    box: VoxelBox
    vectors: np.ndarray
    lambdas: np.ndarray
    fa: np.ndarray

    @property
    def nondegenerate(self) -> np.ndarray:
        return np.any(self.vectors != 0, axis=0)


def kernel_radius(sigma: float, truncate: float) -> int:
    return int(math.ceil(truncate * sigma))


def gaussian_kernel(sigma: float, truncate: float = 4.0) -> np.ndarray:
    """Sampled Gaussian on ``[-R, R]``, renormalized to sum to one after truncation."""
    radius = kernel_radius(sigma, truncate)
    if radius == 0:
        return np.ones(1)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def derivative_kernel(sigma: float, truncate: float = 4.0) -> np.ndarray:
    """Sampled Gaussian derivative for correlation, scaled so a unit ramp maps to 1."""
    radius = kernel_radius(sigma, truncate)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    d = x * np.exp(-0.5 * (x / sigma) ** 2)
    return d / np.sum(x * d)


def correlate_valid(values: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """1D correlation along volume axis ``axis`` (0=x, 1=y, 2=z), valid region only.

    ``out[i] = sum_k kernel[k] * values[i + k]`` with k ascending, accumulated
    in float64, rounded once to float32.  An antisymmetric kernel (derivative)
    is summed center-out as ``sum_{j>=1} kernel[R + j] * (values[i + R + j] -
    values[i + R - j])`` so constant input gives exactly zero.  The output is
    shorter by ``len(kernel) - 1`` along ``axis``.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    taps = kernel.size
    nd_axis = 2 - axis
    n_out = values.shape[nd_axis] - taps + 1
    if n_out < 1:
        raise InsufficientPaddingError(
            f"axis {'xyz'[axis]} has {values.shape[nd_axis]} voxels, kernel needs {taps}"
        )
    out_shape = list(values.shape)
    out_shape[nd_axis] = n_out
    out = np.empty(out_shape, dtype=np.float32)

    # Slab over an axis other than the filtered one: numpy axis 0 for x/y
    # passes, numpy axis 1 for the z pass.
    slab_axis = 1 if nd_axis == 0 else 0
    plane = int(np.prod(out_shape)) // out_shape[slab_axis]
    step = max(1, SLAB_VOXELS // max(plane, 1))
    weights = [np.float64(w) for w in kernel]
    r = taps // 2
    odd = taps % 2 == 1 and kernel[r] == 0 and np.array_equal(kernel[::-1], -kernel) and taps > 1
    for s0 in range(0, out_shape[slab_axis], step):
        s1 = min(s0 + step, out_shape[slab_axis])
        idx = [slice(None)] * 3
        idx[slab_axis] = slice(s0, s1)
        src = values[tuple(idx)].astype(np.float64)
        acc_shape = list(src.shape)
        acc_shape[nd_axis] = n_out
        acc = np.zeros(acc_shape)
        tmp = np.empty(acc_shape)
        tap = [slice(None)] * 3
        if odd:
            neg = [slice(None)] * 3
            for j in range(1, r + 1):
                tap[nd_axis] = slice(r + j, r + j + n_out)
                neg[nd_axis] = slice(r - j, r - j + n_out)
                np.subtract(src[tuple(tap)], src[tuple(neg)], out=tmp)
                tmp *= weights[r + j]
                acc += tmp
        else:
            for k, w in enumerate(weights):
                tap[nd_axis] = slice(k, k + n_out)
                np.multiply(src[tuple(tap)], w, out=tmp)
                acc += tmp
        out[tuple(idx)] = acc
    return out


def _crop(block: ScalarBlock, box: VoxelBox) -> np.ndarray:
    return block.values[box.slices_within(block.box)]


def _apply_spacing(values: np.ndarray, spacing: float) -> np.ndarray:
    if spacing == 1.0:
        return values
    return (values.astype(np.float64) / spacing).astype(np.float32)


def _check_core(block: ScalarBlock, core: VoxelBox | None, halo: int) -> VoxelBox:
    try:
        limit = block.box.shrink(halo)
    except ValueError:
        limit = None
    if core is None:
        if limit is None:
            raise InsufficientPaddingError(f"block {block.box.size} too small for halo {halo}")
        return limit
    if limit is None or not limit.contains(core):
        raise InsufficientPaddingError(
            f"core {core} needs {halo} voxels of padding inside block {block.box}"
        )
    return core


def gaussian_derivative(
    block: ScalarBlock,
    axis: str,
    params: StructureTensorParams,
    spacing=(1.0, 1.0, 1.0),
    core: VoxelBox | None = None,
) -> ScalarBlock:
    """Gaussian derivative of ``block`` along ``axis`` at scale ``sigma_gradient``.

    Parameters
    ----------
    block : ScalarBlock
        Input intensities, padded by ``params.gradient_radius`` around ``core``.
    axis : {"x", "y", "z"}
        Differentiation axis.
    params : StructureTensorParams
    spacing : sequence of 3 floats
        Voxel size; the result is divided by the spacing along ``axis``.
    core : VoxelBox, optional
        Output region. Defaults to the block shrunk by the kernel radius.

    Returns
    -------
    ScalarBlock
        float32 derivative over ``core``.
    """
    a = AXES[axis]
    radius = params.gradient_radius
    core = _check_core(block, core, radius)
    values = _crop(block, core.expand(radius))
    g = gaussian_kernel(params.sigma_gradient, params.truncate)
    d = derivative_kernel(params.sigma_gradient, params.truncate)
    for ax in range(3):
        values = correlate_valid(values, d if ax == a else g, ax)
    return ScalarBlock(core, _apply_spacing(values, float(spacing[a])))


def gradients(values: np.ndarray, params: StructureTensorParams, spacing=(1.0, 1.0, 1.0)):
    """(gx, gy, gz) on the valid region of ``values``, sharing the common x pass.

    Each component is computed with exactly the same operations as
    :func:`gaussian_derivative`.
    """
    g = gaussian_kernel(params.sigma_gradient, params.truncate)
    d = derivative_kernel(params.sigma_gradient, params.truncate)
    dx = correlate_valid(values, d, 0)
    gx = correlate_valid(correlate_valid(dx, g, 1), g, 2)
    del dx
    sx = correlate_valid(values, g, 0)
    gy = correlate_valid(correlate_valid(sx, d, 1), g, 2)
    gz = correlate_valid(correlate_valid(sx, g, 1), d, 2)
    del sx
    return tuple(_apply_spacing(v, float(s)) for v, s in zip((gx, gy, gz), spacing))


def compute_tensor(
    block: ScalarBlock,
    params: StructureTensorParams,
    spacing=(1.0, 1.0, 1.0),
    core: VoxelBox | None = None,
) -> TensorBlock:
    """Smoothed outer product of the intensity gradient over ``core``.

    The block must be padded by ``params.halo`` voxels around ``core``.
    """
    core = _check_core(block, core, params.halo)
    rt = params.tensor_radius
    values = _crop(block, core.expand(params.halo))
    grads = gradients(values, params, spacing)
    del values
    gt = gaussian_kernel(params.sigma_tensor, params.truncate)
    pairs = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
    out = np.empty((6,) + core.shape, dtype=np.float32)
    for c, (i, j) in enumerate(pairs):
        prod = np.multiply(grads[i], grads[j])
        if rt:
            for ax in range(3):
                prod = correlate_valid(prod, gt, ax)
        out[c] = prod
    return TensorBlock(core, out)


def fractional_anisotropy(lambdas) -> float:
    """FA of a sorted, non-negative eigenvalue triple."""
    l1, l2, l3 = (float(v) for v in lambdas)
    if l3 < -1e-6 * max(l1, 0.0):
        raise ValueError(f"negative eigenvalue {l3} beyond clamp tolerance")
    lam = [max(v, 0.0) for v in (l1, l2, l3)]
    norm2 = sum(v * v for v in lam)
    if norm2 < 1e-12:
        return 0.0
    mean = sum(lam) / 3.0
    dev2 = sum((v - mean) ** 2 for v in lam)
    return min(1.0, math.sqrt(1.5) * math.sqrt(dev2) / math.sqrt(norm2))


def fractional_anisotropy_batch(lambdas: np.ndarray) -> np.ndarray:
    """Vectorized FA for a ``(3, N)`` array of clamped, sorted eigenvalues."""
    lam = np.asarray(lambdas, dtype=np.float64)
    norm2 = lam[0] ** 2 + lam[1] ** 2 + lam[2] ** 2
    mean = (lam[0] + lam[1] + lam[2]) / 3.0
    dev2 = (lam[0] - mean) ** 2 + (lam[1] - mean) ** 2 + (lam[2] - mean) ** 2
    flat = norm2 < 1e-12
    fa = np.sqrt(1.5) * np.sqrt(dev2) / np.sqrt(np.where(flat, 1.0, norm2))
    return np.where(flat, 0.0, np.minimum(fa, 1.0))


def orientation_from_tensor(tensor: TensorBlock) -> OrientationField:
    """Eigendecompose every voxel; degenerate voxels get FA 0 and a zero vector."""
    shape = tensor.box.shape
    n = tensor.box.volume
    flat = tensor.components.reshape(6, n)
    vectors = np.empty((3, n), dtype=np.float32)
    lambdas = np.empty((3, n), dtype=np.float32)
    fa = np.empty(n, dtype=np.float32)
    batch = max(EIGEN_BATCH_MIN, min(EIGEN_BATCH, n // 32))
    for b0 in range(0, n, batch):
        b1 = min(b0 + batch, n)
        lam, vecs = eigendecompose_batch(flat[:, b0:b1].astype(np.float64))
        # Block outputs clamp every negative eigenvalue; float32 tensors can
        # dip just below zero on flat texture.
        np.maximum(lam, 0.0, out=lam)
        f = fiber_direction_batch(vecs[2])
        norm2 = lam[0] ** 2 + lam[1] ** 2 + lam[2] ** 2
        degenerate = (norm2 < 1e-12) | (lam[0] - lam[2] < 1e-9 * np.maximum(1.0, lam[0]))
        f[:, degenerate] = 0.0
        a = fractional_anisotropy_batch(lam)
        a[degenerate] = 0.0
        vectors[:, b0:b1] = f
        lambdas[:, b0:b1] = lam
        fa[b0:b1] = a
    return OrientationField(
        tensor.box, vectors.reshape((3,) + shape), lambdas.reshape((3,) + shape), fa.reshape(shape)
    )


def orientation_block(
    block: ScalarBlock,
    params: StructureTensorParams,
    spacing=(1.0, 1.0, 1.0),
    core: VoxelBox | None = None,
) -> OrientationField:
    """Structure tensor, eigendecomposition, fiber direction and FA over ``core``."""
    tensor = compute_tensor(block, params, spacing, core)
    return orientation_from_tensor(tensor)

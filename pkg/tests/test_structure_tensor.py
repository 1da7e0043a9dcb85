import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fiberorient.phantom import generate_uniform_fiber
from fiberorient.structure_tensor import (
    InsufficientPaddingError,
    StructureTensorParams,
    compute_tensor,
    derivative_kernel,
    fractional_anisotropy,
    fractional_anisotropy_batch,
    gaussian_derivative,
    gaussian_kernel,
    orientation_block,
)
from fiberorient.volume_io import ScalarBlock, VoxelBox
from oracles import derivative_taps, direct_gaussian_derivative, gaussian_taps


def block_of(values, lo=(0, 0, 0)):
    nz, ny, nx = values.shape
    return ScalarBlock(VoxelBox(lo, (lo[0] + nx, lo[1] + ny, lo[2] + nz)), np.asarray(values, np.float32))


def grid(shape):
    nz, ny, nx = shape
    return np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")


@pytest.mark.parametrize("sigma", [0.7, 1.0, 2.0, 3.0])
def test_kernels_match_oracle_taps(sigma):
    assert np.allclose(gaussian_kernel(sigma), gaussian_taps(sigma), rtol=1e-14, atol=0)
    assert np.allclose(derivative_kernel(sigma), derivative_taps(sigma), rtol=1e-14, atol=0)


def test_kernel_normalization():
    g = gaussian_kernel(1.0)
    d = derivative_kernel(1.0)
    x = np.arange(-4, 5)
    assert len(g) == 9 and abs(g.sum() - 1) < 1e-15
    assert abs(np.sum(x * d) - 1) < 1e-15
    assert np.array_equal(gaussian_kernel(0.0), [1.0])


def test_params_validation():
    StructureTensorParams(1.0, 0.0, 2.0)
    for bad in ((0.0, 3.0, 4.0), (1.0, -1.0, 4.0), (1.0, 3.0, 1.5)):
        with pytest.raises(ValueError):
            StructureTensorParams(*bad)
    assert StructureTensorParams().halo == 16


def test_ramp_derivative_is_calibrated():
    z, y, x = grid((12, 12, 12))
    out = gaussian_derivative(block_of(2.0 * x), "x", StructureTensorParams())
    assert out.box == VoxelBox((4, 4, 4), (8, 8, 8))
    assert np.allclose(out.values, 2.0, atol=1e-5)


def test_constant_derivative_is_zero():
    out = gaussian_derivative(block_of(np.full((10, 10, 10), 5.0)), "y", StructureTensorParams())
    assert np.all(out.values == 0.0)


def test_spacing_divides_derivative():
    z, y, x = grid((12, 12, 12))
    out = gaussian_derivative(block_of(2.0 * z), "z", StructureTensorParams(), spacing=(1, 1, 4.0))
    assert np.allclose(out.values, 0.5, atol=1e-6)


def test_sine_matches_direct_sum_bitwise():
    z, y, x = grid((14, 12, 16))
    vol = np.sin(2 * np.pi * x / 16).astype(np.float32)
    p = StructureTensorParams(1.0)
    out = gaussian_derivative(block_of(vol), "x", p)
    ref = direct_gaussian_derivative(vol, gaussian_kernel(1.0), derivative_kernel(1.0), 0)
    assert out.values.tobytes() == ref.tobytes()


def test_insufficient_padding_detected():
    p = StructureTensorParams()
    b = block_of(np.zeros((8, 8, 8)))
    with pytest.raises(InsufficientPaddingError):
        gaussian_derivative(b, "x", p)
    big = block_of(np.zeros((12, 12, 12)))
    with pytest.raises(InsufficientPaddingError):
        gaussian_derivative(big, "x", p, core=VoxelBox((2, 4, 4), (6, 8, 8)))
    with pytest.raises(InsufficientPaddingError):
        compute_tensor(big, p)


def test_constant_volume_tensor_and_orientation():
    p = StructureTensorParams(1.0, 1.0)
    b = block_of(np.full((20, 20, 20), 3.0))
    t = compute_tensor(b, p)
    assert np.all(t.components == 0)
    f = orientation_block(b, p)
    assert np.all(f.fa == 0) and np.all(f.vectors == 0)
    assert not f.nondegenerate.any()


def test_uniform_fiber_phantom_orientation():
    vol, truth = generate_uniform_fiber((48, 48, 48), "z")
    p = StructureTensorParams()
    b = block_of(vol)
    t = compute_tensor(b, p)
    scale = np.max(t.components[:3])
    assert np.max(np.abs(t.components[2])) < 1e-6 * scale
    f = orientation_block(b, p)
    ang = np.degrees(np.arccos(np.clip(np.abs(f.vectors[2]), 0, 1)))
    assert ang.max() < 1e-3 * 180 / math.pi
    assert f.fa.min() >= 0.6
    assert np.all(f.vectors[2] > 0)


def test_block_equals_monolithic_on_shared_core():
    p = StructureTensorParams(1.0, 1.0)
    vol = np.random.default_rng(5).standard_normal((30, 28, 26)).astype(np.float32)
    whole = compute_tensor(block_of(vol), p)
    h = p.halo
    sub = vol[3:3 + 2 * h + 6, 2:2 + 2 * h + 5, 1:1 + 2 * h + 4]
    part = compute_tensor(block_of(sub, lo=(1, 2, 3)), p)
    sl = part.box.slices_within(whole.box)
    assert whole.components[(slice(None),) + sl].tobytes() == part.components.tobytes()


def test_fa_fixed_points():
    assert fractional_anisotropy((1, 1, 1)) == 0.0
    assert abs(fractional_anisotropy((1, 0, 0)) - 1.0) <= 1e-12
    assert abs(fractional_anisotropy((1, 1, 0)) - math.sqrt(0.5)) <= 1e-12
    assert fractional_anisotropy((0, 0, 0)) == 0.0
    assert fractional_anisotropy((1e-7, 0, 0)) == 0.0


def test_fa_batch_matches_scalar():
    lam = np.abs(np.random.default_rng(2).standard_normal((3, 50)))
    lam = -np.sort(-lam, axis=0)
    batch = fractional_anisotropy_batch(lam)
    for i in range(50):
        assert abs(batch[i] - fractional_anisotropy(tuple(lam[:, i]))) < 1e-14


@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=3, max_size=3))
def test_fa_in_unit_interval(vals):
    lam = sorted(vals, reverse=True)
    fa = fractional_anisotropy(lam)
    assert 0.0 <= fa <= 1.0


@given(st.integers(0, 2**20), st.sampled_from(["x", "y", "z"]), st.sampled_from([0.7, 1.0]))
def test_gradient_matches_direct_sum_on_random_blocks(seed, axis, sigma):
    r = math.ceil(4 * sigma)
    vol = np.random.default_rng(seed).standard_normal((2 * r + 3,) * 3).astype(np.float32)
    out = gaussian_derivative(block_of(vol), axis, StructureTensorParams(sigma))
    ref = direct_gaussian_derivative(vol, gaussian_kernel(sigma), derivative_kernel(sigma), "xyz".index(axis))
    assert out.values.tobytes() == ref.tobytes()

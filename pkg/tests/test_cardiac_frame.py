import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fiberorient.cardiac_frame import (
    SENTINEL,
    AxisModel,
    DegenerateFrameError,
    compute_angle_maps,
    helical_angle,
    helical_angles_along,
    intrusion_angle,
    local_basis,
)
from fiberorient.structure_tensor import OrientationField
from fiberorient.volume_io import VoxelBox

AXIS = AxisModel.from_points((32, 32, 0), (32, 32, 63))


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def test_local_basis_examples():
    b = local_basis(AXIS, (42, 32, 10))
    assert np.allclose(b.r_hat, [1, 0, 0]) and np.allclose(b.c_hat, [0, 1, 0]) and np.allclose(b.z_hat, [0, 0, 1])
    b = local_basis(AXIS, (32, 42, 10))
    assert np.allclose(b.r_hat, [0, 1, 0]) and np.allclose(b.c_hat, [-1, 0, 0])
    with pytest.raises(DegenerateFrameError):
        local_basis(AXIS, (32, 32, 10))


@given(st.floats(-60, 60), st.floats(-60, 60), st.floats(0, 63))
def test_local_basis_right_handed(dx, dy, z):
    if math.hypot(dx, dy) < 2:
        return
    b = local_basis(AXIS, (32 + dx, 32 + dy, z))
    m = np.stack([b.r_hat, b.c_hat, b.z_hat])
    assert np.allclose(m @ m.T, np.eye(3), atol=1e-9)
    assert np.allclose(np.cross(b.z_hat, b.r_hat), b.c_hat, atol=1e-12)


def test_axis_model_interpolation_and_clamping(tmp_path):
    axis = AxisModel(((0, 10, 20), (10, 20, 20), (20, 20, 40)))
    assert np.allclose(axis.center(5.0), (15, 20))
    assert np.allclose(axis.center(15.0), (20, 30))
    assert np.allclose(axis.center(-5.0), (10, 20))
    assert np.allclose(axis.center(99.0), (20, 40))
    with pytest.raises(ValueError):
        AxisModel(((0, 1, 1),))
    with pytest.raises(ValueError):
        AxisModel(((0, 1, 1), (0, 2, 2)))
    with pytest.raises(ValueError):
        AxisModel.from_points((1, 1, 3), (2, 2, 3))
    p = tmp_path / "centers.csv"
    p.write_text("# z,cx,cy\n0,10,20\n\n10,20,20\n20,20,40\n")
    assert AxisModel.from_csv(p) == axis
    p.write_text("0,10\n")
    with pytest.raises(ValueError, match=":1:"):
        AxisModel.from_csv(p)


def test_helical_angle_examples():
    b = local_basis(AXIS, (42, 32, 10))
    assert helical_angle(b.c_hat, b) == 0.0
    assert helical_angle(b.z_hat, b) == 90.0
    assert helical_angle(-b.z_hat, b) == 90.0
    f = unit(b.c_hat + b.z_hat)
    assert math.isclose(helical_angle(f, b), 45.0)
    assert math.isclose(helical_angle(-f, b), 45.0)
    with pytest.raises(DegenerateFrameError):
        helical_angle(b.r_hat, b)


def test_intrusion_angle_examples():
    b = local_basis(AXIS, (42, 32, 10))
    assert intrusion_angle(b.c_hat, b) == 0.0
    assert intrusion_angle(b.r_hat, b) == 90.0
    assert intrusion_angle(-b.r_hat, b) == 90.0
    assert math.isclose(intrusion_angle(unit(b.c_hat + b.r_hat), b), 45.0)


def field_of(vectors, lo=(0, 0, 0)):
    nz, ny, nx = vectors.shape[1:]
    box = VoxelBox(lo, (lo[0] + nx, lo[1] + ny, lo[2] + nz))
    fa = np.where(np.any(vectors != 0, axis=0), 0.8, 0.0).astype(np.float32)
    return OrientationField(box, vectors.astype(np.float32), None, fa)


def test_uniform_z_field_gives_ha_90():
    v = np.zeros((3, 4, 64, 64))
    v[2] = 1
    maps = compute_angle_maps(field_of(v), AXIS)
    assert np.all(maps.ha[maps.valid] == 90.0)
    assert np.all(maps.ia[maps.valid] == 0.0)
    assert np.all(maps.fa[maps.valid] == np.float32(0.8))
    assert not maps.valid[:, 32, 32].any()
    assert np.all(maps.ha[~maps.valid] == SENTINEL)


def test_empty_mask_all_sentinel():
    v = np.zeros((3, 2, 8, 8))
    v[2] = 1
    maps = compute_angle_maps(field_of(v), AXIS, mask=np.zeros((2, 8, 8)))
    assert not maps.valid.any()
    for m in (maps.ha, maps.ia, maps.fa):
        assert np.all(m == SENTINEL)


def test_mask_shape_mismatch():
    with pytest.raises(ValueError):
        compute_angle_maps(field_of(np.ones((3, 2, 8, 8))), AXIS, mask=np.ones((2, 8, 9)))


def test_degenerate_and_radial_voxels_invalid():
    v = np.zeros((3, 1, 1, 3))
    v[:, 0, 0, 1] = (1, 0, 0)  # radial at (41, 32): r_hat = +x
    v[:, 0, 0, 2] = (0, 1, 0)
    maps = compute_angle_maps(field_of(v, lo=(40, 32, 0)), AXIS)
    assert maps.valid.tolist() == [[[False, False, True]]]


@given(st.integers(0, 2**31 - 1))
def test_sign_fold_invariance_bitwise(seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((3, 3, 12, 12))
    v /= np.linalg.norm(v, axis=0)
    v[:, 0, 0, 0] = 0
    a = compute_angle_maps(field_of(v, lo=(26, 26, 0)), AXIS)
    b = compute_angle_maps(field_of(-v, lo=(26, 26, 0)), AXIS)
    for name in ("ha", "ia", "fa", "valid"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    assert np.all(np.abs(a.ha[a.valid]) <= 90) and np.all(np.abs(a.ia[a.valid]) <= 90)


def test_rotation_by_90_permutes_maps():
    rng = np.random.default_rng(4)
    n = 16
    axis = AxisModel.from_points((7.5, 7.5, 0), (7.5, 7.5, 3))
    v = rng.standard_normal((3, 2, n, n))
    a = compute_angle_maps(field_of(v), axis)
    # rotate 90 degrees about z: (x, y) -> (n-1-y, x), vector (vx, vy) -> (-vy, vx)
    rv = np.empty_like(v)
    rv[0], rv[1], rv[2] = -v[1], v[0], v[2]
    rv = np.rot90(rv, k=1, axes=(3, 2))
    b = compute_angle_maps(field_of(rv), axis)
    assert np.allclose(np.rot90(a.ha, k=1, axes=(2, 1)), b.ha, atol=1e-4)


def test_helical_angles_along_matches_scalar():
    pts = np.array([[42.0, 32, 1], [32, 50, 2], [32.5, 32, 3]])
    tan = np.array([[0, 1.0, 1.0], [-1.0, 0, 0], [0, 1.0, 0]])
    ha = helical_angles_along(pts, tan, AXIS)
    assert math.isclose(ha[0], 45.0)
    assert ha[1] == 0.0
    assert ha[2] == SENTINEL

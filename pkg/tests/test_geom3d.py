import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import boxes, yaw
from span3d.errors import BehindCameraError, InvalidArgumentError
from span3d.geom3d import (
    OPPOSITE,
    Box3D,
    CameraIntrinsics,
    box_from_corners,
    corner_rmse,
    corners_from_box,
    face_normals,
    normalize_angle,
    project_point,
    project_points,
    rotation_y,
)


def test_rotation_identity_and_quarter_turn():
    np.testing.assert_array_equal(rotation_y(0.0), np.eye(3))
    expected = np.array([[0, 0, 1], [0, 1, 0], [-1, 0, 0]], dtype=float)
    np.testing.assert_allclose(rotation_y(math.pi / 2), expected, atol=1e-15)


def test_rotation_rejects_non_finite():
    with pytest.raises(InvalidArgumentError):
        rotation_y(math.nan)
    with pytest.raises(InvalidArgumentError):
        rotation_y(math.inf)


@given(yaw)
def test_rotation_is_orthonormal(a):
    R = rotation_y(a)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R) - 1.0) <= 1e-12


@given(yaw, yaw)
def test_rotation_composes_additively(a, b):
    np.testing.assert_allclose(rotation_y(a) @ rotation_y(b), rotation_y(a + b), atol=1e-12)


def test_cube_corners_are_sign_matrix_columns():
    c = corners_from_box(Box3D(0, 0, 0, 2, 2, 2, 0))
    np.testing.assert_array_equal(c[0], [1, 1, 1])
    assert {tuple(p) for p in c} == {
        (sx, sy, sz) for sx in (-1.0, 1.0) for sy in (-1.0, 1.0) for sz in (-1.0, 1.0)
    }
    np.testing.assert_array_equal(c[:, 0], [1, 1, -1, -1, 1, 1, -1, -1])
    np.testing.assert_array_equal(c[:, 1], [1, 1, 1, 1, -1, -1, -1, -1])
    np.testing.assert_array_equal(c[:, 2], [1, -1, -1, 1, 1, -1, -1, 1])


def test_quarter_turn_maps_local_corner():
    c = corners_from_box(Box3D(0, 0, 0, 4, 2, 2, math.pi / 2))
    np.testing.assert_allclose(c[0], [1, 1, -2], atol=1e-12)


@given(boxes())
def test_corner_set_invariants(box):
    c = corners_from_box(box)
    np.testing.assert_allclose(c.mean(axis=0), box.center, atol=1e-9)
    for i, j in enumerate(OPPOSITE):
        np.testing.assert_allclose((c[i] + c[j]) / 2, box.center, atol=1e-9)
    assert math.isclose(np.linalg.norm(c[0] - c[3]), box.l, abs_tol=1e-9)
    assert math.isclose(np.linalg.norm(c[0] - c[4]), box.h, abs_tol=1e-9)
    assert math.isclose(np.linalg.norm(c[0] - c[1]), box.w, abs_tol=1e-9)


@given(boxes(), st.floats(-math.pi / 4, math.pi / 4).filter(lambda a: a > -math.pi / 4))
def test_corners_round_trip(box, a):
    box = Box3D(box.cx, box.cy, box.cz, box.l, box.h, box.w, a)
    back = box_from_corners(corners_from_box(box))
    np.testing.assert_allclose(back.params(), box.params(), atol=1e-9)


def test_face_normals_known_yaws():
    np.testing.assert_array_equal(face_normals(Box3D(0, 0, 5, 1, 1, 1, 0)), np.eye(3))
    n = face_normals(Box3D(0, 0, 5, 1, 1, 1, math.pi / 2))
    np.testing.assert_allclose(n, [[0, 0, -1], [0, 1, 0], [1, 0, 0]], atol=1e-15)


@given(boxes())
def test_face_normals_are_unit_rotation_columns(box):
    n = face_normals(box)
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(n, rotation_y(box.ry).T, atol=1e-15)


def test_project_point_examples(K_simple):
    assert project_point((0, 0, 10), K_simple) == (50.0, 50.0)
    assert project_point((1, 2, 10), K_simple) == pytest.approx((60.0, 70.0), abs=1e-12)
    with pytest.raises(BehindCameraError):
        project_point((1, 1, 0), K_simple)


@given(
    st.floats(-20, 20), st.floats(-20, 20), st.floats(0.5, 80), st.floats(0.01, 100.0)
)
def test_projection_is_scale_invariant_along_rays(x, y, z, lam):
    K = CameraIntrinsics(721.5, 721.5, 609.6, 172.9)
    p = project_point((x, y, z), K)
    q = project_point((lam * x, lam * y, lam * z), K)
    assert p.u == pytest.approx(q.u, abs=1e-9, rel=1e-12)
    assert p.v == pytest.approx(q.v, abs=1e-9, rel=1e-12)


def test_project_points_reports_offending_index(K_simple):
    pts = np.array([[0, 0, 5], [0, 0, 3], [1, 1, -1.0]])
    with pytest.raises(BehindCameraError) as e:
        project_points(pts, K_simple)
    assert e.value.corner_index == 2


def test_box_validation():
    with pytest.raises(InvalidArgumentError):
        Box3D(0, 0, 5, 0, 1, 1)
    with pytest.raises(InvalidArgumentError):
        Box3D(0, 0, 5, 1, -1, 1)
    with pytest.raises(InvalidArgumentError):
        Box3D(math.nan, 0, 5, 1, 1, 1)
    with pytest.raises(InvalidArgumentError):
        CameraIntrinsics(0, 1, 0, 0)


@given(st.floats(-100, 100))
def test_yaw_normalized(a):
    r = Box3D(0, 0, 5, 1, 1, 1, a).ry
    assert -math.pi < r <= math.pi
    assert math.isclose(math.cos(r), math.cos(a), abs_tol=1e-9)
    assert math.isclose(math.sin(r), math.sin(a), abs_tol=1e-9)


def test_normalize_angle_boundary():
    assert normalize_angle(-math.pi) == math.pi
    assert normalize_angle(math.pi) == math.pi


def test_corner_rmse_zero_and_translation():
    b = Box3D(1, 1, 10, 4, 1.5, 1.7, 0.3)
    assert corner_rmse(b, b) == 0.0
    assert corner_rmse(b, b.translated(0.3, 0.0, 0.4)) == pytest.approx(0.5)

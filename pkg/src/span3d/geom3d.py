"""Cuboid construction, yaw rotations and pinhole projection.

Camera frame follows KITTI: x right, y down, z forward. A :class:`Box3D` is
anchored at its geometric center.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass
from typing import NamedTuple, Sequence

import numpy as np

from span3d import dual
from span3d.errors import BehindCameraError, InvalidArgumentError

Z_EPS = 1e-6

# Column order of the corner sign matrix; each row is (sx, sy, sz).
CORNER_SIGNS = (
    (0.5, 0.5, 0.5),
    (0.5, 0.5, -0.5),
    (-0.5, 0.5, -0.5),
    (-0.5, 0.5, 0.5),
    (0.5, -0.5, 0.5),
    (0.5, -0.5, -0.5),
    (-0.5, -0.5, -0.5),
    (-0.5, -0.5, 0.5),
)
# i <-> OPPOSITE[i] flips every sign
OPPOSITE = (6, 7, 4, 5, 2, 3, 0, 1)


def normalize_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    r = math.remainder(a, 2.0 * math.pi)
    if r <= -math.pi:
        r += 2.0 * math.pi
    return r


def _check_finite(name, *values):
    for v in values:
        if not math.isfinite(v):
            raise InvalidArgumentError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class Box3D:
    """7-DoF cuboid: geometric center, (l, h, w) along local (x, y, z), yaw."""

    cx: float
    cy: float
    cz: float
    l: float
    h: float
    w: float
    ry: float = 0.0

    def __post_init__(self):
        vals = astuple(self)
        _check_finite("Box3D fields", *vals)
        if not (self.l > 0 and self.h > 0 and self.w > 0):
            raise InvalidArgumentError(
                f"box dimensions must be positive, got l={self.l}, h={self.h}, w={self.w}"
            )
        for name, v in zip(dual.PARAM_NAMES, vals):
            object.__setattr__(self, name, float(v))
        object.__setattr__(self, "ry", normalize_angle(self.ry))

    @classmethod
    def from_params(cls, params: Sequence[float]) -> "Box3D":
        if len(params) != 7:
            raise InvalidArgumentError(f"expected 7 box parameters, got {len(params)}")
        return cls(*(float(p) for p in params))

    def params(self) -> tuple:
        return astuple(self)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    def translated(self, dx: float, dy: float, dz: float) -> "Box3D":
        return Box3D(self.cx + dx, self.cy + dy, self.cz + dz, self.l, self.h, self.w, self.ry)


@dataclass(frozen=True)
class CameraIntrinsics:
    fu: float
    fv: float
    cu: float
    cv: float

    def __post_init__(self):
        _check_finite("intrinsics", self.fu, self.fv, self.cu, self.cv)
        if not (self.fu > 0 and self.fv > 0):
            raise InvalidArgumentError(f"focal lengths must be positive, got {self.fu}, {self.fv}")

    def as_tuple(self) -> tuple:
        return (self.fu, self.fv, self.cu, self.cv)


class Pixel(NamedTuple):
    u: float
    v: float


def rotation_y(ry: float) -> np.ndarray:
    """Rotation about the camera Y axis as a row-major 3x3 array."""
    _check_finite("ry", ry)
    c, s = math.cos(ry), math.sin(ry)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


# -- scalar-generic kernels (floats, DualScalar, mpf) --------------------------


def corners_generic(cx, cy, cz, l, h, w, ry):
    """Eight corners as a list of (x, y, z) tuples in sign-matrix order."""
    c = dual.cos(ry)
    s = dual.sin(ry)
    out = []
    for sx, sy, sz in CORNER_SIGNS:
        px = l * sx
        py = h * sy
        pz = w * sz
        out.append((cx + (c * px + s * pz), cy + py, cz + (c * pz - s * px)))
    return out


def face_normals_generic(ry):
    """Columns of R(ry): the three unit face normals a1, a2, a3."""
    c = dual.cos(ry)
    s = dual.sin(ry)
    return [(c, 0.0, -s), (0.0, 1.0, 0.0), (s, 0.0, c)]


# -- public float API ----------------------------------------------------------


def corners_from_box(box: Box3D) -> np.ndarray:
    """(8, 3) array of corner coordinates."""
    if not isinstance(box, Box3D):
        box = Box3D.from_params(box)
    return np.array(corners_generic(*box.params()))


def face_normals(box: Box3D) -> np.ndarray:
    """(3, 3) array whose rows are the unit face normals a1, a2, a3."""
    ry = box.ry if isinstance(box, Box3D) else float(box)
    _check_finite("ry", ry)
    return np.array(face_normals_generic(ry), dtype=float)


def project_point(p: Sequence[float], K: CameraIntrinsics, z_eps: float = Z_EPS) -> Pixel:
    x, y, z = (float(c) for c in p)
    _check_finite("point", x, y, z)
    if z <= z_eps:
        raise BehindCameraError(f"point z={z} is not in front of the camera (z_eps={z_eps})")
    return Pixel(K.fu * x / z + K.cu, K.fv * y / z + K.cv)


def project_points(points: np.ndarray, K: CameraIntrinsics, z_eps: float = Z_EPS) -> np.ndarray:
    """Vectorized projection of an (N, 3) array to (N, 2) pixels."""
    pts = np.asarray(points, dtype=float)
    z = pts[:, 2]
    bad = np.flatnonzero(~(z > z_eps))
    if bad.size:
        i = int(bad[0])
        raise BehindCameraError(f"point {i} has z={z[i]} <= z_eps={z_eps}", corner_index=i)
    return np.column_stack((K.fu * pts[:, 0] / z + K.cu, K.fv * pts[:, 1] / z + K.cv))


def box_from_corners(corners: np.ndarray) -> Box3D:
    """Re-estimate (center, dims, yaw) from corners in sign-matrix order."""
    P = np.asarray(corners, dtype=float)
    if P.shape != (8, 3):
        raise InvalidArgumentError(f"expected (8, 3) corners, got {P.shape}")
    center = P.mean(axis=0)
    dl = P[0] - P[3]
    dh = P[0] - P[4]
    dw = P[0] - P[1]
    ry = math.atan2(-dl[2], dl[0])
    return Box3D(*center, np.linalg.norm(dl), np.linalg.norm(dh), np.linalg.norm(dw), ry)


def corner_rmse(a: Box3D, b: Box3D) -> float:
    """Root-mean-square distance over the 8 corresponding corner pairs."""
    d = corners_from_box(a) - corners_from_box(b)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))

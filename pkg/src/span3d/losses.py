"""Spatial point alignment, projection alignment, depth and total losses.

The ``*_generic`` functions are written against :mod:`span3d.dual` so they
run unchanged on floats, dual scalars and mpmath numbers. The public wrappers
take the validated domain types.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from span3d import dual
from span3d.dual import smax, smin
from span3d.errors import BehindCameraError, ConfigError, InvalidArgumentError
from span3d.geom3d import (
    Z_EPS,
    Box3D,
    CameraIntrinsics,
    corners_generic,
    face_normals_generic,
)

AXIS_DEDUP_TOL = 1e-9

# lambda_1 .. lambda_9 as used for the host detector terms
DEFAULT_LAMBDAS = {1: 2.0, 2: 5.0, 3: 2.0, 4: 10.0, 5: 1.0, 6: 1.0, 7: 1.0, 8: 1.0, 9: 1.0}
DEFAULT_LAMBDA_C = 1.0
DEFAULT_LAMBDA_P = 1.0

# 2D noise levels (pixels) of the robustness protocol, clean run first
NOISE_LEVELS_PX = (0.0, 2.0, 5.0, 10.0, 15.0)


class AxisSource(enum.IntEnum):
    """Which box supplies the projection axes for the marginalized GIoU."""

    PRED = 0
    GT = 1
    UNION = 2

    @classmethod
    def parse(cls, value) -> "AxisSource":
        if isinstance(value, cls):
            return value
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise InvalidArgumentError(f"unknown axis source {value!r}") from None


@dataclass(frozen=True)
class Interval1D:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise InvalidArgumentError(f"interval lo={self.lo} exceeds hi={self.hi}")

    @property
    def length(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class Rect2D:
    """Axis-aligned pixel rectangle [umin, umax] x [vmin, vmax]."""

    umin: float
    umax: float
    vmin: float
    vmax: float

    def __post_init__(self):
        for v in (self.umin, self.umax, self.vmin, self.vmax):
            if not math.isfinite(v):
                raise InvalidArgumentError(f"rect coordinates must be finite, got {v!r}")
        if not (self.umin <= self.umax and self.vmin <= self.vmax):
            raise InvalidArgumentError(f"malformed rect {self.as_tuple()}")
        for name in ("umin", "umax", "vmin", "vmax"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def as_tuple(self) -> tuple:
        return (self.umin, self.umax, self.vmin, self.vmax)

    @property
    def area(self) -> float:
        return (self.umax - self.umin) * (self.vmax - self.vmin)


@dataclass(frozen=True)
class DepthTerm:
    f: float
    h3d: float
    h2d: float
    z_err: float
    z_gt: float
    sigma_d: float

    def __post_init__(self):
        if not self.h2d > 0:
            raise InvalidArgumentError(f"h2d must be positive, got {self.h2d}")
        if not self.sigma_d > 0:
            raise InvalidArgumentError(f"sigma_d must be positive, got {self.sigma_d}")


# -- spatial point alignment ---------------------------------------------------


def interval_on_axis_generic(corners, axis):
    ax, ay, az = axis
    proj = [x * ax + y * ay + z * az for x, y, z in corners]
    return smin(proj), smax(proj)


def giou_1d_generic(plo, phi, glo, ghi):
    len_p = phi - plo
    len_g = ghi - glo
    inter = smax(0.0, smin(phi, ghi) - smax(plo, glo))
    hull = smax(phi, ghi) - smin(plo, glo)
    union = len_p + len_g - inter
    if dual.value_of(hull) == 0.0:
        # both intervals collapse onto the same point
        return 1.0
    iou = inter / union if dual.value_of(union) > 0.0 else 0.0
    return iou - (hull - union) / hull


def _parallel(a, b) -> bool:
    """Unit axes equal or opposite componentwise within ``AXIS_DEDUP_TOL``."""
    va = [dual.value_of(x) for x in a]
    vb = [dual.value_of(y) for y in b]
    same = max(abs(x - y) for x, y in zip(va, vb))
    flip = max(abs(x + y) for x, y in zip(va, vb))
    return min(same, flip) <= AXIS_DEDUP_TOL


def axes_generic(ry_pred, ry_gt, source: AxisSource):
    if source == AxisSource.PRED:
        return face_normals_generic(ry_pred)
    if source == AxisSource.GT:
        return face_normals_generic(ry_gt)
    axes = face_normals_generic(ry_pred)
    for cand in face_normals_generic(ry_gt):
        if not any(_parallel(cand, a) for a in axes):
            axes.append(cand)
    return axes


def mgiou_generic(pred, gt, source: AxisSource = AxisSource.PRED):
    """Mean 1D GIoU of the two corner sets over the chosen face normals."""
    cp = corners_generic(*pred)
    cg = corners_generic(*gt)
    axes = axes_generic(pred[6], gt[6], source)
    total = 0.0
    for a in axes:
        plo, phi = interval_on_axis_generic(cp, a)
        glo, ghi = interval_on_axis_generic(cg, a)
        total = total + giou_1d_generic(plo, phi, glo, ghi)
    return total / len(axes)


def spatial_loss_generic(pred, gt, source: AxisSource = AxisSource.PRED):
    return (1.0 - mgiou_generic(pred, gt, source)) / 2.0


# -- projection alignment ------------------------------------------------------


def projected_rect_generic(params, intr, z_eps=Z_EPS):
    """(umin, umax, vmin, vmax) of the eight projected corners."""
    fu, fv, cu, cv = intr
    us = []
    vs = []
    for i, (x, y, z) in enumerate(corners_generic(*params)):
        if not z > z_eps:
            raise BehindCameraError(
                f"corner {i} has z={dual.value_of(z):.6g} <= z_eps={z_eps}", corner_index=i
            )
        us.append(fu * x / z + cu)
        vs.append(fv * y / z + cv)
    return smin(us), smax(us), smin(vs), smax(vs)


def giou_2d_generic(a, b):
    au0, au1, av0, av1 = a
    bu0, bu1, bv0, bv1 = b
    area_a = (au1 - au0) * (av1 - av0)
    area_b = (bu1 - bu0) * (bv1 - bv0)
    iw = smax(0.0, smin(au1, bu1) - smax(au0, bu0))
    ih = smax(0.0, smin(av1, bv1) - smax(av0, bv0))
    inter = iw * ih
    union = area_a + area_b - inter
    hull = (smax(au1, bu1) - smin(au0, bu0)) * (smax(av1, bv1) - smin(av0, bv0))
    if dual.value_of(hull) == 0.0:
        same = all(dual.value_of(x) == dual.value_of(y) for x, y in zip(a, b))
        return 1.0 if same else -1.0
    iou = inter / union if dual.value_of(union) > 0.0 else 0.0
    return iou - (hull - union) / hull


def projection_loss_generic(params, intr, gt_rect, z_eps=Z_EPS):
    return 1.0 - giou_2d_generic(projected_rect_generic(params, intr, z_eps), gt_rect)


# -- depth ---------------------------------------------------------------------


def depth_loss_generic(f, h3d, h2d, z_err, z_gt, sigma_d):
    residual = f * h3d / h2d + z_err - z_gt
    return dual.sqrt(2.0) / sigma_d * abs(residual) + dual.log(sigma_d)


# -- public API ----------------------------------------------------------------


def _as_box(b) -> Box3D:
    return b if isinstance(b, Box3D) else Box3D.from_params(b)


def project_corners_on_axis(corners: np.ndarray, axis: Sequence[float]) -> Interval1D:
    a = np.asarray(axis, dtype=float)
    if a.shape != (3,) or abs(np.linalg.norm(a) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"axis must be a unit 3-vector, got {axis!r}")
    proj = np.asarray(corners, dtype=float) @ a
    return Interval1D(float(proj.min()), float(proj.max()))


def giou_1d(p: Interval1D, g: Interval1D) -> float:
    """1D GIoU; two identical zero-length intervals score 1."""
    return float(giou_1d_generic(p.lo, p.hi, g.lo, g.hi))


def mgiou_3d(pred: Box3D, gt: Box3D, axis_source=AxisSource.PRED) -> float:
    src = AxisSource.parse(axis_source)
    return float(mgiou_generic(_as_box(pred).params(), _as_box(gt).params(), src))


def spatial_point_alignment_loss(pred: Box3D, gt: Box3D, axis_source=AxisSource.PRED) -> float:
    return (1.0 - mgiou_3d(pred, gt, axis_source)) / 2.0


def projected_enclosing_rect(box: Box3D, K: CameraIntrinsics, z_eps: float = Z_EPS) -> Rect2D:
    return Rect2D(*projected_rect_generic(_as_box(box).params(), K.as_tuple(), z_eps))


def giou_2d(a: Rect2D, b: Rect2D) -> float:
    return float(giou_2d_generic(a.as_tuple(), b.as_tuple()))


def projection_alignment_loss(box: Box3D, K: CameraIntrinsics, gt_rect: Rect2D) -> float:
    return 1.0 - giou_2d(projected_enclosing_rect(box, K), gt_rect)


def depth_loss(term: DepthTerm) -> float:
    return float(
        depth_loss_generic(term.f, term.h3d, term.h2d, term.z_err, term.z_gt, term.sigma_d)
    )


# -- aggregation ---------------------------------------------------------------

PER_OBJECT_TERMS = ("2d", "3d", "corner", "proj")
GLOBAL_TERMS = ("dmap", "region")


@dataclass
class LossBreakdown:
    """Per-object and image-level loss terms for the total-loss aggregator.

    ``objects`` holds one mapping per ground-truth object with the keys
    ``2d``, ``3d``, ``corner`` and ``proj``; ``globals`` holds ``dmap`` and
    ``region``. Host-detector terms are opaque precomputed scalars.
    """

    objects: Sequence[Mapping[str, float]] = ()
    globals: Mapping[str, float] = field(default_factory=dict)
    n_gt: int | None = None
    lambda_c: float = DEFAULT_LAMBDA_C
    lambda_p: float = DEFAULT_LAMBDA_P
    lambdas: Mapping[int, float] = field(default_factory=lambda: dict(DEFAULT_LAMBDAS))
    omega: Mapping[str, float] = field(default_factory=dict)


def total_loss(breakdown: LossBreakdown) -> float:
    b = breakdown
    for name in GLOBAL_TERMS:
        if name not in b.globals:
            raise ConfigError(f"missing required loss term {name!r}")
    for i, obj in enumerate(b.objects):
        for name in PER_OBJECT_TERMS:
            if name not in obj:
                raise ConfigError(f"missing required loss term {name!r} for object {i}")
    n_gt = len(b.objects) if b.n_gt is None else b.n_gt
    if b.objects and n_gt < 1:
        raise ConfigError("n_gt must be >= 1 when per-object terms are present")
    w_c = b.lambda_c * b.omega.get("corner", 1.0)
    w_p = b.lambda_p * b.omega.get("proj", 1.0)
    per_object = 0.0
    for obj in b.objects:
        per_object += obj["2d"] + obj["3d"] + w_c * obj["corner"] + w_p * obj["proj"]
    total = per_object / n_gt if b.objects else 0.0
    return total + b.lambdas[8] * b.globals["dmap"] + b.lambdas[9] * b.globals["region"]


def compose_2d(l_class, l_2ddim, l_center, l_giou, lambdas=DEFAULT_LAMBDAS) -> float:
    """Weighted 2D regression loss from its four host terms."""
    return lambdas[1] * l_class + lambdas[2] * l_2ddim + lambdas[3] * l_center + lambdas[4] * l_giou


def compose_3d(l_3ddim, l_angle, l_depth, lambdas=DEFAULT_LAMBDAS) -> float:
    return lambdas[5] * l_3ddim + lambdas[6] * l_angle + lambdas[7] * l_depth


def perturb_rect(rect: Rect2D, magnitude: float, rng: np.random.Generator) -> Rect2D:
    """Shift each coordinate by an independent U(-magnitude, magnitude) draw."""
    if magnitude < 0:
        raise InvalidArgumentError(f"noise magnitude must be >= 0, got {magnitude}")
    if magnitude == 0:
        return rect
    d = rng.uniform(-magnitude, magnitude, size=4)
    u0, u1 = sorted((rect.umin + d[0], rect.umax + d[1]))
    v0, v1 = sorted((rect.vmin + d[2], rect.vmax + d[3]))
    return Rect2D(float(u0), float(u1), float(v0), float(v1))

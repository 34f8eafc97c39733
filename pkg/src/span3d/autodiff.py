"""Analytic gradients of the alignment losses and a finite-difference check.

Gradients are taken with respect to the seven box parameters in the order
``(cx, cy, cz, l, h, w, ry)``. At min/max ties the first candidate wins and
the returned vector is a one-sided subgradient; ``*_and_grad`` variants
report whether that happened.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

import mpmath
import numpy as np

from span3d import kernels
from span3d.dual import PARAM_NAMES, DualScalar
from span3d.errors import BehindCameraError, InvalidArgumentError
from span3d.geom3d import Box3D, CameraIntrinsics
from span3d.kitti import KITTI_P2, synth_scene
from span3d.losses import (
    AxisSource,
    DepthTerm,
    Rect2D,
    depth_loss_generic,
    perturb_rect,
    projection_loss_generic,
    spatial_loss_generic,
)

FD_EPS = 1e-5
FD_DPS = 40
REL_ERR_FLOOR = 1e-8

DEPTH_PARAM_NAMES = ("h3d", "z_err", "sigma_d")

__all__ = [
    "DualScalar",
    "GradReport",
    "LossId",
    "SpatialInstance",
    "ProjectionInstance",
    "finite_diff_check",
    "grad_depth_loss",
    "grad_projection_loss",
    "grad_spatial_loss",
    "projection_loss_and_grad",
    "random_instance",
    "spatial_loss_and_grad",
]


def _params(box) -> tuple:
    return box.params() if isinstance(box, Box3D) else tuple(float(p) for p in box)


def spatial_loss_and_grad(pred, gt, axis_source=AxisSource.PRED):
    """``(loss, grad, tie)`` for the spatial alignment loss w.r.t. ``pred``.

    ``pred`` may be a :class:`Box3D` or a raw 7-sequence (yaw left
    unnormalized).
    """
    src = AxisSource.parse(axis_source)
    return kernels.spatial_loss_grad(_params(pred), _params(gt), int(src))


def grad_spatial_loss(pred, gt, axis_source=AxisSource.PRED) -> np.ndarray:
    return spatial_loss_and_grad(pred, gt, axis_source)[1]


def projection_loss_and_grad(box, K: CameraIntrinsics, gt_rect: Rect2D):
    return kernels.projection_loss_grad(_params(box), K.as_tuple(), gt_rect.as_tuple())


def grad_projection_loss(box, K: CameraIntrinsics, gt_rect: Rect2D) -> np.ndarray:
    return projection_loss_and_grad(box, K, gt_rect)[1]


def depth_loss_and_grad(term: DepthTerm):
    """Depth loss and its gradient w.r.t. ``(h3d, z_err, sigma_d)``."""
    h3d, z_err, sigma = (
        DualScalar.variable(v, i, 3) for i, v in enumerate((term.h3d, term.z_err, term.sigma_d))
    )
    r = depth_loss_generic(term.f, h3d, term.h2d, z_err, term.z_gt, sigma)
    return r.value, np.array(r.deriv), r.tie


def grad_depth_loss(term: DepthTerm) -> np.ndarray:
    return depth_loss_and_grad(term)[1]


# -- finite-difference verification -------------------------------------------


class LossId(enum.Enum):
    SPATIAL = "spatial"
    PROJECTION = "projection"
    DEPTH = "depth"
    QUADRATIC = "quadratic"


@dataclass(frozen=True)
class SpatialInstance:
    pred: Box3D
    gt: Box3D
    axis_source: AxisSource = AxisSource.PRED


@dataclass(frozen=True)
class ProjectionInstance:
    box: Box3D
    K: CameraIntrinsics
    gt_rect: Rect2D


@dataclass
class GradReport:
    analytic: np.ndarray
    numeric: np.ndarray
    max_rel_err: float
    tie_flag: bool

    def passed(self, tol: float) -> bool:
        return self.max_rel_err <= tol


def central_differences(
    f: Callable[[list], object], x: Sequence[float], eps: float, dps: int | None = FD_DPS
) -> np.ndarray:
    """Central differences of ``f`` at ``x``.

    With ``dps`` set, ``f`` is evaluated on mpmath numbers at that many
    significant digits, which keeps cancellation noise far below the
    truncation error of the eps-step.
    """
    out = np.empty(len(x))
    if dps is None:
        for i in range(len(x)):
            hi = list(x)
            lo = list(x)
            hi[i] += eps
            lo[i] -= eps
            out[i] = (f(hi) - f(lo)) / (2.0 * eps)
        return out
    with mpmath.workdps(dps):
        xm = [mpmath.mpf(v) for v in x]
        e = mpmath.mpf(eps)
        for i in range(len(x)):
            hi = list(xm)
            lo = list(xm)
            hi[i] += e
            lo[i] -= e
            out[i] = float((f(hi) - f(lo)) / (2 * e))
    return out


def max_relative_error(analytic, numeric, floor: float = REL_ERR_FLOOR) -> float:
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def finite_diff_check(loss_id, instance, eps: float = FD_EPS, dps: int | None = FD_DPS) -> GradReport:
    """Compare the analytic gradient of a loss against central differences."""
    if not eps > 0:
        raise InvalidArgumentError(f"eps must be positive, got {eps}")
    loss_id = LossId(loss_id)
    tie = False
    if loss_id is LossId.QUADRATIC:
        x = [float(v) for v in instance]
        analytic = 2.0 * np.asarray(x)
        f = lambda p: sum(v * v for v in p)  # noqa: E731
    elif loss_id is LossId.SPATIAL:
        x = list(_params(instance.pred))
        gt = _params(instance.gt)
        src = AxisSource.parse(instance.axis_source)
        _, analytic, tie = kernels.spatial_loss_grad(x, gt, int(src))
        f = lambda p: spatial_loss_generic(p, [type(p[0])(g) for g in gt], src)  # noqa: E731
    elif loss_id is LossId.PROJECTION:
        x = list(_params(instance.box))
        intr = instance.K.as_tuple()
        rect = instance.gt_rect.as_tuple()
        _, analytic, tie = kernels.projection_loss_grad(x, intr, rect)
        f = lambda p: projection_loss_generic(  # noqa: E731
            p, [type(p[0])(k) for k in intr], [type(p[0])(r) for r in rect]
        )
    else:
        t = instance
        x = [t.h3d, t.z_err, t.sigma_d]
        _, analytic, tie = depth_loss_and_grad(t)
        f = lambda p: depth_loss_generic(  # noqa: E731
            type(p[0])(t.f), p[0], type(p[0])(t.h2d), p[1], type(p[0])(t.z_gt), p[2]
        )
    numeric = central_differences(f, x, eps, dps)
    return GradReport(
        analytic=np.asarray(analytic, dtype=float),
        numeric=numeric,
        max_rel_err=max_relative_error(analytic, numeric),
        tie_flag=bool(tie),
    )


def param_names(loss_id) -> tuple:
    return DEPTH_PARAM_NAMES if LossId(loss_id) is LossId.DEPTH else PARAM_NAMES



def random_instance(loss_id, rng: np.random.Generator, K: CameraIntrinsics | None = None):
    """A random tie-free instance of ``loss_id`` (resampled until tie-free)."""
    loss_id = LossId(loss_id)
    K = KITTI_P2 if K is None else K
    while True:
        if loss_id is LossId.QUADRATIC:
            return rng.uniform(-5.0, 5.0, size=7)
        if loss_id is LossId.DEPTH:
            return DepthTerm(
                f=float(K.fv),
                h3d=rng.uniform(1.2, 2.0),
                h2d=rng.uniform(15.0, 200.0),
                z_err=rng.uniform(-2.0, 2.0),
                z_gt=rng.uniform(5.0, 60.0),
                sigma_d=rng.uniform(0.2, 3.0),
            )
        boxes, _, rects = synth_scene(rng, 2, K=K)
        gt, other = boxes
        d = rng.uniform(-1.0, 1.0, size=7)
        p = gt.params()
        pred = Box3D(
            p[0] + 0.5 * d[0], p[1] + 0.3 * d[1], p[2] + 0.5 * d[2],
            p[3] * (1 + 0.2 * d[3]), p[4] * (1 + 0.2 * d[4]), p[5] * (1 + 0.2 * d[5]),
            p[6] + 0.3 * d[6],
        )
        if loss_id is LossId.SPATIAL:
            src = AxisSource(int(rng.integers(0, 3)))
            inst = SpatialInstance(pred, gt, src)
            tie = spatial_loss_and_grad(pred, gt, src)[2]
        else:
            inst = ProjectionInstance(pred, K, perturb_rect(rects[0], 5.0, rng))
            try:
                tie = projection_loss_and_grad(pred, K, inst.gt_rect)[2]
            except BehindCameraError:
                continue
        if not tie:
            return inst

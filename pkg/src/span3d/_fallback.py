"""Pure-Python loss+gradient kernels built on :class:`span3d.dual.DualScalar`."""

import numpy as np

from span3d.dual import N_PARAMS, DualScalar
from span3d.geom3d import Z_EPS
from span3d.losses import AxisSource, projection_loss_generic, spatial_loss_generic


def _seed(params):
    return [DualScalar.variable(float(p), i, N_PARAMS) for i, p in enumerate(params)]


def _unpack(res):
    if not isinstance(res, DualScalar):
        return float(res), np.zeros(N_PARAMS), False
    return res.value, np.array(res.deriv, dtype=float), res.tie


def spatial_loss_grad(pred, gt, source=0):
    """Spatial alignment loss and its gradient w.r.t. the 7 ``pred`` params."""
    gt = tuple(float(g) for g in gt)
    return _unpack(spatial_loss_generic(_seed(pred), gt, AxisSource(source)))


def projection_loss_grad(params, intr, rect, z_eps=Z_EPS):
    """Projection alignment loss and its gradient w.r.t. the 7 box params."""
    intr = tuple(float(k) for k in intr)
    rect = tuple(float(r) for r in rect)
    return _unpack(projection_loss_generic(_seed(params), intr, rect, z_eps))

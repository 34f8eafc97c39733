"""Backend selection for the loss+gradient kernels.

The compiled extension is used when it imports; otherwise (or when
``SPAN3D_PURE_PYTHON`` is set to a non-empty value) the dual-number fallback
is used. Both expose the same two functions.
"""

import os

from span3d import _fallback

if os.environ.get("SPAN3D_PURE_PYTHON"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from span3d import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

spatial_loss_grad = _impl.spatial_loss_grad
projection_loss_grad = _impl.projection_loss_grad

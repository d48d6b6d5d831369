"""Kernel backend selection.

The compiled extension is preferred when present; the numpy backend is the
always-available fallback. ``MOTIONFORGE_BACKEND=numpy|native`` forces the
choice (``native`` raises if the extension was not built).
"""

import os

from . import numpy_backend

_requested = os.environ.get("MOTIONFORGE_BACKEND", "auto").lower()

if _requested == "numpy":
    _impl = numpy_backend
    backend_name = "numpy"
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]

        backend_name = "native"
    except ImportError:
        if _requested == "native":
            raise
        _impl = numpy_backend
        backend_name = "numpy"


def conv2d_forward(x, w, b, stride=1, pad=0):
    return _impl.conv2d_forward(x, w, b, stride, pad)


def conv2d_backward(x, w, gy, stride=1, pad=0, need_gx=True):
    return _impl.conv2d_backward(x, w, gy, stride, pad, need_gx)


def warp_bilinear(img, u, v, fill):
    return _impl.warp_bilinear(img, u, v, fill)


def warp_bilinear_grad_flow(img, u, v, gout, fill):
    return _impl.warp_bilinear_grad_flow(img, u, v, gout, fill)

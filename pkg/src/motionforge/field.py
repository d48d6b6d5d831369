"""Flow fields, images, masks, normalization, and backward bilinear warping.

Array conventions (all float64, C-contiguous):

* image:  ``(C, H, W)`` with ``C in {1, 3}``, values in ``[0, 1]``
* flow:   ``(2, H, W)`` pixel-unit displacements, channel 0 horizontal (u),
  channel 1 vertical (v)
* homogeneous flow: ``(3, H, W)``, channels 0-1 normalized flow, channel 2
  identically 1
* mask:   ``(1, H, W)`` in ``[0, 1]``; 1 marks valid content, 0 margin

Warping is backward sampling: ``output(x, y)`` reads the input at
``(x + u(x, y), y + v(x, y))`` with bilinear interpolation. Out-of-image
samples blend toward a constant fill: 1.0 (white) for images, 0.0 for masks.
"""

import numpy as np

from . import _kernels

IMAGE_FILL = 1.0
MASK_FILL = 0.0
DEFAULT_GAMMA = 64.0


def as_image(arr):
    """Validate and return an image array (finite, in [0, 1], 1 or 3 channels)."""
    a = np.ascontiguousarray(arr, dtype=np.float64)
    if a.ndim != 3 or a.shape[0] not in (1, 3):
        raise ValueError(f"image must be (C,H,W) with C in {{1,3}}, got {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("image contains non-finite values")
    if a.min() < 0.0 or a.max() > 1.0:
        raise ValueError("image values outside [0,1]; use clamp01 first")
    return a


def clamp01(arr):
    return np.clip(np.ascontiguousarray(arr, dtype=np.float64), 0.0, 1.0)


def as_flow(arr):
    """Validate and return a flow array (finite, sane displacement bound)."""
    a = np.ascontiguousarray(arr, dtype=np.float64)
    if a.ndim != 3 or a.shape[0] != 2:
        raise ValueError(f"flow must be (2,H,W), got {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("flow contains non-finite values")
    bound = 2.0 * max(a.shape[1], a.shape[2])
    if np.abs(a).max() > bound:
        raise ValueError(f"flow magnitude exceeds sanity bound {bound}")
    return a


def as_mask(arr):
    a = np.ascontiguousarray(arr, dtype=np.float64)
    if a.ndim != 3 or a.shape[0] != 1:
        raise ValueError(f"mask must be (1,H,W), got {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("mask contains non-finite values")
    if a.min() < 0.0 or a.max() > 1.0:
        raise ValueError("mask values outside [0,1]")
    return a


def _check_gamma(gamma):
    if not np.isfinite(gamma) or gamma <= 0.0:
        raise ValueError(f"gamma must be a positive finite float, got {gamma}")
    return float(gamma)


def normalize_flow(flow, gamma=DEFAULT_GAMMA):
    """Map a pixel-unit flow to the dimensionless range: f = F / gamma."""
    gamma = _check_gamma(gamma)
    return as_flow(flow) / gamma


def denormalize_flow(norm_flow, gamma=DEFAULT_GAMMA):
    """Inverse of normalize_flow: F = f * gamma."""
    gamma = _check_gamma(gamma)
    a = np.ascontiguousarray(norm_flow, dtype=np.float64)
    if a.ndim != 3 or a.shape[0] != 2:
        raise ValueError(f"normalized flow must be (2,H,W), got {a.shape}")
    return a * gamma


def to_homogeneous(norm_flow):
    """Append an all-ones third channel: f' = cat(f, 1)."""
    a = np.ascontiguousarray(norm_flow, dtype=np.float64)
    if a.ndim != 3 or a.shape[0] != 2:
        raise ValueError(f"normalized flow must be (2,H,W), got {a.shape}")
    ones = np.ones((1,) + a.shape[1:], dtype=np.float64)
    return np.ascontiguousarray(np.concatenate([a, ones], axis=0))


def from_homogeneous(hom_flow):
    """Extract the first two channels; the third is discarded whatever it holds."""
    a = np.ascontiguousarray(hom_flow, dtype=np.float64)
    if a.ndim != 3 or a.shape[0] != 3:
        raise ValueError(f"homogeneous flow must be (3,H,W), got {a.shape}")
    return np.ascontiguousarray(a[:2])


def warp(image, flow, fill=IMAGE_FILL):
    """Backward-warp an image by a pixel-unit flow field."""
    img = np.ascontiguousarray(image, dtype=np.float64)
    flo = np.ascontiguousarray(flow, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"image must be (C,H,W), got {img.shape}")
    if flo.ndim != 3 or flo.shape[0] != 2 or flo.shape[1:] != img.shape[1:]:
        raise ValueError(f"flow shape {flo.shape} does not match image {img.shape}")
    return _kernels.warp_bilinear(img, flo[0], flo[1], float(fill))


def warp_flow_gradient(image, flow, grad_output, fill=IMAGE_FILL):
    """Gradient of ``warp`` w.r.t. the flow, given the output gradient.

    At exact integer sample positions the right-sided derivative is used
    (the floor-based corner difference).
    """
    img = np.ascontiguousarray(image, dtype=np.float64)
    flo = np.ascontiguousarray(flow, dtype=np.float64)
    g = np.ascontiguousarray(grad_output, dtype=np.float64)
    gu, gv = _kernels.warp_bilinear_grad_flow(img, flo[0], flo[1], g, float(fill))
    return np.ascontiguousarray(np.stack([gu, gv]))


def warp_mask(mask, flow, tau=0.5):
    """Warp a validity mask with fill 0, then threshold at tau to {0, 1}."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0,1), got {tau}")
    m = np.ascontiguousarray(mask, dtype=np.float64)
    if m.ndim != 3 or m.shape[0] != 1:
        raise ValueError(f"mask must be (1,H,W), got {m.shape}")
    warped = warp(m, flow, fill=MASK_FILL)
    return np.where(warped >= tau, 1.0, 0.0)

"""Vectorized numpy implementations of the hot kernels.

Reference semantics for the compiled backend in ``_native.pyx``: both must
produce the same floor-based bilinear sampling (right-sided derivative at
integer sample positions) and the same zero-padded convolution layout.
"""

import numpy as np


def conv2d_forward(x, w, b, stride=1, pad=0):
    """2-D convolution (cross-correlation) of x[ci,h,w] with w[co,ci,kh,kw]."""
    ci, h, wd = x.shape
    co, ci2, kh, kw = w.shape
    if ci2 != ci:
        raise ValueError(f"channel mismatch: input {ci}, kernel {ci2}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    y = np.tensordot(w, cols, axes=([1, 2, 3], [0, 1, 2]))
    y += b[:, None, None]
    return np.ascontiguousarray(y)


def conv2d_backward(x, w, gy, stride=1, pad=0, need_gx=True):
    """Gradients of conv2d_forward w.r.t. input, weights, and bias."""
    ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    _, ho, wo = gy.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    gb = gy.sum(axis=(1, 2))
    gw = np.tensordot(gy, cols, axes=([1, 2], [3, 4]))
    gx = None
    if need_gx:
        gcols = np.tensordot(w, gy, axes=([0], [0]))  # [ci,kh,kw,ho,wo]
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i : i + stride * (ho - 1) + 1 : stride,
                    j : j + stride * (wo - 1) + 1 : stride] += gcols[:, i, j]
        gx = np.ascontiguousarray(gxp[:, pad : pad + h, pad : pad + wd])
    return gx, np.ascontiguousarray(gw), gb


def _im2col(xp, kh, kw, stride, ho, wo):
    ci = xp.shape[0]
    cols = np.empty((ci, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i : i + stride * (ho - 1) + 1 : stride,
                               j : j + stride * (wo - 1) + 1 : stride]
    return cols


def warp_bilinear(img, u, v, fill):
    """Backward-warp img[c,h,w]: output(x,y) samples img at (x+u, y+v).

    Samples outside the image blend toward the constant ``fill`` value; a
    fully outside sample returns exactly ``fill``.
    """
    c, h, w = img.shape
    ys, xs = np.meshgrid(np.arange(h, dtype=img.dtype),
                         np.arange(w, dtype=img.dtype), indexing="ij")
    sx = xs + u
    sy = ys + v
    x0f = np.floor(sx)
    y0f = np.floor(sy)
    wx = sx - x0f
    wy = sy - y0f
    x0 = x0f.astype(np.int64)
    y0 = y0f.astype(np.int64)
    out = np.zeros_like(img)
    for dy in (0, 1):
        for dx in (0, 1):
            wgt = (wx if dx else 1.0 - wx) * (wy if dy else 1.0 - wy)
            out += wgt * _corner(img, x0 + dx, y0 + dy, fill)
    return out


def warp_bilinear_grad_flow(img, u, v, gout, fill):
    """Gradient of warp_bilinear w.r.t. the flow components (u, v)."""
    c, h, w = img.shape
    ys, xs = np.meshgrid(np.arange(h, dtype=img.dtype),
                         np.arange(w, dtype=img.dtype), indexing="ij")
    sx = xs + u
    sy = ys + v
    x0f = np.floor(sx)
    y0f = np.floor(sy)
    wx = sx - x0f
    wy = sy - y0f
    x0 = x0f.astype(np.int64)
    y0 = y0f.astype(np.int64)
    p00 = _corner(img, x0, y0, fill)
    p10 = _corner(img, x0 + 1, y0, fill)
    p01 = _corner(img, x0, y0 + 1, fill)
    p11 = _corner(img, x0 + 1, y0 + 1, fill)
    d_dsx = (1.0 - wy) * (p10 - p00) + wy * (p11 - p01)
    d_dsy = (1.0 - wx) * (p01 - p00) + wx * (p11 - p10)
    gu = np.sum(gout * d_dsx, axis=0)
    gv = np.sum(gout * d_dsy, axis=0)
    return gu, gv


def _corner(img, xi, yi, fill):
    c, h, w = img.shape
    inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    xc = np.clip(xi, 0, w - 1)
    yc = np.clip(yi, 0, h - 1)
    pix = img[:, yc, xc]
    return np.where(inside, pix, fill)

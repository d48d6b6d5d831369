# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: 2-D convolution and bilinear warping with gradients.

Semantics match numpy_backend exactly (same sampling formula, same padding);
only the evaluation order of floating-point sums differs.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef extern from "math.h":
    double c_floor "floor"(double x) nogil


def conv2d_forward(double[:, :, ::1] x, double[:, :, :, ::1] w,
                   double[::1] b, int stride=1, int pad=0):
    cdef int ci = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef int co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    if w.shape[1] != ci:
        raise ValueError(f"channel mismatch: input {ci}, kernel {w.shape[1]}")
    cdef int ho = (h + 2 * pad - kh) // stride + 1
    cdef int wo = (wd + 2 * pad - kw) // stride + 1
    xp_arr = np.zeros((ci, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
    xp_arr[:, pad:pad + h, pad:pad + wd] = x
    cdef double[:, :, ::1] xp = xp_arr
    out = np.empty((co, ho, wo), dtype=np.float64)
    cdef double[:, :, ::1] y = out
    cdef int oc, ic, oy, ox, i, j
    cdef double wv
    with nogil:
        for oc in range(co):
            for oy in range(ho):
                for ox in range(wo):
                    y[oc, oy, ox] = b[oc]
            for ic in range(ci):
                for i in range(kh):
                    for j in range(kw):
                        wv = w[oc, ic, i, j]
                        for oy in range(ho):
                            for ox in range(wo):
                                y[oc, oy, ox] += wv * xp[ic, oy * stride + i,
                                                         ox * stride + j]
    return out


def conv2d_backward(double[:, :, ::1] x, double[:, :, :, ::1] w,
                    double[:, :, ::1] gy, int stride=1, int pad=0,
                    bint need_gx=True):
    cdef int ci = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef int co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef int ho = gy.shape[1], wo = gy.shape[2]

    xp_arr = np.zeros((ci, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
    xp_arr[:, pad:pad + h, pad:pad + wd] = x
    cdef double[:, :, ::1] xp = xp_arr
    gw_arr = np.zeros((co, ci, kh, kw), dtype=np.float64)
    gb_arr = np.zeros(co, dtype=np.float64)
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    gxp_arr = np.zeros((ci, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
    cdef double[:, :, ::1] gxp = gxp_arr
    cdef bint do_gx = need_gx

    cdef int oc, ic, oy, ox, i, j
    cdef double g, acc, wv
    with nogil:
        for oc in range(co):
            acc = 0.0
            for oy in range(ho):
                for ox in range(wo):
                    acc += gy[oc, oy, ox]
            gb[oc] = acc
            for ic in range(ci):
                for i in range(kh):
                    for j in range(kw):
                        acc = 0.0
                        for oy in range(ho):
                            for ox in range(wo):
                                acc += gy[oc, oy, ox] * xp[ic, oy * stride + i,
                                                           ox * stride + j]
                        gw[oc, ic, i, j] = acc
                        if do_gx:
                            wv = w[oc, ic, i, j]
                            for oy in range(ho):
                                for ox in range(wo):
                                    gxp[ic, oy * stride + i, ox * stride + j] += \
                                        wv * gy[oc, oy, ox]
    gx_arr = None
    if do_gx:
        gx_arr = np.ascontiguousarray(gxp_arr[:, pad:pad + h, pad:pad + wd])
    return gx_arr, gw_arr, gb_arr


cdef inline double _corner(double[:, :, ::1] img, int c, long xi, long yi,
                           int h, int w, double fill) noexcept nogil:
    if xi < 0 or xi >= w or yi < 0 or yi >= h:
        return fill
    return img[c, yi, xi]


def warp_bilinear(double[:, :, ::1] img, double[:, ::1] u, double[:, ::1] v,
                  double fill):
    cdef int c = img.shape[0], h = img.shape[1], w = img.shape[2]
    out = np.empty((c, h, w), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef int ch, y, x
    cdef long x0, y0
    cdef double sx, sy, wx, wy, p00, p10, p01, p11
    with nogil:
        for y in range(h):
            for x in range(w):
                sx = x + u[y, x]
                sy = y + v[y, x]
                x0 = <long>c_floor(sx)
                y0 = <long>c_floor(sy)
                wx = sx - x0
                wy = sy - y0
                for ch in range(c):
                    p00 = _corner(img, ch, x0, y0, h, w, fill)
                    p10 = _corner(img, ch, x0 + 1, y0, h, w, fill)
                    p01 = _corner(img, ch, x0, y0 + 1, h, w, fill)
                    p11 = _corner(img, ch, x0 + 1, y0 + 1, h, w, fill)
                    o[ch, y, x] = ((1.0 - wx) * (1.0 - wy) * p00
                                   + wx * (1.0 - wy) * p10
                                   + (1.0 - wx) * wy * p01
                                   + wx * wy * p11)
    return out


def warp_bilinear_grad_flow(double[:, :, ::1] img, double[:, ::1] u,
                            double[:, ::1] v, double[:, :, ::1] gout,
                            double fill):
    cdef int c = img.shape[0], h = img.shape[1], w = img.shape[2]
    gu_arr = np.zeros((h, w), dtype=np.float64)
    gv_arr = np.zeros((h, w), dtype=np.float64)
    cdef double[:, ::1] gu = gu_arr
    cdef double[:, ::1] gv = gv_arr
    cdef int ch, y, x
    cdef long x0, y0
    cdef double sx, sy, wx, wy, p00, p10, p01, p11, g
    with nogil:
        for y in range(h):
            for x in range(w):
                sx = x + u[y, x]
                sy = y + v[y, x]
                x0 = <long>c_floor(sx)
                y0 = <long>c_floor(sy)
                wx = sx - x0
                wy = sy - y0
                for ch in range(c):
                    p00 = _corner(img, ch, x0, y0, h, w, fill)
                    p10 = _corner(img, ch, x0 + 1, y0, h, w, fill)
                    p01 = _corner(img, ch, x0, y0 + 1, h, w, fill)
                    p11 = _corner(img, ch, x0 + 1, y0 + 1, h, w, fill)
                    g = gout[ch, y, x]
                    gu[y, x] += g * ((1.0 - wy) * (p10 - p00)
                                     + wy * (p11 - p01))
                    gv[y, x] += g * ((1.0 - wx) * (p01 - p00)
                                     + wx * (p11 - p10))
    return gu_arr, gv_arr

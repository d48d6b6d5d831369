"""PSNR, SSIM, flow endpoint error, and difference heatmaps.

PSNR assumes a [0, 1] dynamic range; identical inputs yield math.inf in the
API and the 99.0 dB sentinel in CSV output. SSIM uses the standard 11x11
Gaussian window (sigma 1.5) with K1=0.01, K2=0.03 over windows that fit
fully inside the image, averaged across channels.
"""

import math

import numpy as np
from scipy.ndimage import correlate1d

PSNR_SENTINEL_DB = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """10*log10(1/MSE) in dB; math.inf when the inputs are identical."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size, sigma):
    r = (size - 1) / 2.0
    xs = np.arange(size) - r
    k = np.exp(-(xs**2) / (2.0 * sigma**2))
    return k / k.sum()


def _window_mean(x, k):
    r = len(k) // 2
    out = correlate1d(x, k, axis=0, mode="constant")
    out = correlate1d(out, k, axis=1, mode="constant")
    return out[r:-r, r:-r]


def ssim(a, b, window=SSIM_WINDOW, sigma=SSIM_SIGMA, k1=SSIM_K1, k2=SSIM_K2):
    """Mean local structural similarity with a Gaussian window."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[1] < window or a.shape[2] < window:
        raise ValueError(f"image {a.shape[1:]} smaller than {window}x{window} window")
    kern = _gaussian_window(window, sigma)
    c1 = (k1 * 1.0) ** 2
    c2 = (k2 * 1.0) ** 2
    scores = []
    for ch in range(a.shape[0]):
        x, y = a[ch], b[ch]
        mx = _window_mean(x, kern)
        my = _window_mean(y, kern)
        mxx = _window_mean(x * x, kern)
        myy = _window_mean(y * y, kern)
        mxy = _window_mean(x * y, kern)
        vx = mxx - mx * mx
        vy = myy - my * my
        cov = mxy - mx * my
        num = (2 * mx * my + c1) * (2 * cov + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def flow_epe(flow_pred, flow_gt):
    """Mean Euclidean endpoint error in pixels."""
    f, g = _check_pair(flow_pred, flow_gt)
    if f.ndim != 3 or f.shape[0] != 2:
        raise ValueError(f"flows must be (2,H,W), got {f.shape}")
    return float(np.mean(np.sqrt(np.sum((f - g) ** 2, axis=0))))


def heatmap(a, b):
    """Per-pixel mean-abs-channel difference, max-normalized to [0, 1]."""
    a, b = _check_pair(a, b)
    d = np.mean(np.abs(a - b), axis=0)
    peak = d.max()
    if peak > 0:
        d = d / peak
    return d[None]

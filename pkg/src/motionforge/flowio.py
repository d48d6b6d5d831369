"""File I/O: Middlebury .flo flow files and 8-bit PNG images/masks."""

import numpy as np
from PIL import Image

FLO_MAGIC = 202021.25


def write_flo(path, flow):
    """Write a (2,H,W) flow as a Middlebury .flo file (float32 LE)."""
    f = np.asarray(flow, dtype=np.float64)
    if f.ndim != 3 or f.shape[0] != 2:
        raise ValueError(f"flow must be (2,H,W), got {f.shape}")
    h, w = f.shape[1], f.shape[2]
    # (H,W,2) interleaved u,v row-major
    data = np.empty((h, w, 2), dtype="<f4")
    data[:, :, 0] = f[0]
    data[:, :, 1] = f[1]
    with open(path, "wb") as fh:
        fh.write(np.float32(FLO_MAGIC).astype("<f4").tobytes())
        fh.write(np.array([w, h], dtype="<i4").tobytes())
        fh.write(data.tobytes())


def read_flo(path):
    """Read a Middlebury .flo file into a (2,H,W) float64 flow."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12:
        raise ValueError(f"truncated .flo file: {path}")
    magic = np.frombuffer(raw, dtype="<f4", count=1)[0]
    if magic != np.float32(FLO_MAGIC):
        raise ValueError(f"bad .flo magic {magic!r} in {path}")
    w, h = np.frombuffer(raw, dtype="<i4", count=2, offset=4)
    expected = 12 + 8 * int(w) * int(h)
    if len(raw) != expected:
        raise ValueError(f"corrupt .flo file {path}: {len(raw)} bytes, want {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(int(h), int(w), 2)
    flow = np.empty((2, int(h), int(w)), dtype=np.float64)
    flow[0] = data[:, :, 0]
    flow[1] = data[:, :, 1]
    return flow


def _quantize(img):
    scaled = np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def write_png(path, image):
    """Write a (1,H,W) or (3,H,W) [0,1] image as an 8-bit PNG (round half-up)."""
    a = np.asarray(image, dtype=np.float64)
    if a.ndim != 3 or a.shape[0] not in (1, 3):
        raise ValueError(f"image must be (C,H,W) with C in {{1,3}}, got {a.shape}")
    q = _quantize(a)
    if a.shape[0] == 1:
        Image.fromarray(q[0], mode="L").save(path)
    else:
        Image.fromarray(np.moveaxis(q, 0, 2), mode="RGB").save(path)


def read_png(path):
    """Read a PNG into a (C,H,W) float64 image in [0,1]."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 2:
        out = arr[None].astype(np.float64)
    elif arr.ndim == 3:
        out = np.moveaxis(arr[:, :, :3], 2, 0).astype(np.float64)
    else:
        raise ValueError(f"unsupported PNG layout in {path}")
    return np.ascontiguousarray(out / 255.0)

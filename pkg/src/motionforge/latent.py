"""Invertible latent codec and condition stacking.

The pixel-to-latent map is a lossless space-to-depth rearrangement with
factor ``s`` (default 2): a ``(C, H, W)`` tensor becomes
``(C*s*s, H/s, W/s)``. Latent channel ``(dy*s + dx)*C + c`` holds the pixels
of input channel ``c`` at sub-position ``(dy, dx)`` of each s-by-s block.
``decode(encode(x)) == x`` bit-exactly.

Also holds the STMT raw tensor container used for latents and checkpoints:
magic ``STMT``, u32 version=1, u32 ndim, ndim u32 dims, float32 LE data.
"""

import numpy as np

DEFAULT_FACTOR = 2
STMT_MAGIC = b"STMT"
STMT_VERSION = 1


def encode(x, s=DEFAULT_FACTOR):
    """Space-to-depth: (C,H,W) -> (C*s*s, H/s, W/s)."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 3:
        raise ValueError(f"expected (C,H,W), got {a.shape}")
    c, h, w = a.shape
    if h % s or w % s:
        raise ValueError(f"spatial dims {h}x{w} not divisible by factor {s}")
    z = a.reshape(c, h // s, s, w // s, s)
    z = z.transpose(2, 4, 0, 1, 3)
    return np.ascontiguousarray(z.reshape(c * s * s, h // s, w // s))


def decode(z, s=DEFAULT_FACTOR):
    """Depth-to-space inverse of encode."""
    a = np.ascontiguousarray(z, dtype=np.float64)
    if a.ndim != 3:
        raise ValueError(f"expected (Cz,H,W), got {a.shape}")
    cz, hl, wl = a.shape
    if cz % (s * s):
        raise ValueError(f"channel count {cz} not divisible by {s * s}")
    c = cz // (s * s)
    x = a.reshape(s, s, c, hl, wl)
    x = x.transpose(2, 3, 0, 4, 1)
    return np.ascontiguousarray(x.reshape(c, hl * s, wl * s))


def decode_gradient(gx, s=DEFAULT_FACTOR):
    """Backprop through decode: rearrange a pixel-space gradient to latent layout."""
    return encode(gx, s)


def stack_input(conds, z_t):
    """Concatenate condition latents (in order) with the noisy flow latent last."""
    if len(conds) < 1:
        raise ValueError("at least one condition latent is required")
    blocks = [np.ascontiguousarray(c, dtype=np.float64) for c in conds]
    zt = np.ascontiguousarray(z_t, dtype=np.float64)
    spatial = zt.shape[1:]
    for b in blocks:
        if b.ndim != 3 or b.shape[1:] != spatial:
            raise ValueError(f"condition spatial dims {b.shape[1:]} != {spatial}")
    return np.ascontiguousarray(np.concatenate(blocks + [zt], axis=0))


def write_stmt(path, tensor):
    """Write one float32 tensor in the STMT container format."""
    a = np.ascontiguousarray(tensor)
    data = a.astype("<f4")
    header = STMT_MAGIC + np.array([STMT_VERSION, a.ndim], dtype="<u4").tobytes()
    dims = np.array(a.shape, dtype="<u4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dims)
        fh.write(data.tobytes())


def read_stmt(path):
    """Read an STMT container back into a float64 array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != STMT_MAGIC:
        raise ValueError(f"bad STMT magic in {path}")
    version, ndim = np.frombuffer(raw, dtype="<u4", count=2, offset=4)
    if version != STMT_VERSION:
        raise ValueError(f"unsupported STMT version {version} in {path}")
    dims = np.frombuffer(raw, dtype="<u4", count=int(ndim), offset=12)
    shape = tuple(int(d) for d in dims)
    count = int(np.prod(shape)) if shape else 1
    offset = 12 + 4 * int(ndim)
    if len(raw) != offset + 4 * count:
        raise ValueError(f"corrupt STMT file {path}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    return data.reshape(shape).astype(np.float64)

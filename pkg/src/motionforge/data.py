"""Deterministic synthetic dataset generation for the two rectification tasks.

Stitched-image samples (task "sir") warp a clean image by a smooth random
displacement field, leaving irregular white margins and a validity mask; the
corrective flow is recovered by fixed-point inversion of the generating
field. Rolling-shutter samples (task "rsc") apply a row-linear horizontal
shift whose exact corrective flow is known in closed form.

Pseudo training labels are the corrective flow plus optional smooth
low-frequency noise, which separates the label distribution from the flow
the images actually imply.
"""

import os
import re
from dataclasses import dataclass

import numpy as np

from . import flowio
from .field import clamp01, warp, warp_mask

IMAGE_KINDS = ("checker", "lines", "smooth-noise", "shapes")

_INVERT_ITERS = 8


@dataclass
class SampleRecord:
    task: str
    seed: int
    gt: np.ndarray
    cond: np.ndarray
    mask: np.ndarray
    flow_gt: np.ndarray
    flow_pseudo: np.ndarray
    magnitude: float = 0.0
    noise_scale: float = 0.0


def _bilinear_resize(a, h, w):
    """Exact-size bilinear upsampling of (C, ch, cw) grids."""
    c, ch, cw = a.shape
    ys = np.linspace(0.0, ch - 1.0, h)
    xs = np.linspace(0.0, cw - 1.0, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, ch - 1)
    x1 = np.minimum(x0 + 1, cw - 1)
    fy = (ys - y0)[None, :, None]
    fx = (xs - x0)[None, None, :]
    top = a[:, y0][:, :, x0] * (1 - fx) + a[:, y0][:, :, x1] * fx
    bot = a[:, y1][:, :, x0] * (1 - fx) + a[:, y1][:, :, x1] * fx
    return top * (1 - fy) + bot * fy


def _blur3(img):
    """Separable [1,2,1]/4 smoothing with edge replication."""
    p = np.pad(img, ((0, 0), (1, 1), (0, 0)), mode="edge")
    img = 0.25 * p[:, :-2] + 0.5 * p[:, 1:-1] + 0.25 * p[:, 2:]
    p = np.pad(img, ((0, 0), (0, 0), (1, 1)), mode="edge")
    return 0.25 * p[:, :, :-2] + 0.5 * p[:, :, 1:-1] + 0.25 * p[:, :, 2:]


def gen_base_image(seed, kind, h, w):
    """Procedural (3,H,W) test image, deterministic in (seed, kind, dims)."""
    if kind not in IMAGE_KINDS:
        raise ValueError(f"unknown image kind {kind!r}, want one of {IMAGE_KINDS}")
    rng = np.random.default_rng([int(seed), IMAGE_KINDS.index(kind)])
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    if kind == "checker":
        block = ((yy // 8 + xx // 8) % 2).astype(np.float64)
        img = np.broadcast_to(block, (3, h, w)).copy()
    elif kind == "lines":
        img = np.full((3, h, w), 0.15)
        for _ in range(12):
            p0 = rng.uniform([0, 0], [h - 1, w - 1])
            p1 = rng.uniform([0, 0], [h - 1, w - 1])
            color = rng.uniform(0.6, 1.0, size=3)
            n = 2 * max(h, w)
            ts = np.linspace(0.0, 1.0, n)
            ly = np.clip(np.round(p0[0] + ts * (p1[0] - p0[0])).astype(int), 0, h - 1)
            lx = np.clip(np.round(p0[1] + ts * (p1[1] - p0[1])).astype(int), 0, w - 1)
            img[:, ly, lx] = color[:, None]
    elif kind == "smooth-noise":
        ch = max(2, h // 16 + 1)
        cw = max(2, w // 16 + 1)
        coarse = rng.uniform(size=(3, ch, cw))
        img = _bilinear_resize(coarse, h, w)
        lo, hi = img.min(), img.max()
        span = hi - lo if hi > lo else 1.0
        img = 0.03 + (img - lo) / span * 0.94
    else:  # shapes
        grad = 0.2 + 0.6 * (yy / max(h - 1, 1))
        img = np.broadcast_to(grad, (3, h, w)).copy()
        for _ in range(6):
            y0, x0 = rng.integers(0, h), rng.integers(0, w)
            hh, ww = rng.integers(h // 8, h // 2), rng.integers(w // 8, w // 2)
            img[:, y0:y0 + hh, x0:x0 + ww] = rng.uniform(0.05, 0.95, 3)[:, None, None]
        for _ in range(4):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            r = rng.uniform(min(h, w) / 12, min(h, w) / 4)
            disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
            img[:, disk] = rng.uniform(0.05, 0.95, 3)[:, None]
    return clamp01(img)


def smooth_random_flow(rng, h, w, magnitude, cells=4):
    """Smooth random displacement field with peak |component| = magnitude."""
    coarse = rng.standard_normal((2, cells + 1, cells + 1))
    flow = _bilinear_resize(coarse, h, w)
    peak = np.abs(flow).max()
    if peak > 0 and magnitude > 0:
        flow *= magnitude / peak
    else:
        flow = np.zeros_like(flow)
    return flow


def invert_flow(flow, iters=_INVERT_ITERS):
    """Fixed-point inverse: find F with F(p) = -D(p + F(p))."""
    inv = -flow
    for _ in range(iters):
        inv = -warp(flow, inv, fill=0.0)
    return inv


# smoothing passes per kind: enough that double bilinear resampling (warp
# out, warp back) stays within the reconstruction tolerance; sharper
# structures need more softening
_SAMPLE_BLUR = {"checker": 5, "lines": 3, "smooth-noise": 2, "shapes": 3}


def _base_for_sample(rng_seed, kind, h, w):
    if kind == "auto":
        kind = IMAGE_KINDS[int(rng_seed) % len(IMAGE_KINDS)]
    img = gen_base_image(rng_seed, kind, h, w)
    for _ in range(_SAMPLE_BLUR[kind]):
        img = _blur3(img)
    return clamp01(img)


def gen_sir_sample(seed, h, w, magnitude, kind="auto"):
    """Stitched-image record: warped content, white margins, validity mask."""
    rng = np.random.default_rng([int(seed), 11])
    gt = _base_for_sample(seed, kind, h, w)
    disp = smooth_random_flow(rng, h, w, magnitude)
    cond = warp(gt, disp, fill=1.0)
    mask = warp_mask(np.ones((1, h, w)), disp, tau=0.5)
    flow_gt = invert_flow(disp)
    if magnitude == 0:
        flow_gt = np.zeros_like(flow_gt)
    return SampleRecord(
        task="sir", seed=int(seed), gt=gt, cond=cond, mask=mask,
        flow_gt=flow_gt, flow_pseudo=flow_gt.copy(), magnitude=float(magnitude),
    )


def gen_rsc_sample(seed, h, w, a, b, gamma=64.0, kind="auto"):
    """Rolling-shutter record: row-linear shift u(row) = a + b*row, mask all ones."""
    if abs(a) + abs(b) * h > gamma:
        raise ValueError(f"row shift bound violated: |{a}| + |{b}|*{h} > {gamma}")
    gt = _base_for_sample(seed, kind, h, w)
    rows = a + b * np.arange(h, dtype=np.float64)
    disp = np.zeros((2, h, w))
    disp[0] = rows[:, None]
    cond = warp(gt, disp, fill=1.0)
    flow_gt = -disp
    return SampleRecord(
        task="rsc", seed=int(seed), gt=gt, cond=cond,
        mask=np.ones((1, h, w)), flow_gt=flow_gt, flow_pseudo=flow_gt.copy(),
        magnitude=float(np.abs(rows).max()),
    )


def perturb_pseudo_flow(flow_gt, noise_scale, seed):
    """Add smooth low-frequency noise with exact pooled RMS = noise_scale px."""
    if noise_scale < 0:
        raise ValueError(f"noise scale must be >= 0, got {noise_scale}")
    flow_gt = np.asarray(flow_gt, dtype=np.float64)
    if noise_scale == 0:
        return flow_gt.copy()
    h, w = flow_gt.shape[1:]
    rng = np.random.default_rng([int(seed), 17])
    coarse = rng.standard_normal((2, 5, 5))
    noise = _bilinear_resize(coarse, h, w)
    current = np.sqrt(np.mean(noise**2))
    noise *= noise_scale / current
    return flow_gt + noise


def gen_dataset(task, count, seed, h, w, magnitude, noise_scale=0.0, kind="auto",
                gamma=64.0):
    """Generate `count` records; record i is a pure function of (seed, i)."""
    if task not in ("sir", "rsc"):
        raise ValueError(f"unknown task {task!r}, want 'sir' or 'rsc'")
    records = []
    for i in range(count):
        rec_seed = int(seed) * 100003 + i
        if task == "sir":
            rec = gen_sir_sample(rec_seed, h, w, magnitude, kind=kind)
        else:
            rng = np.random.default_rng([rec_seed, 23])
            a = rng.uniform(-magnitude / 2, magnitude / 2)
            bmax = (magnitude - abs(a)) / max(h - 1, 1)
            b = rng.uniform(-bmax, bmax)
            rec = gen_rsc_sample(rec_seed, h, w, a, b, gamma=gamma, kind=kind)
        rec.flow_pseudo = perturb_pseudo_flow(rec.flow_gt, noise_scale, rec_seed)
        rec.noise_scale = float(noise_scale)
        records.append(rec)
    return records


def write_dataset(records, out_dir):
    """One directory per sample: gt/cond/mask PNGs, .flo flows, meta.txt."""
    os.makedirs(out_dir, exist_ok=True)
    for i, rec in enumerate(records):
        d = os.path.join(out_dir, f"sample_{i:05d}")
        os.makedirs(d, exist_ok=True)
        flowio.write_png(os.path.join(d, "gt.png"), rec.gt)
        flowio.write_png(os.path.join(d, "cond.png"), rec.cond)
        flowio.write_png(os.path.join(d, "mask.png"), rec.mask)
        flowio.write_flo(os.path.join(d, "flow_gt.flo"), rec.flow_gt)
        flowio.write_flo(os.path.join(d, "flow_pseudo.flo"), rec.flow_pseudo)
        with open(os.path.join(d, "meta.txt"), "w") as fh:
            fh.write(f"task = {rec.task}\n")
            fh.write(f"seed = {rec.seed}\n")
            fh.write(f"magnitude = {rec.magnitude!r}\n")
            fh.write(f"noise_scale = {rec.noise_scale!r}\n")


def _read_meta(path):
    meta = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            m = re.match(r"([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)", line)
            if not m:
                raise ValueError(f"malformed meta line in {path}: {line!r}")
            meta[m.group(1)] = m.group(2)
    return meta


def read_dataset(in_dir):
    """Load every sample_* directory; raise on an empty or corrupt dataset."""
    if not os.path.isdir(in_dir):
        raise FileNotFoundError(f"dataset directory not found: {in_dir}")
    names = sorted(n for n in os.listdir(in_dir) if n.startswith("sample_"))
    if not names:
        raise ValueError(f"empty dataset: no sample_* directories in {in_dir}")
    records = []
    for name in names:
        d = os.path.join(in_dir, name)
        meta = _read_meta(os.path.join(d, "meta.txt"))
        records.append(SampleRecord(
            task=meta["task"],
            seed=int(meta["seed"]),
            gt=flowio.read_png(os.path.join(d, "gt.png")),
            cond=flowio.read_png(os.path.join(d, "cond.png")),
            mask=flowio.read_png(os.path.join(d, "mask.png")),
            flow_gt=flowio.read_flo(os.path.join(d, "flow_gt.flo")),
            flow_pseudo=flowio.read_flo(os.path.join(d, "flow_pseudo.flo")),
            magnitude=float(meta.get("magnitude", 0.0)),
            noise_scale=float(meta.get("noise_scale", 0.0)),
        ))
    return records

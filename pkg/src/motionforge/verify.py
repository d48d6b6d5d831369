"""Built-in oracle suite behind the `verify` command.

Each check recomputes an independent reference (brute force, closed form,
finite differences) and compares the library against it. Checks are kept
fast enough to run on every fresh checkout.
"""

import tempfile

import numpy as np

from . import latent, metrics, training
from .data import gen_sir_sample, perturb_pseudo_flow
from .field import (
    denormalize_flow,
    from_homogeneous,
    normalize_flow,
    to_homogeneous,
    warp,
)
from .flowio import read_flo, read_png, write_flo, write_png
from .model import (
    PARAM_NAMES,
    DenoiserModel,
    LossConfig,
    PerceptualProxy,
    adapt_first_layer,
)
from .schedule import build_schedule, decode_v, forward_diffuse, v_target
from .ssd import affine_map, run_ssd
from ._kernels import conv2d_forward


def check_warp_identity():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, (3, 16, 17))
    if not np.array_equal(warp(img, np.zeros((2, 16, 17))), img):
        return False, "zero-flow warp is not the identity"
    flow = np.zeros((2, 16, 17))
    flow[0], flow[1] = 2.0, -1.0
    got = warp(img, flow, fill=1.0)
    want = np.full_like(img, 1.0)
    want[:, 1:, : 17 - 2] = img[:, : 16 - 1, 2:]
    if np.abs(got - want).max() > 1e-12:
        return False, "integer-shift warp disagrees with index oracle"
    return True, "zero-flow identity and integer-shift oracle"


def check_roundtrips():
    rng = np.random.default_rng(1)
    for _ in range(25):
        flow = rng.uniform(-5, 5, (2, 8, 8))
        gamma = float(rng.uniform(0.5, 100.0))
        back = denormalize_flow(normalize_flow(flow, gamma), gamma)
        if not np.allclose(back, flow, rtol=4e-16, atol=0):
            return False, "normalize/denormalize roundtrip not exact"
        f = normalize_flow(flow, gamma)
        if not np.array_equal(from_homogeneous(to_homogeneous(f)), f):
            return False, "homogeneous roundtrip not exact"
    return True, "normalization and homogeneous roundtrips exact"


def check_channel_adaptation():
    rng = np.random.default_rng(2)
    for n in (1, 2, 3):
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        x = rng.standard_normal((3, 6, 6))
        base = conv2d_forward(x, w, b, 1, 1)
        out = conv2d_forward(np.tile(x, (n + 1, 1, 1)),
                             adapt_first_layer(w, n), b, 1, 1)
        if np.abs(out - base).max() > 1e-6 * max(1.0, np.abs(base).max()):
            return False, f"adaptation broke output preservation at N={n}"
    return True, "first-layer adaptation preserves outputs for N in {1,2,3}"


def check_v_decode():
    sched = build_schedule(1000)
    rng = np.random.default_rng(3)
    for _ in range(100):
        t = int(rng.integers(1, 1001))
        z0 = rng.standard_normal((4, 3, 3))
        eps = rng.standard_normal((4, 3, 3))
        z_t = forward_diffuse(z0, t, eps, sched)
        rec = decode_v(z_t, v_target(z0, eps, t, sched), t, sched)
        if np.abs(rec - z0).max() >= 1e-6:
            return False, "decode_v failed to recover z0 from the true target"
    return True, "v-decode recovers the clean latent on 100 random triples"


def check_gradients():
    rec = gen_sir_sample(3, 8, 8, magnitude=1.5)
    rec.flow_pseudo = perturb_pseudo_flow(rec.flow_gt, 0.5, 3)
    sched = build_schedule(T=10)
    proxy = PerceptualProxy(seed=5)
    items = training.prepare_items([rec], 4.0, proxy)
    model = DenoiserModel.create(2, 12, 6, sched, seed=7)
    rng = np.random.default_rng(100)
    model.t_gain[:] = rng.normal(0, 0.2, model.t_gain.shape)
    model.t_mix[:] = rng.uniform(0.1, 0.6, model.t_mix.shape)
    cfg = LossConfig(1.0, 1.0, 0.01)
    t, eps = training.draw_noise(0, 0, 0, items[0].z0.shape, 10)
    _, _, grads = training.item_loss_and_grads(
        model, items[0], t, eps, sched, cfg, 4.0, proxy)
    h = 1e-4
    for name in PARAM_NAMES:
        flat = getattr(model, name).reshape(-1)
        for i in range(0, flat.size, max(1, flat.size // 20)):
            orig = flat[i]
            flat[i] = orig + h
            lp, _, _ = training.item_loss_and_grads(
                model, items[0], t, eps, sched, cfg, 4.0, proxy, need_grads=False)
            flat[i] = orig - h
            lm, _, _ = training.item_loss_and_grads(
                model, items[0], t, eps, sched, cfg, 4.0, proxy, need_grads=False)
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            an = grads[name].reshape(-1)[i]
            if abs(an - fd) > 1e-3 * max(abs(an), abs(fd)) + 1e-8:
                return False, f"gradient mismatch at {name}[{i}]: {an} vs {fd}"
    return True, "analytic gradients match finite differences (sampled weights)"


def check_ssd_linear():
    rng = np.random.default_rng(4)
    for T in (1, 2, 5, 16):
        A = rng.uniform(-0.6, 0.6, (2, 2))
        p = affine_map(A, rng.uniform(-0.2, 0.2, 2))
        deltas = [rng.standard_normal(2) for _ in range(T)]
        trace = run_ssd(p, rng.standard_normal(2), deltas)
        if np.abs(trace.empirical_error - trace.first_order).max() > 1e-10:
            return False, f"affine first-order sum mismatch at T={T}"
        if T == 1 and not np.all(trace.empirical_error == 0.0):
            return False, "one-step chain shows nonzero error"
    return True, "affine chains match the error sum exactly; T=1 error is zero"


def check_file_formats():
    rng = np.random.default_rng(5)
    with tempfile.TemporaryDirectory() as d:
        flow = rng.uniform(-8, 8, (2, 6, 7)).astype(np.float32).astype(np.float64)
        write_flo(f"{d}/t.flo", flow)
        if not np.array_equal(read_flo(f"{d}/t.flo"), flow):
            return False, ".flo roundtrip not bit-exact"
        tens = rng.standard_normal((3, 4)).astype(np.float32).astype(np.float64)
        latent.write_stmt(f"{d}/t.stmt", tens)
        if not np.array_equal(latent.read_stmt(f"{d}/t.stmt"), tens):
            return False, "STMT roundtrip not bit-exact"
        img = rng.uniform(0, 1, (3, 5, 5))
        write_png(f"{d}/t.png", img)
        if np.abs(read_png(f"{d}/t.png") - img).max() > 1.0 / 255.0 + 1e-12:
            return False, "PNG roundtrip outside quantization bound"
    return True, ".flo and STMT bit-exact; PNG within one quantization level"


def check_codec():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((3, 8, 10))
    if not np.array_equal(latent.decode(latent.encode(x)), x):
        return False, "latent codec roundtrip not bit-exact"
    return True, "latent codec roundtrip bit-exact"


def check_metric_sanity():
    rng = np.random.default_rng(7)
    img = rng.uniform(0, 1, (3, 16, 16))
    if metrics.ssim(img, img) != 1.0:
        return False, "ssim(x, x) != 1"
    got = metrics.psnr(np.zeros((1, 8, 8)), np.full((1, 8, 8), 0.1))
    if abs(got - 20.0) > 1e-9:
        return False, f"psnr for uniform 0.1 difference is {got}, want 20.0"
    f = np.zeros((2, 4, 4))
    g = f.copy()
    g[0] += 3.0
    g[1] += 4.0
    if metrics.flow_epe(g, f) != 5.0:
        return False, "flow_epe for constant (3,4) offset is not 5"
    return True, "metric sanity values match"


CHECKS = [
    ("warp-identity", check_warp_identity),
    ("roundtrips", check_roundtrips),
    ("channel-adaptation", check_channel_adaptation),
    ("v-decode", check_v_decode),
    ("gradient-check", check_gradients),
    ("ssd-linear-oracle", check_ssd_linear),
    ("file-formats", check_file_formats),
    ("latent-codec", check_codec),
    ("metric-sanity", check_metric_sanity),
]


def run_all(report=print):
    ok_all = True
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        ok_all &= ok
        report(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok_all

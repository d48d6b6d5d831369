"""Training loop: fused loss/gradient evaluation, SGD with momentum, checkpoints.

Determinism contract: noise and timestep draws come from counter-based
generators keyed by (seed, step, batch slot), batch selection by
(seed, step), so runs are bit-reproducible for a given seed and parallel
batch evaluation matches serial execution via fixed-order reduction.

Checkpoints are directories of STMT tensors (one per parameter, plus the
momentum state) with a meta.txt. The container stores float32, so saving
also rounds the live state to the stored values; a resumed run therefore
continues bit-identically to the run that wrote the checkpoint.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import latent
from .field import warp, warp_flow_gradient
from .model import BUFFER_NAMES, PARAM_NAMES, DenoiserModel, rms, rms_gradient
from .pipeline import condition_latents, flow_to_latent
from .schedule import forward_diffuse

CHECKPOINT_META = "meta.txt"


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class TrainConfig:
    steps: int = 200
    batch_size: int = 4
    lr: float = 1e-3
    momentum: float = 0.9
    gamma: float = 64.0
    seed: int = 0
    # timestep-embedding rows each see roughly 1/T of the updates; their
    # learning rate is scaled up to compensate
    lr_t_embed_scale: float = 10.0


@dataclass
class TrainItem:
    cond_latents: list
    z0: np.ndarray
    i_cond: np.ndarray
    i_gt: np.ndarray
    gt_feats: list


def prepare_items(records, gamma, proxy=None):
    """Precompute the per-record tensors the step loop reuses."""
    items = []
    for rec in records:
        items.append(TrainItem(
            cond_latents=condition_latents(rec),
            z0=flow_to_latent(rec.flow_pseudo, gamma),
            i_cond=rec.cond,
            i_gt=rec.gt,
            gt_feats=proxy.features(rec.gt) if proxy is not None else None,
        ))
    return items


def draw_noise(seed, step, slot, shape, T):
    """Counter-based (t, eps) draw for one batch slot of one step."""
    rng = np.random.default_rng([int(seed), 0, int(step), int(slot)])
    t = int(rng.integers(1, T + 1))
    eps = rng.standard_normal(shape)
    return t, eps


def item_loss_and_grads(model, item, t, eps, sched, cfg, gamma, proxy,
                        need_grads=True):
    """Loss parts and parameter gradients for one batch item.

    The pixel-space paths backpropagate through the latent decode, the
    homogeneous channel selection, denormalization, and the bilinear warp.
    """
    z_t = forward_diffuse(item.z0, t, eps, sched)
    z_in = latent.stack_input(item.cond_latents, z_t)
    if need_grads:
        v, cache = model.forward_cached(z_in, t)
    else:
        v = model.forward(z_in, t)
    sigma_t = sched.sigma[t]
    z0_hat = sched.alpha[t] * z_t - sigma_t * v

    l_diff = rms(item.z0 - z0_hat)

    fp_hat = latent.decode(z0_hat)
    flow_hat = gamma * fp_hat[:2]
    warped = warp(item.i_cond, flow_hat, fill=1.0)
    l_cond = rms(item.i_gt - warped)

    if proxy is not None:
        pred_feats, pred_inputs = proxy.features_cached(warped)
        gt_feats = item.gt_feats
        if gt_feats is None:
            gt_feats = proxy.features(item.i_gt)
        level_rms = [rms(g - p) for g, p in zip(gt_feats, pred_feats)]
        l_pct = float(sum(level_rms))
    else:
        l_pct = 0.0

    parts = (l_diff, l_cond, l_pct)
    total = cfg.w_diff * l_diff + cfg.w_cond * l_cond + cfg.w_pct * l_pct
    if not need_grads:
        return total, parts, None

    g_z0 = cfg.w_diff * rms_gradient(z0_hat - item.z0, l_diff)
    if cfg.w_cond > 0 or (cfg.w_pct > 0 and proxy is not None):
        g_warped = np.zeros_like(warped)
        if cfg.w_cond > 0:
            g_warped += cfg.w_cond * rms_gradient(warped - item.i_gt, l_cond)
        if cfg.w_pct > 0 and proxy is not None:
            g_feats = [cfg.w_pct * rms_gradient(p - g, r)
                       for g, p, r in zip(gt_feats, pred_feats, level_rms)]
            g_warped += proxy.input_gradient(pred_feats, pred_inputs, g_feats)
        g_flow = warp_flow_gradient(item.i_cond, flow_hat, g_warped, fill=1.0)
        g_fp = np.concatenate([gamma * g_flow,
                               np.zeros((1,) + g_flow.shape[1:])])
        g_z0 = g_z0 + latent.decode_gradient(g_fp)
    g_v = np.ascontiguousarray(-sigma_t * g_z0)
    grads = model.backward(cache, g_v)
    return total, parts, grads


def batch_eval(model, items, draws, sched, cfg, gamma, proxy,
               need_grads=True, threads=1):
    """Mean loss (and gradients) over a batch with fixed-order reduction."""

    def one(arg):
        idx, t, eps = arg
        return item_loss_and_grads(model, items[idx], t, eps, sched, cfg,
                                   gamma, proxy, need_grads=need_grads)

    if threads > 1 and len(draws) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, draws))
    else:
        results = [one(d) for d in draws]

    n = len(results)
    total = sum(r[0] for r in results) / n
    parts = tuple(sum(r[1][k] for r in results) / n for k in range(3))
    grads = None
    if need_grads:
        grads = {name: results[0][2][name].copy() for name in PARAM_NAMES}
        for r in results[1:]:
            for name in PARAM_NAMES:
                grads[name] += r[2][name]
        for name in PARAM_NAMES:
            grads[name] /= n
    return total, parts, grads


def zero_velocity(model):
    return {name: np.zeros_like(getattr(model, name)) for name in PARAM_NAMES}


def train(model, records, sched, loss_cfg, tcfg, proxy=None, threads=1,
          velocity=None, start_step=0, on_step=None):
    """SGD-with-momentum loop over precomputed items. Mutates model in place.

    Returns (history, velocity); history rows are dicts with the step index
    and the loss parts. Raises TrainingDiverged on a non-finite loss.
    """
    if not records:
        raise ValueError("training dataset is empty")
    use_proxy = proxy if loss_cfg.w_pct > 0 else None
    items = prepare_items(records, tcfg.gamma, use_proxy)
    if velocity is None:
        velocity = zero_velocity(model)
    params = model.params()
    history = []
    for k in range(tcfg.steps):
        step = start_step + k
        rng = np.random.default_rng([int(tcfg.seed), 1, step])
        idxs = rng.integers(0, len(items), size=tcfg.batch_size)
        draws = [
            (int(idx), *draw_noise(tcfg.seed, step, slot, items[idx].z0.shape, sched.T))
            for slot, idx in enumerate(idxs)
        ]
        total, parts, grads = batch_eval(model, items, draws, sched, loss_cfg,
                                         tcfg.gamma, use_proxy, threads=threads)
        if not np.isfinite(total):
            raise TrainingDiverged(
                f"non-finite loss at step {step}: total={total} parts={parts}")
        for name in PARAM_NAMES:
            lr = tcfg.lr
            if name.startswith("t_"):
                lr *= tcfg.lr_t_embed_scale
            velocity[name] = tcfg.momentum * velocity[name] - lr * grads[name]
            params[name] += velocity[name]
        row = {"step": step, "total": total, "diff": parts[0],
               "cond": parts[1], "pct": parts[2]}
        history.append(row)
        if on_step is not None:
            on_step(row, model, velocity)
    return history, velocity


def save_checkpoint(ckpt_dir, model, velocity, step, gamma, task, sync=True,
                    extra=None):
    """Write model + momentum state as STMT tensors plus meta.txt.

    With sync=True (default) the live arrays are rounded to the stored
    float32 values so training that continues in-process stays bit-identical
    to a run resumed from this checkpoint.
    """
    os.makedirs(ckpt_dir, exist_ok=True)
    for name in PARAM_NAMES:
        latent.write_stmt(os.path.join(ckpt_dir, f"{name}.stmt"), getattr(model, name))
        latent.write_stmt(os.path.join(ckpt_dir, f"vel_{name}.stmt"), velocity[name])
    for name in BUFFER_NAMES:
        latent.write_stmt(os.path.join(ckpt_dir, f"{name}.stmt"), getattr(model, name))
    with open(os.path.join(ckpt_dir, CHECKPOINT_META), "w") as fh:
        fh.write(f"n_cond = {model.n_cond}\n")
        fh.write(f"c_lat = {model.c_lat}\n")
        fh.write(f"hidden = {model.hidden}\n")
        fh.write(f"T = {model.T}\n")
        fh.write(f"step = {step}\n")
        fh.write(f"gamma = {gamma!r}\n")
        fh.write(f"task = {task}\n")
        for key, val in (extra or {}).items():
            fh.write(f"{key} = {val!r}\n")
    if sync:
        for name in PARAM_NAMES:
            arr = getattr(model, name)
            arr[...] = arr.astype("<f4").astype(np.float64)
            velocity[name][...] = velocity[name].astype("<f4").astype(np.float64)
        for name in BUFFER_NAMES:
            arr = getattr(model, name)
            arr[...] = arr.astype("<f4").astype(np.float64)


def load_checkpoint(ckpt_dir):
    """Read a checkpoint directory back into (model, velocity, step, meta)."""
    meta_path = os.path.join(ckpt_dir, CHECKPOINT_META)
    if not os.path.exists(meta_path):
        raise FileNotFoundError(f"no checkpoint meta at {meta_path}")
    meta = {}
    with open(meta_path) as fh:
        for line in fh:
            if "=" in line:
                key, val = line.split("=", 1)
                meta[key.strip()] = val.strip()
    model = DenoiserModel(
        n_cond=int(meta["n_cond"]), c_lat=int(meta["c_lat"]),
        hidden=int(meta["hidden"]), T=int(meta["T"]))
    velocity = {}
    for name in PARAM_NAMES:
        setattr(model, name, latent.read_stmt(os.path.join(ckpt_dir, f"{name}.stmt")))
        velocity[name] = latent.read_stmt(os.path.join(ckpt_dir, f"vel_{name}.stmt"))
    for name in BUFFER_NAMES:
        setattr(model, name, latent.read_stmt(os.path.join(ckpt_dir, f"{name}.stmt")))
    return model, velocity, int(meta["step"]), meta

"""Shared record-to-tensor plumbing for training, inference, and sweeps."""

import numpy as np

from . import latent
from .field import denormalize_flow, from_homogeneous, normalize_flow, to_homogeneous, warp
from .schedule import sample


def condition_images(record):
    """Pixel-space condition elements for a record, in stacking order."""
    if record.task == "sir":
        mask3 = np.repeat(record.mask, 3, axis=0)
        return [record.cond, mask3]
    if record.task == "rsc":
        return [record.cond]
    raise ValueError(f"unknown task {record.task!r}")


def n_conditions(task):
    return 2 if task == "sir" else 1


def condition_latents(record, s=latent.DEFAULT_FACTOR):
    return [latent.encode(c, s) for c in condition_images(record)]


def flow_to_latent(flow, gamma, s=latent.DEFAULT_FACTOR):
    """Pixel flow -> normalized -> homogeneous -> latent block."""
    return latent.encode(to_homogeneous(normalize_flow(flow, gamma)), s)


def latent_to_flow(z, gamma, s=latent.DEFAULT_FACTOR):
    """Inverse of flow_to_latent; the homogeneous third channel is discarded."""
    return denormalize_flow(from_homogeneous(latent.decode(z, s)), gamma)


def predict_flow(model, sched, record, steps, seed, gamma):
    """Run seeded sampling for one record and decode the flow estimate."""
    conds = condition_latents(record)
    z0_hat = sample(model, sched, conds, steps, seed)
    flow = latent_to_flow(z0_hat, gamma)
    # keep undertrained predictions inside the flow sanity range
    bound = 2.0 * max(flow.shape[1], flow.shape[2])
    return np.clip(flow, -bound, bound)


def rectify(record, flow):
    """Apply a predicted corrective flow to the condition image."""
    return warp(record.cond, flow)

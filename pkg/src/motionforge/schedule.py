"""DDPM forward process, v-prediction decoding, and DDIM sampling.

Index convention: timesteps run 1..T; index 0 is the clean state with
``alpha[0] = 1`` and ``sigma[0] = 0`` so a DDIM step to t_prev=0 returns the
decoded estimate unchanged. ``alpha`` here is the signal coefficient
sqrt(alpha_bar); the variance-preserving identity alpha^2 + sigma^2 = 1
holds at every index.
"""

from dataclasses import dataclass

import numpy as np

from .latent import stack_input

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class SchedulerParams:
    T: int
    beta: np.ndarray       # beta[0] = 0 placeholder, beta[1..T] the ramp
    alpha_bar: np.ndarray  # cumulative product of (1 - beta_t)
    alpha: np.ndarray      # sqrt(alpha_bar)
    sigma: np.ndarray      # sqrt(1 - alpha_bar)


def build_schedule(T=DEFAULT_T, beta_start=DEFAULT_BETA_START,
                   beta_end=DEFAULT_BETA_END):
    """Linear beta ramp over T steps with cumulative alpha products."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, "
                         f"got ({beta_start}, {beta_end})")
    ramp = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_start])
    beta = np.concatenate([[0.0], ramp])
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - ramp)])
    return SchedulerParams(
        T=int(T),
        beta=beta,
        alpha_bar=alpha_bar,
        alpha=np.sqrt(alpha_bar),
        sigma=np.sqrt(1.0 - alpha_bar),
    )


def _check_t(sched, t, low=1):
    t = int(t)
    if not low <= t <= sched.T:
        raise ValueError(f"timestep {t} outside [{low}, {sched.T}]")
    return t


def forward_diffuse(z0, t, eps, sched):
    """z_t = alpha_t * z0 + sigma_t * eps."""
    t = _check_t(sched, t)
    return sched.alpha[t] * z0 + sched.sigma[t] * eps


def v_target(z0, eps, t, sched):
    """v = alpha_t * eps - sigma_t * z0."""
    t = _check_t(sched, t)
    return sched.alpha[t] * eps - sched.sigma[t] * z0


def decode_v(z_t, v_hat, t, sched):
    """z0 estimate from a v prediction: alpha_t * z_t - sigma_t * v_hat."""
    t = _check_t(sched, t)
    return sched.alpha[t] * z_t - sched.sigma[t] * v_hat


def ddim_step(z_t, v_hat, t, t_prev, sched):
    """Deterministic DDIM update from t to t_prev (< t); t_prev=0 yields z0."""
    t = _check_t(sched, t)
    t_prev = _check_t(sched, t_prev, low=0)
    if t_prev >= t:
        raise ValueError(f"t_prev ({t_prev}) must be < t ({t})")
    z0 = decode_v(z_t, v_hat, t, sched)
    eps_hat = (z_t - sched.alpha[t] * z0) / sched.sigma[t]
    return sched.alpha[t_prev] * z0 + sched.sigma[t_prev] * eps_hat


def timestep_grid(T, steps):
    """Uniform-stride descending grid over [1, T], largest first."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    grid = []
    for k in range(steps):
        t = int(np.floor(T - k * T / steps + 0.5))
        t = max(t, 1)
        if not grid or t < grid[-1]:
            grid.append(t)
    return grid


def sample(model, sched, conds, steps, seed):
    """Seeded DDIM sampling of a flow latent given condition latents.

    steps=1 is the one-step path: a single v evaluation at t=T decoded
    straight to z0. Larger step counts run the uniform-stride DDIM chain.
    Deterministic for fixed (model weights, conds, steps, seed).
    """
    rng = np.random.default_rng(seed)
    spatial = conds[0].shape[1:]
    z = rng.standard_normal((model.c_lat,) + spatial)
    grid = timestep_grid(sched.T, steps)
    for i, t in enumerate(grid):
        t_prev = grid[i + 1] if i + 1 < len(grid) else 0
        v_hat = model.forward(stack_input(conds, z), t)
        z = ddim_step(z, v_hat, t, t_prev, sched)
    return z

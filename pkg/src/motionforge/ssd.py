"""Numerical verification of multi-step sampling error accumulation.

A sampling chain applies the composite map p (denoise to the clean state,
then re-noise one level down) T times. When the model was trained against
inputs from a different distribution than the chain actually visits, each
step's input is off by some Delta_t; the first-order effect on the final
output is

    error = Delta_0 + J(x_1) Delta_1 + J(x_1) J(x_2) Delta_2 + ...

(column-vector convention). The one-step chain (T=1) admits no input
correction and its output is the final answer, so the error is exactly zero;
Delta_0 is only applied (and counted) when T > 1.

The toy chains here use explicit low-dimensional maps with analytic
Jacobians; the full-model sweep reuses the diffusion pipeline unchanged.
"""

from dataclasses import dataclass

import numpy as np

from .field import warp
from .metrics import flow_epe, psnr, ssim
from .pipeline import predict_flow


@dataclass
class ToyMap:
    """A map R^d -> R^d with an analytic Jacobian."""
    fn: callable
    jac: callable

    def __call__(self, x):
        return self.fn(x)

    def jacobian(self, x):
        return self.jac(x)


def affine_map(A, b):
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return ToyMap(fn=lambda x: A @ x + b, jac=lambda x: A)


def tanh_map(A, b, W, scale=1.0):
    """x -> A x + scale * tanh(W x) + b, a smooth nonlinear chain element."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)

    def fn(x):
        return A @ x + scale * np.tanh(W @ x) + b

    def jac(x):
        s = 1.0 - np.tanh(W @ x) ** 2
        return A + scale * (s[:, None] * W)

    return ToyMap(fn=fn, jac=jac)


def p_map(theta, scheduler_step, x_t):
    """Composite chain element: denoise with theta, then re-noise one level."""
    return scheduler_step(theta(x_t))


def run_uncorrected(p, x_start, T):
    """T-fold composition of p; returns (pred_1, visited states)."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    states = [np.asarray(x_start, dtype=np.float64)]
    x = states[0]
    for _ in range(T):
        x = np.asarray(p(x), dtype=np.float64)
        states.append(x)
    return x, states


def run_corrected(p, x_start, deltas, T):
    """Chain with input corrections Delta_{T-1}..Delta_1 and Delta_0 at the end.

    deltas[i] is Delta_i (timestep indexing); exactly T entries are required.
    For T=1 the single-step output is returned unchanged and Delta_0 ignored.
    Returns (pred_2, inputs) where inputs[j] was fed to the application at
    timestep T-j (inputs[0] = x_start).
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if len(deltas) != T:
        raise ValueError(f"need {T} deltas (Delta_0..Delta_{T - 1}), got {len(deltas)}")
    x = np.asarray(x_start, dtype=np.float64)
    inputs = [x]
    for t in range(T, 0, -1):
        x = np.asarray(p(x), dtype=np.float64)
        if t > 1:
            x = x + deltas[t - 1]
            inputs.append(x)
    if T > 1:
        x = x + deltas[0]
    return x, inputs


def first_order_error(deltas, jacobians):
    """Evaluate the accumulated first-order error sum.

    jacobians[j] is the Jacobian of p at the input of the application at
    timestep j+1 (so jacobians has T-1 entries). Returns the zero vector for
    T=1, matching the exactness of one-step inference.
    """
    T = len(deltas)
    d0 = np.asarray(deltas[0], dtype=np.float64)
    if T == 1:
        return np.zeros_like(d0)
    if len(jacobians) != T - 1:
        raise ValueError(f"need {T - 1} Jacobians, got {len(jacobians)}")
    err = d0.copy()
    prefix = np.eye(d0.shape[0])
    for i in range(1, T):
        prefix = prefix @ np.asarray(jacobians[i - 1], dtype=np.float64)
        err += prefix @ np.asarray(deltas[i], dtype=np.float64)
    return err


@dataclass
class SSDTrace:
    T: int
    deltas: list
    states_uncorrected: list
    inputs_corrected: list
    jacobians: list
    pred_1: np.ndarray
    pred_2: np.ndarray
    empirical_error: np.ndarray
    first_order: np.ndarray


def run_ssd(p, x_start, deltas, jacobian_fn=None):
    """Run both chains and evaluate the first-order error sum.

    Jacobians are taken at the corrected chain's inputs x_1..x_{T-1} (the
    points the expansion is anchored to). jacobian_fn defaults to
    p.jacobian for ToyMap-style objects.
    """
    T = len(deltas)
    if jacobian_fn is None:
        jacobian_fn = p.jacobian
    pred_1, states = run_uncorrected(p, x_start, T)
    pred_2, inputs = run_corrected(p, x_start, deltas, T)
    # inputs[k] is fed at timestep T-k; x_j for j=1..T-1 is inputs[T-j]
    jacobians = [np.asarray(jacobian_fn(inputs[T - j]), dtype=np.float64)
                 for j in range(1, T)]
    return SSDTrace(
        T=T, deltas=list(deltas), states_uncorrected=states,
        inputs_corrected=inputs, jacobians=jacobians,
        pred_1=pred_1, pred_2=pred_2,
        empirical_error=pred_2 - pred_1,
        first_order=first_order_error(deltas, jacobians),
    )


def residual_scaling_test(p, x_start, deltas_base, eps_list, jacobian_fn=None):
    """Slope of log ||empirical - first_order|| against log eps.

    For a smooth nonlinear p the residual is the Taylor remainder, so the
    fitted slope approaches 2; an exactly affine p leaves all residuals at
    rounding level and the slope is reported as inf.
    """
    eps_arr = [float(e) for e in eps_list]
    if any(e <= 0 for e in eps_arr) or any(
            a <= b for a, b in zip(eps_arr, eps_arr[1:])):
        raise ValueError("eps values must be positive and strictly decreasing")
    residuals = []
    for e in eps_arr:
        trace = run_ssd(p, x_start, [e * np.asarray(d) for d in deltas_base],
                        jacobian_fn)
        residuals.append(float(np.linalg.norm(
            trace.empirical_error - trace.first_order)))
    positive = [(e, r) for e, r in zip(eps_arr, residuals) if r > 1e-14]
    if len(positive) < 2:
        return float("inf"), residuals
    xs = np.log([e for e, _ in positive])
    ys = np.log([r for _, r in positive])
    slope = float(np.polyfit(xs, ys, 1)[0])
    return slope, residuals


def steps_sweep(model, sched, records, steps_list, seed, gamma):
    """Evaluate sampling quality at each step count over a record set.

    Returns one row per step count:
    {"steps", "psnr_db", "ssim", "flow_epe", "n_samples"}.
    """
    rows = []
    for steps in steps_list:
        psnrs, ssims, epes = [], [], []
        for idx, rec in enumerate(records):
            flow = predict_flow(model, sched, rec, steps, [int(seed), idx], gamma)
            pred = warp(rec.cond, flow)
            psnrs.append(psnr(pred, rec.gt))
            ssims.append(ssim(pred, rec.gt))
            epes.append(flow_epe(flow, rec.flow_gt))
        rows.append({
            "steps": int(steps),
            "psnr_db": float(np.mean(psnrs)),
            "ssim": float(np.mean(ssims)),
            "flow_epe": float(np.mean(epes)),
            "n_samples": len(records),
        })
    return rows

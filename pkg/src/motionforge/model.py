"""Trainable convolutional v-predictor with hand-derived gradients.

Fixed topology (five weight layers):

  conv1  3x3, (N+1)*c_lat -> hidden, then per-timestep gain and bias, ReLU
  conv2  3x3 stride 2, hidden -> hidden, ReLU        (down)
  conv3  3x3, hidden -> hidden, ReLU
         nearest-neighbor 2x upsample (parameter-free)
  conv4  3x3, hidden -> hidden, ReLU
  conv5  1x1, hidden -> c_lat, linear                (pointwise output)

The timestep embedding is multiplicative and additive per hidden channel:
h = conv1(x) * (1 + t_gain[t]) + t_bias[t].

The conv stack regresses the clean flow latent directly; together with a
learned per-timestep measurement coupling, the clean estimate is

    z0_est = net + t_mix[t] * alpha_t * (z_t - alpha_t * net)

(the innovation form of a scalar Wiener update; the alpha_t factor keeps the
correction bounded when z_t is mostly noise).

and the v prediction returned by forward() is assembled as

    v = (alpha_t / sigma_t) * z_t - (1 / sigma_t) * z0_est

which is algebraically the v whose decode (Eq.-10 style
z0 = alpha_t * z_t - sigma_t * v) returns z0_est exactly. A network
that had to emit raw v values would need timestep-dependent gain on its
noisy input channels; without it, most of the initial noise provably leaks
into multi-step sampling chains regardless of training, drowning the
distribution-shift effect the sampling-step experiments measure. The model
therefore carries the schedule's alpha/sigma tables as untrained buffers.

conv1 is produced from a base single-block layer by the channel adaptation
rule: the input-channel block is replicated to cover all N+1 latent groups
and every weight is scaled by 1/(N+1), so feeding the same latent into all
groups reproduces the base layer's output.

The backward pass is written out layer by layer against the same kernels as
the forward pass; it is validated against central finite differences in the
test suite.

All losses use the root-mean-square reduction of the elementwise difference
so values are resolution-independent.
"""

from dataclasses import dataclass, field, fields

import numpy as np

from . import _kernels
from .field import warp, warp_flow_gradient

PARAM_NAMES = (
    "conv1_w", "conv1_b", "t_gain", "t_bias", "t_mix",
    "conv2_w", "conv2_b",
    "conv3_w", "conv3_b",
    "conv4_w", "conv4_b",
    "conv5_w", "conv5_b",
)


def adapt_first_layer(weights, n_cond):
    """Replicate a single-block first layer across N+1 input groups.

    weights has shape [out, c_lat, kh, kw]; the result has shape
    [out, (N+1)*c_lat, kh, kw] with every weight scaled by 1/(N+1).
    """
    if n_cond < 1:
        raise ValueError(f"condition count must be >= 1, got {n_cond}")
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 4:
        raise ValueError(f"layer weights must be 4-D, got shape {w.shape}")
    return np.tile(w, (1, n_cond + 1, 1, 1)) / (n_cond + 1)


def relu(x):
    return np.maximum(x, 0.0)


def nn_upsample(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def nn_upsample_backward(g):
    c, h, w = g.shape
    return g.reshape(c, h // 2, 2, w // 2, 2).sum(axis=(2, 4))


BUFFER_NAMES = ("alpha_t", "sigma_t")


@dataclass
class DenoiserModel:
    n_cond: int
    c_lat: int
    hidden: int
    T: int
    alpha_t: np.ndarray = field(repr=False, default=None)
    sigma_t: np.ndarray = field(repr=False, default=None)
    conv1_w: np.ndarray = field(repr=False, default=None)
    conv1_b: np.ndarray = field(repr=False, default=None)
    t_gain: np.ndarray = field(repr=False, default=None)
    t_bias: np.ndarray = field(repr=False, default=None)
    t_mix: np.ndarray = field(repr=False, default=None)
    conv2_w: np.ndarray = field(repr=False, default=None)
    conv2_b: np.ndarray = field(repr=False, default=None)
    conv3_w: np.ndarray = field(repr=False, default=None)
    conv3_b: np.ndarray = field(repr=False, default=None)
    conv4_w: np.ndarray = field(repr=False, default=None)
    conv4_b: np.ndarray = field(repr=False, default=None)
    conv5_w: np.ndarray = field(repr=False, default=None)
    conv5_b: np.ndarray = field(repr=False, default=None)

    @classmethod
    def create(cls, n_cond, c_lat, hidden, sched, seed=0):
        if n_cond < 1:
            raise ValueError(f"condition count must be >= 1, got {n_cond}")
        rng = np.random.default_rng(seed)
        T = sched.T

        def he(shape, fan_in):
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

        base = he((hidden, c_lat, 3, 3), c_lat * 9)
        m = cls(n_cond=n_cond, c_lat=c_lat, hidden=hidden, T=int(T),
                alpha_t=sched.alpha.copy(), sigma_t=sched.sigma.copy())
        m.conv1_w = adapt_first_layer(base, n_cond)
        m.conv1_b = np.zeros(hidden)
        m.t_gain = np.zeros((int(T), hidden))
        m.t_bias = np.zeros((int(T), hidden))
        m.t_mix = np.zeros(int(T))
        # small positive bias keeps dead-patch preactivations off the exact
        # ReLU kink, where the one-sided derivative and finite differences
        # would disagree
        m.conv2_w = he((hidden, hidden, 3, 3), hidden * 9)
        m.conv2_b = np.full(hidden, 0.02)
        m.conv3_w = he((hidden, hidden, 3, 3), hidden * 9)
        m.conv3_b = np.full(hidden, 0.02)
        m.conv4_w = he((hidden, hidden, 3, 3), hidden * 9)
        m.conv4_b = np.full(hidden, 0.02)
        m.conv5_w = rng.normal(0.0, np.sqrt(1.0 / hidden), size=(c_lat, hidden, 1, 1))
        m.conv5_b = np.zeros(c_lat)
        return m

    @property
    def c_in(self):
        return (self.n_cond + 1) * self.c_lat

    def params(self):
        """Live parameter arrays keyed by name (mutating them mutates the model)."""
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self):
        out = DenoiserModel(self.n_cond, self.c_lat, self.hidden, self.T)
        for name in PARAM_NAMES + BUFFER_NAMES:
            setattr(out, name, getattr(self, name).copy())
        return out

    def _check_input(self, z_in, t):
        if z_in.ndim != 3 or z_in.shape[0] != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {z_in.shape}")
        if z_in.shape[1] % 2 or z_in.shape[2] % 2:
            raise ValueError(f"latent spatial dims must be even, got {z_in.shape[1:]}")
        t = int(t)
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")
        return t

    def forward_cached(self, z_in, t):
        """Forward pass keeping the activations needed by backward()."""
        t = self._check_input(z_in, t)
        a0 = np.ascontiguousarray(z_in, dtype=np.float64)
        y1 = _kernels.conv2d_forward(a0, self.conv1_w, self.conv1_b, 1, 1)
        z1 = (y1 * (1.0 + self.t_gain[t - 1][:, None, None])
              + self.t_bias[t - 1][:, None, None])
        a1 = relu(z1)
        z2 = _kernels.conv2d_forward(a1, self.conv2_w, self.conv2_b, 2, 1)
        a2 = relu(z2)
        z3 = _kernels.conv2d_forward(a2, self.conv3_w, self.conv3_b, 1, 1)
        a3 = relu(z3)
        u3 = np.ascontiguousarray(nn_upsample(a3))
        z4 = _kernels.conv2d_forward(u3, self.conv4_w, self.conv4_b, 1, 1)
        a4 = relu(z4)
        net = _kernels.conv2d_forward(a4, self.conv5_w, self.conv5_b, 1, 0)
        z_t_block = a0[-self.c_lat:]
        a, s = self.alpha_t[t], self.sigma_t[t]
        mix = self.t_mix[t - 1]
        resid = a * (z_t_block - a * net)
        z0_est = net + mix * resid
        v = (a / s) * z_t_block - (1.0 / s) * z0_est
        cache = {"t": t, "a0": a0, "y1": y1, "z1": z1, "a1": a1, "z2": z2,
                 "a2": a2, "z3": z3, "a3": a3, "u3": u3, "z4": z4, "a4": a4,
                 "resid": resid}
        return v, cache

    def forward(self, z_in, t):
        return self.forward_cached(z_in, t)[0]

    def backward(self, cache, g_v):
        """Gradients of every parameter given d(loss)/d(v)."""
        t = cache["t"]
        mix = self.t_mix[t - 1]
        a = self.alpha_t[t]
        g_z0_est = -(1.0 / self.sigma_t[t]) * g_v
        g_tmix = np.zeros_like(self.t_mix)
        g_tmix[t - 1] = float(np.sum(g_z0_est * cache["resid"]))
        g_net = np.ascontiguousarray((1.0 - mix * a * a) * g_z0_est)
        g_a4, gw5, gb5 = _kernels.conv2d_backward(
            cache["a4"], self.conv5_w, g_net, 1, 0)
        g_z4 = np.ascontiguousarray(g_a4 * (cache["z4"] > 0))
        g_u3, gw4, gb4 = _kernels.conv2d_backward(cache["u3"], self.conv4_w, g_z4, 1, 1)
        g_a3 = nn_upsample_backward(g_u3)
        g_z3 = np.ascontiguousarray(g_a3 * (cache["z3"] > 0))
        g_a2, gw3, gb3 = _kernels.conv2d_backward(cache["a2"], self.conv3_w, g_z3, 1, 1)
        g_z2 = np.ascontiguousarray(g_a2 * (cache["z2"] > 0))
        g_a1, gw2, gb2 = _kernels.conv2d_backward(cache["a1"], self.conv2_w, g_z2, 2, 1)
        g_z1 = g_a1 * (cache["z1"] > 0)
        t_idx = cache["t"] - 1
        g_tbias = np.zeros_like(self.t_bias)
        g_tbias[t_idx] = g_z1.sum(axis=(1, 2))
        g_tgain = np.zeros_like(self.t_gain)
        g_tgain[t_idx] = (g_z1 * cache["y1"]).sum(axis=(1, 2))
        g_y1 = np.ascontiguousarray(
            g_z1 * (1.0 + self.t_gain[t_idx][:, None, None]))
        _, gw1, gb1 = _kernels.conv2d_backward(
            cache["a0"], self.conv1_w, g_y1, 1, 1, need_gx=False)
        return {
            "conv1_w": gw1, "conv1_b": gb1, "t_gain": g_tgain,
            "t_bias": g_tbias, "t_mix": g_tmix,
            "conv2_w": gw2, "conv2_b": gb2,
            "conv3_w": gw3, "conv3_b": gb3,
            "conv4_w": gw4, "conv4_b": gb4,
            "conv5_w": gw5, "conv5_b": gb5,
        }


@dataclass(frozen=True)
class LossConfig:
    w_diff: float = 1.0
    w_cond: float = 1.0
    w_pct: float = 0.01

    def __post_init__(self):
        ws = (self.w_diff, self.w_cond, self.w_pct)
        if any(w < 0 for w in ws):
            raise ValueError(f"loss weights must be nonnegative, got {ws}")
        if not any(w > 0 for w in ws):
            raise ValueError("at least one loss weight must be positive")


def rms(x):
    """Root-mean-square over all elements (the L2 reduction used by all losses)."""
    return float(np.sqrt(np.mean(np.square(x))))


def rms_gradient(diff, value):
    """d rms(diff) / d diff; zero at the non-differentiable origin."""
    if value == 0.0:
        return np.zeros_like(diff)
    return diff / (diff.size * value)


def loss_diff(z0_hat, z0_ref):
    """Latent reconstruction distance between the estimate and the target."""
    z0_hat = np.asarray(z0_hat, dtype=np.float64)
    z0_ref = np.asarray(z0_ref, dtype=np.float64)
    if z0_hat.shape != z0_ref.shape:
        raise ValueError(f"shape mismatch {z0_hat.shape} vs {z0_ref.shape}")
    return rms(z0_ref - z0_hat)


def loss_cond(c_gt, c, flow):
    """Pixel-space alignment loss: distance from c_gt to c warped by flow."""
    c_gt = np.asarray(c_gt, dtype=np.float64)
    if c_gt.shape != np.shape(c):
        raise ValueError(f"shape mismatch {c_gt.shape} vs {np.shape(c)}")
    return rms(c_gt - warp(c, flow))


class PerceptualProxy:
    """Frozen random strided-conv feature pyramid standing in for a deep net.

    Three 3x3 stride-2 conv levels with tanh, weights drawn once from the
    seed and never updated. Identical seeds give identical features.
    """

    CHANNELS = (8, 16, 32)

    def __init__(self, seed=0, in_channels=3):
        rng = np.random.default_rng(seed)
        chans = (in_channels,) + self.CHANNELS
        self.weights = []
        for ci, co in zip(chans[:-1], chans[1:]):
            self.weights.append(rng.normal(0.0, np.sqrt(1.0 / (ci * 9)),
                                           size=(co, ci, 3, 3)))
        self.biases = [np.zeros(co) for co in self.CHANNELS]

    def features_cached(self, x):
        acts = []
        a = np.ascontiguousarray(x, dtype=np.float64)
        inputs = []
        for w, b in zip(self.weights, self.biases):
            inputs.append(a)
            z = _kernels.conv2d_forward(a, w, b, 2, 1)
            a = np.tanh(z)
            acts.append(a)
        return acts, inputs

    def features(self, x):
        return self.features_cached(x)[0]

    def input_gradient(self, acts, inputs, g_feats):
        """Backprop per-level feature gradients down to the proxy input."""
        g = None
        for lvl in reversed(range(len(self.weights))):
            ga = g_feats[lvl] if g is None else g_feats[lvl] + g
            gz = np.ascontiguousarray(ga * (1.0 - acts[lvl] ** 2))
            g, _, _ = _kernels.conv2d_backward(inputs[lvl], self.weights[lvl], gz, 2, 1)
        return g


def loss_pct(i_gt, i_cond, flow, proxy):
    """Feature-space distance between i_gt and warped i_cond, summed over levels."""
    f_gt = proxy.features(np.asarray(i_gt, dtype=np.float64))
    f_pred = proxy.features(warp(i_cond, flow))
    return float(sum(rms(a - b) for a, b in zip(f_gt, f_pred)))


def total_loss(parts, cfg):
    """Weighted sum of (l_diff, l_cond, l_pct)."""
    l_diff, l_cond, l_pct = parts
    return cfg.w_diff * l_diff + cfg.w_cond * l_cond + cfg.w_pct * l_pct

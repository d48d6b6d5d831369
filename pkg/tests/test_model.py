import numpy as np
import pytest

from motionforge._kernels import conv2d_forward
from motionforge.model import (
    DenoiserModel,
    LossConfig,
    PerceptualProxy,
    adapt_first_layer,
    loss_cond,
    loss_diff,
    loss_pct,
    nn_upsample,
    relu,
    total_loss,
)
from motionforge.schedule import build_schedule


def naive_conv2d(x, w, b, stride, pad):
    """Loop-based convolution reference, independent of the kernel backends."""
    ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((co, ho, wo))
    for oc in range(co):
        for oy in range(ho):
            for ox in range(wo):
                acc = b[oc]
                for ic in range(ci):
                    for i in range(kh):
                        for j in range(kw):
                            iy = oy * stride + i - pad
                            ix = ox * stride + j - pad
                            if 0 <= iy < h and 0 <= ix < wd:
                                acc += w[oc, ic, i, j] * x[ic, iy, ix]
                out[oc, oy, ox] = acc
    return out


def reference_forward(m, z_in, t):
    """Independent re-implementation of the full denoiser forward pass."""
    y1 = naive_conv2d(z_in, m.conv1_w, m.conv1_b, 1, 1)
    z1 = y1 * (1.0 + m.t_gain[t - 1][:, None, None]) + m.t_bias[t - 1][:, None, None]
    a1 = np.maximum(z1, 0)
    a2 = np.maximum(naive_conv2d(a1, m.conv2_w, m.conv2_b, 2, 1), 0)
    a3 = np.maximum(naive_conv2d(a2, m.conv3_w, m.conv3_b, 1, 1), 0)
    u3 = np.repeat(np.repeat(a3, 2, axis=1), 2, axis=2)
    a4 = np.maximum(naive_conv2d(u3, m.conv4_w, m.conv4_b, 1, 1), 0)
    net = naive_conv2d(a4, m.conv5_w, m.conv5_b, 1, 0)
    z_t_block = z_in[-m.c_lat:]
    a, s = m.alpha_t[t], m.sigma_t[t]
    z0_est = net + m.t_mix[t - 1] * a * (z_t_block - a * net)
    return (a / s) * z_t_block - (1.0 / s) * z0_est


class TestAdaptFirstLayer:
    @pytest.mark.parametrize("n_cond", [1, 2, 3])
    def test_replicated_groups_reproduce_output(self, n_cond):
        rng = np.random.default_rng(n_cond)
        w = rng.standard_normal((5, 4, 3, 3))
        b = rng.standard_normal(5)
        x = rng.standard_normal((4, 6, 6))
        base = conv2d_forward(x, w, b, 1, 1)
        adapted = adapt_first_layer(w, n_cond)
        assert adapted.shape == (5, (n_cond + 1) * 4, 3, 3)
        x_rep = np.tile(x, (n_cond + 1, 1, 1))
        out = conv2d_forward(x_rep, adapted, b, 1, 1)
        rel = np.abs(out - base).max() / max(np.abs(base).max(), 1e-12)
        assert rel < 1e-6

    def test_scaling_factor(self):
        w = np.ones((2, 3, 3, 3))
        adapted = adapt_first_layer(w, 2)
        assert np.allclose(adapted, 1.0 / 3.0)

    def test_zero_weights(self):
        assert np.all(adapt_first_layer(np.zeros((2, 3, 3, 3)), 1) == 0.0)

    def test_invalid_count(self):
        with pytest.raises(ValueError):
            adapt_first_layer(np.zeros((2, 3, 3, 3)), 0)


class TestForward:
    @pytest.fixture()
    def model(self):
        sched = build_schedule(12)
        return DenoiserModel.create(n_cond=2, c_lat=12, hidden=5,
                                    sched=sched, seed=3)

    def test_zero_weights_decode_to_last_bias(self, model):
        # with all conv weights zero the conv stack output is the final bias,
        # so the decoded clean estimate equals that bias everywhere
        for name in ("conv1_w", "conv2_w", "conv3_w", "conv4_w", "conv5_w"):
            getattr(model, name)[...] = 0.0
        model.conv5_b[...] = np.arange(12) * 0.1
        rng = np.random.default_rng(0)
        z_in = rng.standard_normal((36, 4, 4))
        t = 7
        v = model.forward(z_in, t)
        z0_est = model.alpha_t[t] * z_in[-12:] - model.sigma_t[t] * v
        assert np.allclose(z0_est, model.conv5_b[:, None, None], atol=1e-12)

    def test_bit_identical_across_calls(self, model):
        rng = np.random.default_rng(1)
        z_in = rng.standard_normal((36, 4, 4))
        assert np.array_equal(model.forward(z_in, 5), model.forward(z_in, 5))

    def test_matches_independent_reimplementation(self, model):
        rng = np.random.default_rng(2)
        model.t_gain[:] = rng.normal(0, 0.3, model.t_gain.shape)
        model.t_bias[:] = rng.normal(0, 0.1, model.t_bias.shape)
        model.t_mix[:] = rng.uniform(0, 0.8, model.t_mix.shape)
        z_in = rng.standard_normal((36, 8, 8))
        for t in (1, 6, 12):
            got = model.forward(z_in, t)
            want = reference_forward(model, z_in, t)
            assert np.abs(got - want).max() < 1e-6

    def test_channel_mismatch(self, model):
        with pytest.raises(ValueError):
            model.forward(np.zeros((24, 4, 4)), 3)

    def test_odd_spatial_rejected(self, model):
        with pytest.raises(ValueError):
            model.forward(np.zeros((36, 5, 5)), 3)

    def test_t_out_of_range(self, model):
        with pytest.raises(ValueError):
            model.forward(np.zeros((36, 4, 4)), 0)
        with pytest.raises(ValueError):
            model.forward(np.zeros((36, 4, 4)), 13)


class TestLosses:
    def test_loss_diff_equal_inputs(self):
        z = np.random.default_rng(0).standard_normal((3, 4, 4))
        assert loss_diff(z, z) == 0.0

    def test_loss_diff_constant_offset(self):
        z = np.zeros((2, 5, 5))
        assert loss_diff(z + 0.25, z) == pytest.approx(0.25, abs=1e-15)

    def test_loss_diff_matches_direct_formula(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((4, 6, 6))
        b = rng.standard_normal((4, 6, 6))
        want = np.sqrt(np.mean((a - b) ** 2))
        assert loss_diff(b, a) == pytest.approx(want, rel=1e-14)

    def test_loss_cond_zero_flow_identical(self):
        img = np.random.default_rng(2).uniform(0, 1, (3, 8, 8))
        assert loss_cond(img, img, np.zeros((2, 8, 8))) == 0.0

    def test_loss_cond_zero_flow_shifted_pair(self):
        rng = np.random.default_rng(3)
        c_gt = rng.uniform(0, 1, (3, 8, 8))
        c = rng.uniform(0, 1, (3, 8, 8))
        want = np.sqrt(np.mean((c_gt - c) ** 2))
        assert loss_cond(c_gt, c, np.zeros((2, 8, 8))) == pytest.approx(want, rel=1e-14)

    def test_loss_pct_identical_zero(self):
        img = np.random.default_rng(4).uniform(0, 1, (3, 16, 16))
        proxy = PerceptualProxy(seed=0)
        assert loss_pct(img, img, np.zeros((2, 16, 16)), proxy) == 0.0

    def test_loss_pct_matches_recomputation(self):
        rng = np.random.default_rng(5)
        i_gt = rng.uniform(0, 1, (3, 16, 16))
        i_cond = rng.uniform(0, 1, (3, 16, 16))
        flow = rng.uniform(-1, 1, (2, 16, 16))
        proxy = PerceptualProxy(seed=0)
        from motionforge.field import warp

        warped = warp(i_cond, flow)
        want = sum(np.sqrt(np.mean((a - b) ** 2))
                   for a, b in zip(proxy.features(i_gt), proxy.features(warped)))
        got = loss_pct(i_gt, i_cond, flow, proxy)
        assert got == pytest.approx(want, rel=1e-12)

    def test_total_loss_weighting(self):
        assert total_loss((0.5, 0.25, 2.0), LossConfig(1.0, 1.0, 0.01)) == \
            pytest.approx(0.5 + 0.25 + 0.02)
        assert total_loss((0.5, 9.0, 9.0), LossConfig(1.0, 0.0, 0.0)) == 0.5
        assert total_loss((0.0, 0.0, 0.0), LossConfig(1.0, 1.0, 0.01)) == 0.0

    def test_loss_config_validation(self):
        with pytest.raises(ValueError):
            LossConfig(-1.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            LossConfig(0.0, 0.0, 0.0)


class TestPerceptualProxy:
    def test_same_seed_identical_features(self):
        img = np.random.default_rng(0).uniform(0, 1, (3, 16, 16))
        f1 = PerceptualProxy(seed=11).features(img)
        f2 = PerceptualProxy(seed=11).features(img)
        for a, b in zip(f1, f2):
            assert np.array_equal(a, b)

    def test_pyramid_shapes(self):
        img = np.zeros((3, 32, 32))
        feats = PerceptualProxy(seed=0).features(img)
        assert [f.shape for f in feats] == [(8, 16, 16), (16, 8, 8), (32, 4, 4)]


def test_upsample_helpers():
    x = np.arange(4.0).reshape(1, 2, 2)
    up = nn_upsample(x)
    assert up.shape == (1, 4, 4)
    assert np.all(up[0, :2, :2] == x[0, 0, 0])
    assert np.all(relu(np.array([-1.0, 2.0])) == [0.0, 2.0])

"""Backend parity: the compiled kernels must match the numpy fallback."""

import numpy as np
import pytest

from motionforge._kernels import numpy_backend

native_backend = pytest.importorskip(
    "motionforge._kernels._native",
    reason="compiled kernel extension not built")


@pytest.fixture(scope="module")
def rng():
    return np.random.default_rng(0)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv_forward_parity(rng, stride, pad):
    x = rng.standard_normal((5, 12, 14))
    w = rng.standard_normal((7, 5, 3, 3))
    b = rng.standard_normal(7)
    a = numpy_backend.conv2d_forward(x, w, b, stride, pad)
    c = native_backend.conv2d_forward(x, w, b, stride, pad)
    assert a.shape == c.shape
    assert np.abs(a - c).max() < 1e-12


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv_backward_parity(rng, stride, pad):
    x = rng.standard_normal((5, 12, 14))
    w = rng.standard_normal((7, 5, 3, 3))
    y = numpy_backend.conv2d_forward(x, w, np.zeros(7), stride, pad)
    gy = rng.standard_normal(y.shape)
    ga = numpy_backend.conv2d_backward(x, w, gy, stride, pad)
    gc = native_backend.conv2d_backward(x, w, gy, stride, pad)
    for a, c in zip(ga, gc):
        assert np.abs(a - c).max() < 1e-12


def test_conv_channel_mismatch_raises():
    x = np.zeros((4, 8, 8))
    w = np.zeros((2, 5, 3, 3))
    with pytest.raises(ValueError):
        numpy_backend.conv2d_forward(x, w, np.zeros(2), 1, 1)
    with pytest.raises(ValueError):
        native_backend.conv2d_forward(x, w, np.zeros(2), 1, 1)


def test_warp_parity_bit_exact(rng):
    img = rng.uniform(0, 1, (3, 20, 21))
    u = rng.uniform(-4, 4, (20, 21))
    v = rng.uniform(-4, 4, (20, 21))
    a = numpy_backend.warp_bilinear(img, u, v, 1.0)
    c = native_backend.warp_bilinear(img, u, v, 1.0)
    assert np.array_equal(a, c)


def test_warp_grad_parity_bit_exact(rng):
    img = rng.uniform(0, 1, (3, 20, 21))
    u = rng.uniform(-4, 4, (20, 21))
    v = rng.uniform(-4, 4, (20, 21))
    gout = rng.standard_normal((3, 20, 21))
    a = numpy_backend.warp_bilinear_grad_flow(img, u, v, gout, 1.0)
    c = native_backend.warp_bilinear_grad_flow(img, u, v, gout, 1.0)
    assert np.array_equal(a[0], c[0])
    assert np.array_equal(a[1], c[1])


def test_warp_grad_matches_finite_differences(rng):
    # both backends implement the right-sided derivative of the sampling
    # formula; check against central differences away from integer kinks
    img = rng.uniform(0, 1, (2, 10, 10))
    u = rng.uniform(-2, 2, (10, 10)) + 0.3
    v = rng.uniform(-2, 2, (10, 10)) + 0.3
    gout = rng.standard_normal((2, 10, 10))
    for backend in (numpy_backend, native_backend):
        gu, gv = backend.warp_bilinear_grad_flow(img, u, v, gout, 1.0)
        h = 1e-6
        for y, x in [(2, 3), (5, 5), (7, 1)]:
            up, um = u.copy(), u.copy()
            up[y, x] += h
            um[y, x] -= h
            fd = (np.sum(gout * backend.warp_bilinear(img, up, v, 1.0))
                  - np.sum(gout * backend.warp_bilinear(img, um, v, 1.0))) / (2 * h)
            assert gu[y, x] == pytest.approx(fd, abs=1e-6)

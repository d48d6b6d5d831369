import numpy as np
import pytest

from motionforge.flowio import read_flo, read_png, write_flo, write_png


def test_flo_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    flow = rng.uniform(-30, 30, size=(2, 7, 5)).astype(np.float32).astype(np.float64)
    path = tmp_path / "f.flo"
    write_flo(path, flow)
    back = read_flo(path)
    assert np.array_equal(back, flow)


def test_flo_write_read_write_bytes_identical(tmp_path):
    rng = np.random.default_rng(1)
    flow = rng.standard_normal((2, 4, 6)).astype(np.float32).astype(np.float64)
    p1, p2 = tmp_path / "a.flo", tmp_path / "b.flo"
    write_flo(p1, flow)
    write_flo(p2, read_flo(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_flo_header_layout(tmp_path):
    path = tmp_path / "h.flo"
    write_flo(path, np.zeros((2, 3, 4)))
    raw = path.read_bytes()
    assert np.frombuffer(raw, "<f4", count=1)[0] == np.float32(202021.25)
    w, h = np.frombuffer(raw, "<i4", count=2, offset=4)
    assert (w, h) == (4, 3)
    assert len(raw) == 12 + 4 * 2 * 3 * 4


def test_flo_bad_magic(tmp_path):
    path = tmp_path / "bad.flo"
    path.write_bytes(b"\x00" * 20)
    with pytest.raises(ValueError):
        read_flo(path)


def test_flo_truncated(tmp_path):
    path = tmp_path / "t.flo"
    write_flo(path, np.zeros((2, 3, 4)))
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(ValueError):
        read_flo(path)


def test_png_roundtrip_quantization(tmp_path):
    rng = np.random.default_rng(2)
    img = rng.uniform(0, 1, size=(3, 9, 8))
    path = tmp_path / "i.png"
    write_png(path, img)
    back = read_png(path)
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 1.0 / 255.0 + 1e-12


def test_png_grayscale_mask(tmp_path):
    mask = np.zeros((1, 6, 6))
    mask[:, 2:4, 2:4] = 1.0
    path = tmp_path / "m.png"
    write_png(path, mask)
    back = read_png(path)
    assert back.shape == (1, 6, 6)
    assert np.array_equal(back, mask)


def test_png_round_half_up(tmp_path):
    # 0.5/255 rounds up to integer level 1 under half-up quantization
    img = np.full((1, 2, 2), 0.5 / 255.0)
    path = tmp_path / "r.png"
    write_png(path, img)
    assert np.allclose(read_png(path), 1.0 / 255.0)

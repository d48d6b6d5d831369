import numpy as np
import pytest

from motionforge.latent import (
    decode,
    decode_gradient,
    encode,
    read_stmt,
    stack_input,
    write_stmt,
)


class TestCodec:
    def test_shape_arithmetic(self):
        z = encode(np.zeros((3, 256, 256)), 2)
        assert z.shape == (12, 128, 128)

    def test_roundtrip_bit_exact(self):
        rng = np.random.default_rng(0)
        for shape in [(3, 8, 8), (1, 4, 6), (3, 10, 14)]:
            x = rng.standard_normal(shape)
            assert np.array_equal(decode(encode(x, 2), 2), x)

    def test_constant_preserved(self):
        x = np.full((3, 6, 6), 0.37)
        z = encode(x, 2)
        assert np.all(z == 0.37)

    def test_indivisible_dims(self):
        with pytest.raises(ValueError):
            encode(np.zeros((3, 7, 8)), 2)

    def test_indivisible_channels(self):
        with pytest.raises(ValueError):
            decode(np.zeros((7, 4, 4)), 2)

    def test_gradient_is_inverse_permutation(self):
        rng = np.random.default_rng(1)
        g_pixel = rng.standard_normal((3, 8, 8))
        # adjoint of a permutation is its inverse
        assert np.array_equal(decode(decode_gradient(g_pixel)), g_pixel)


class TestStackInput:
    def test_channel_count(self):
        conds = [np.zeros((12, 4, 4)), np.zeros((12, 4, 4))]
        out = stack_input(conds, np.zeros((12, 4, 4)))
        assert out.shape == (36, 4, 4)

    def test_single_condition(self):
        out = stack_input([np.zeros((12, 4, 4))], np.zeros((12, 4, 4)))
        assert out.shape == (24, 4, 4)

    def test_order_deterministic(self):
        a = np.full((2, 2, 2), 1.0)
        b = np.full((2, 2, 2), 2.0)
        zt = np.full((2, 2, 2), 3.0)
        ab = stack_input([a, b], zt)
        ba = stack_input([b, a], zt)
        assert np.all(ab[0:2] == 1.0) and np.all(ab[2:4] == 2.0) and np.all(ab[4:6] == 3.0)
        assert np.all(ba[0:2] == 2.0) and np.all(ba[2:4] == 1.0)

    def test_spatial_mismatch(self):
        with pytest.raises(ValueError):
            stack_input([np.zeros((12, 4, 4))], np.zeros((12, 8, 8)))

    def test_empty_conditions(self):
        with pytest.raises(ValueError):
            stack_input([], np.zeros((12, 4, 4)))


class TestStmtContainer:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(2)
        t = rng.standard_normal((3, 5, 2)).astype(np.float32).astype(np.float64)
        path = tmp_path / "t.stmt"
        write_stmt(path, t)
        assert np.array_equal(read_stmt(path), t)

    def test_write_read_write_bytes_identical(self, tmp_path):
        rng = np.random.default_rng(3)
        t = rng.standard_normal(17).astype(np.float32)
        p1, p2 = tmp_path / "a.stmt", tmp_path / "b.stmt"
        write_stmt(p1, t)
        write_stmt(p2, read_stmt(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_layout(self, tmp_path):
        path = tmp_path / "h.stmt"
        write_stmt(path, np.zeros((2, 3)))
        raw = path.read_bytes()
        assert raw[:4] == b"STMT"
        version, ndim = np.frombuffer(raw, "<u4", count=2, offset=4)
        assert version == 1 and ndim == 2
        assert tuple(np.frombuffer(raw, "<u4", count=2, offset=12)) == (2, 3)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.stmt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError):
            read_stmt(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "t.stmt"
        write_stmt(path, np.zeros(10))
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(ValueError):
            read_stmt(path)

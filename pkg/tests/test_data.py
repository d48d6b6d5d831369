import numpy as np
import pytest

from motionforge.data import (
    IMAGE_KINDS,
    gen_base_image,
    gen_dataset,
    gen_rsc_sample,
    gen_sir_sample,
    invert_flow,
    perturb_pseudo_flow,
    read_dataset,
    smooth_random_flow,
    write_dataset,
)
from motionforge.field import warp, warp_mask


def reconstruction_error(rec):
    """Mean abs warp-back error over pixels safely inside valid content."""
    recon = warp(rec.cond, rec.flow_gt)
    valid = warp_mask(rec.mask, rec.flow_gt, tau=0.99)
    sel = valid[0] == 1.0
    assert sel.sum() > 0
    return float(np.abs(recon - rec.gt)[:, sel].mean())


class TestBaseImages:
    def test_checker_blocks(self):
        img = gen_base_image(0, "checker", 32, 32)
        assert np.all(img[:, :8, :8] == 0.0)
        assert np.all(img[:, :8, 8:16] == 1.0)
        assert np.all(img[:, 8:16, :8] == 1.0)

    @pytest.mark.parametrize("kind", IMAGE_KINDS)
    def test_deterministic(self, kind):
        a = gen_base_image(7, kind, 24, 24)
        b = gen_base_image(7, kind, 24, 24)
        assert np.array_equal(a, b)
        assert a.shape == (3, 24, 24)
        assert a.min() >= 0.0 and a.max() <= 1.0

    def test_smooth_noise_span(self):
        img = gen_base_image(3, "smooth-noise", 64, 64)
        assert img.min() <= 0.1 and img.max() >= 0.9

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            gen_base_image(0, "plasma", 16, 16)


class TestSmoothFlow:
    def test_peak_magnitude(self):
        rng = np.random.default_rng(0)
        flow = smooth_random_flow(rng, 32, 32, 5.0)
        assert np.abs(flow).max() == pytest.approx(5.0)

    def test_inversion_fixed_point(self):
        rng = np.random.default_rng(1)
        disp = smooth_random_flow(rng, 48, 48, 3.0)
        inv = invert_flow(disp)
        # check F(p) = -D(p + F(p)) on interior pixels
        resampled = warp(disp, inv, fill=0.0)
        interior = np.zeros((48, 48), dtype=bool)
        interior[8:-8, 8:-8] = True
        err = np.abs(inv + resampled)[:, interior].max()
        assert err < 0.05


class TestSirSamples:
    def test_zero_magnitude_identity(self):
        rec = gen_sir_sample(4, 32, 32, magnitude=0.0)
        assert np.array_equal(rec.cond, rec.gt)
        assert np.all(rec.mask == 1.0)
        assert np.all(rec.flow_gt == 0.0)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4, 5, 6, 7])
    def test_reconstruction_invariant(self, seed):
        rec = gen_sir_sample(seed, 64, 64, magnitude=6.0)
        assert reconstruction_error(rec) < 0.02

    def test_margin_fraction_grows(self):
        fractions = []
        for mag in (2.0, 6.0, 12.0):
            rec = gen_sir_sample(3, 64, 64, magnitude=mag)
            fractions.append(float((rec.mask == 0.0).mean()))
        assert fractions[0] > 0.0
        assert fractions[0] < fractions[1] < fractions[2]

    def test_deterministic(self):
        a = gen_sir_sample(9, 32, 32, magnitude=4.0)
        b = gen_sir_sample(9, 32, 32, magnitude=4.0)
        assert np.array_equal(a.cond, b.cond)
        assert np.array_equal(a.flow_gt, b.flow_gt)


class TestRscSamples:
    def test_identity_pair(self):
        rec = gen_rsc_sample(0, 32, 32, a=0.0, b=0.0)
        assert np.array_equal(rec.cond, rec.gt)
        assert np.all(rec.flow_gt == 0.0)
        assert np.all(rec.mask == 1.0)

    def test_uniform_shift_correction(self):
        rec = gen_rsc_sample(1, 32, 32, a=2.0, b=0.0)
        assert np.all(rec.flow_gt[0] == -2.0)
        assert np.all(rec.flow_gt[1] == 0.0)
        recon = warp(rec.cond, rec.flow_gt)
        # the corrective flow samples outside the image only on the two
        # leftmost columns; everywhere else the round trip is exact
        assert np.abs(recon - rec.gt)[:, :, 2:].max() < 1e-9

    def test_row_linear_skew_geometry(self):
        h = w = 64
        rec = gen_rsc_sample(2, h, w, a=0.0, b=0.1)
        # row y of cond samples gt at x + 0.1*y: a vertical structure slants
        ys = np.arange(h)
        for y in (8, 32, 56):
            shift = 0.1 * y
            x0 = int(np.floor(shift))
            frac = shift - x0
            want = ((1 - frac) * rec.gt[:, y, 10 + x0]
                    + frac * rec.gt[:, y, 10 + x0 + 1])
            assert np.allclose(rec.cond[:, y, 10], want, atol=1e-9)
        assert np.all(rec.mask == 1.0)

    def test_bound_violation(self):
        with pytest.raises(ValueError):
            gen_rsc_sample(0, 64, 64, a=30.0, b=1.0, gamma=64.0)


class TestPerturbPseudoFlow:
    def test_zero_scale_copy(self):
        flow = np.random.default_rng(0).uniform(-2, 2, (2, 16, 16))
        out = perturb_pseudo_flow(flow, 0.0, 5)
        assert np.array_equal(out, flow)
        assert out is not flow

    def test_rms_matches_request(self):
        flow = np.zeros((2, 64, 64))
        for scale in (0.5, 2.0, 4.0):
            noise = perturb_pseudo_flow(flow, scale, 3) - flow
            rms = float(np.sqrt(np.mean(noise**2)))
            assert abs(rms - scale) / scale < 0.10

    def test_deterministic(self):
        flow = np.zeros((2, 16, 16))
        a = perturb_pseudo_flow(flow, 1.0, 9)
        b = perturb_pseudo_flow(flow, 1.0, 9)
        assert np.array_equal(a, b)

    def test_negative_scale(self):
        with pytest.raises(ValueError):
            perturb_pseudo_flow(np.zeros((2, 4, 4)), -1.0, 0)


class TestDatasetIO:
    def test_roundtrip(self, tmp_path):
        records = gen_dataset("sir", 3, seed=4, h=16, w=16, magnitude=2.0,
                              noise_scale=1.0)
        write_dataset(records, tmp_path / "ds")
        back = read_dataset(tmp_path / "ds")
        assert len(back) == 3
        for orig, loaded in zip(records, back):
            assert loaded.task == orig.task
            assert loaded.seed == orig.seed
            assert loaded.noise_scale == orig.noise_scale
            # flows stored as float32: exact after the same rounding
            assert np.array_equal(loaded.flow_gt,
                                  orig.flow_gt.astype(np.float32).astype(np.float64))
            assert np.abs(loaded.gt - orig.gt).max() <= 1.0 / 255.0 + 1e-12
            assert np.abs(loaded.cond - orig.cond).max() <= 1.0 / 255.0 + 1e-12

    def test_empty_dataset_error(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(ValueError, match="empty dataset"):
            read_dataset(tmp_path / "empty")

    def test_missing_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_dataset(tmp_path / "missing")

    def test_missing_file(self, tmp_path):
        records = gen_dataset("rsc", 1, seed=0, h=16, w=16, magnitude=2.0)
        write_dataset(records, tmp_path / "ds")
        (tmp_path / "ds" / "sample_00000" / "flow_gt.flo").unlink()
        with pytest.raises(FileNotFoundError):
            read_dataset(tmp_path / "ds")

    def test_rsc_records_full_mask(self, tmp_path):
        records = gen_dataset("rsc", 2, seed=1, h=16, w=16, magnitude=3.0)
        for rec in records:
            assert np.all(rec.mask == 1.0)
            assert rec.task == "rsc"

    def test_unknown_task(self):
        with pytest.raises(ValueError):
            gen_dataset("foo", 1, seed=0, h=16, w=16, magnitude=1.0)

import numpy as np
import pytest

from splatstream import metrics
from splatstream.metrics import StaticMask, mtv, psnr, ssim, st_slice
from splatstream.optimize import dssim_loss

from oracles import naive_ssim


class TestPsnr:
    def test_identical_capped(self):
        a = np.random.default_rng(0).uniform(size=(8, 8, 3))
        assert psnr(a, a) == 100.0

    def test_constant_difference_exact(self):
        a = np.full((16, 16, 3), 0.4)
        b = a + 0.1
        assert abs(psnr(a, b) - 20.0) < 1e-6

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            a = rng.uniform(size=(8, 8, 3))
            b = rng.uniform(size=(8, 8, 3))
            assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestSsim:
    def test_identical_one(self):
        a = np.random.default_rng(2).uniform(size=(16, 16, 3))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_consistent_with_dssim(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            a = rng.uniform(size=(12, 14, 3))
            b = rng.uniform(size=(12, 14, 3))
            d, _ = dssim_loss(a, b)
            assert d == (1.0 - ssim(a, b)) / 2.0

    def test_checkerboard_matches_oracle(self):
        yy, xx = np.mgrid[0:16, 0:16]
        a = ((yy + xx) % 2).astype(np.float64)[:, :, None].repeat(3, axis=2)
        assert abs(ssim(a, 1.0 - a) - naive_ssim(a, 1.0 - a)) < 1e-12


class TestMtv:
    def test_constant_video_zero(self):
        frames = [np.full((8, 8, 3), 0.3)] * 5
        assert mtv(frames, StaticMask(np.ones((8, 8), bool))) == 0.0

    def test_alternating_full_mask(self):
        frames = [np.zeros((8, 8, 3)), np.ones((8, 8, 3))] * 3
        assert mtv(frames, StaticMask(np.ones((8, 8), bool))) == 100.0

    def test_masking_excludes_motion(self):
        mask = np.zeros((8, 8), bool)
        mask[:, :4] = True
        f0 = np.zeros((8, 8, 3))
        f1 = np.zeros((8, 8, 3))
        f1[:, 4:] = 1.0  # changes only outside the mask
        assert mtv([f0, f1, f0], StaticMask(mask)) == 0.0

    def test_channel_permutation_and_flip_invariance(self):
        rng = np.random.default_rng(4)
        frames = [rng.uniform(size=(8, 8, 3)) for _ in range(4)]
        mask = rng.uniform(size=(8, 8)) > 0.4
        mask[0, 0] = True
        base = mtv(frames, StaticMask(mask))
        permuted = [f[:, :, [2, 0, 1]] for f in frames]
        assert mtv(permuted, StaticMask(mask)) == pytest.approx(base, abs=1e-12)
        flipped = [f[:, ::-1] for f in frames]
        assert mtv(flipped, StaticMask(mask[:, ::-1])) == pytest.approx(base, abs=1e-12)

    def test_guards(self):
        with pytest.raises(ValueError, match="at least 2"):
            mtv([np.zeros((8, 8, 3))], StaticMask(np.ones((8, 8), bool)))
        with pytest.raises(ValueError, match="no static pixels"):
            StaticMask(np.zeros((8, 8), bool))

    def test_nonnegative_and_zero_iff_constant(self):
        rng = np.random.default_rng(5)
        frames = [rng.uniform(size=(8, 8, 3)) for _ in range(3)]
        mask = StaticMask(np.ones((8, 8), bool))
        assert mtv(frames, mask) > 0.0


class TestStSlice:
    def test_constant_video(self):
        frame = np.random.default_rng(6).uniform(size=(8, 8, 3))
        out = st_slice([frame] * 5, column=3)
        assert out.shape == (8, 5, 3)
        for t in range(5):
            assert np.array_equal(out[:, t], frame[:, 3])

    def test_single_frame(self):
        frame = np.random.default_rng(7).uniform(size=(8, 8, 3))
        out = st_slice([frame], column=2)
        assert out.shape == (8, 1, 3)
        assert np.array_equal(out[:, 0], frame[:, 2])

    def test_random_probes(self):
        rng = np.random.default_rng(8)
        frames = [rng.uniform(size=(10, 12, 3)) for _ in range(6)]
        out = st_slice(frames, column=5)
        for _ in range(20):
            y = rng.integers(0, 10)
            t = rng.integers(0, 6)
            assert np.array_equal(out[y, t], frames[t][y, 5])

    def test_column_range(self):
        with pytest.raises(ValueError, match="out of range"):
            st_slice([np.zeros((8, 8, 3))], column=8)


class TestEvaluateFrames:
    def test_self_evaluation(self):
        rng = np.random.default_rng(9)
        frames = [[rng.uniform(size=(16, 16, 3)) for _ in range(4)]]
        masks = [StaticMask(np.ones((16, 16), bool))]
        rows, summary = metrics.evaluate_frames(frames, frames, masks)
        assert len(rows) == 4
        assert all(r[1] == 100.0 for r in rows)
        assert all(abs(r[2] - 1.0) < 1e-12 for r in rows)
        assert summary["psnr"] == 100.0

    def test_static_sequence_mtv_zero(self):
        frame = np.random.default_rng(10).uniform(size=(16, 16, 3))
        seq = [[frame] * 3]
        masks = [StaticMask(np.ones((16, 16), bool))]
        _, summary = metrics.evaluate_frames(seq, seq, masks)
        assert summary["mtv"] == 0.0

    def test_count_mismatch(self):
        a = [[np.zeros((16, 16, 3))] * 3]
        b = [[np.zeros((16, 16, 3))] * 2]
        with pytest.raises(ValueError, match="frame count mismatch"):
            metrics.evaluate_frames(a, b)

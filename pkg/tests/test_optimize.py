import numpy as np
import pytest

from splatstream import optimize as opt
from splatstream.scene import GaussianSet

from oracles import assert_grad_close, central_diff, naive_ssim


def small_set(rng, n=4):
    return GaussianSet(
        positions=rng.normal(size=(n, 3)),
        rotations=rng.normal(size=(n, 4)) + np.array([2.0, 0, 0, 0]),
        log_scales=rng.normal(scale=0.3, size=(n, 3)),
        opacity_logits=rng.normal(size=n),
        sh_coeffs=rng.normal(scale=0.2, size=(n, 3, 1)),
        sh_degree=0,
    )


class TestL1:
    def test_identical_zero(self):
        a = np.random.default_rng(0).uniform(size=(8, 8, 3))
        val, _ = opt.l1_loss(a, a)
        assert val == 0.0

    def test_constant_offset(self):
        rng = np.random.default_rng(1)
        target = rng.uniform(0.0, 0.8, size=(6, 7, 3))
        pred = target + 0.1
        val, grad = opt.l1_loss(pred, target)
        assert abs(val - 0.1) < 1e-12
        assert np.allclose(grad, 1.0 / pred.size)

    def test_grad_matches_fd(self):
        rng = np.random.default_rng(2)
        pred = rng.uniform(size=(5, 6, 3))
        target = rng.uniform(size=(5, 6, 3))
        # keep every element at least 10h away from the |.| kink
        pred = np.where(np.abs(pred - target) < 1e-3, target + 2e-3, pred)
        _, grad = opt.l1_loss(pred, target)
        fd = central_diff(lambda x: opt.l1_loss(x, target)[0], pred)
        assert_grad_close(grad, fd, rtol=1e-4, label="l1")

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            opt.l1_loss(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestDssim:
    def test_identical_zero(self):
        a = np.random.default_rng(3).uniform(size=(16, 16, 3))
        val, _ = opt.dssim_loss(a, a)
        assert abs(val) < 1e-12

    def test_checkerboard_matches_naive_oracle(self):
        yy, xx = np.mgrid[0:16, 0:16]
        a = ((yy + xx) % 2).astype(np.float64)[:, :, None].repeat(3, axis=2)
        b = 1.0 - a
        val, _ = opt.dssim_loss(a, b)
        expect = (1.0 - naive_ssim(a, b)) / 2.0
        assert 0.0 < val <= 1.0
        assert abs(val - expect) < 1e-12

    def test_matches_naive_on_random_pairs(self):
        rng = np.random.default_rng(4)
        for _ in range(3):
            a = rng.uniform(size=(13, 15, 3))
            b = rng.uniform(size=(13, 15, 3))
            val, _ = opt.dssim_loss(a, b)
            assert abs(val - (1.0 - naive_ssim(a, b)) / 2.0) < 1e-12

    def test_grad_matches_fd(self):
        rng = np.random.default_rng(5)
        pred = rng.uniform(size=(16, 16, 3))
        target = rng.uniform(size=(16, 16, 3))
        _, grad = opt.dssim_loss(pred, target)
        fd = central_diff(lambda x: opt.dssim_loss(x, target)[0], pred)
        assert_grad_close(grad, fd, rtol=1e-3, label="dssim pred")

    def test_target_grad_matches_fd(self):
        rng = np.random.default_rng(6)
        pred = rng.uniform(size=(12, 12, 3))
        target = rng.uniform(size=(12, 12, 3))
        _, _, grad_t = opt._dssim_loss_both(pred, target)
        fd = central_diff(lambda y: opt.dssim_loss(pred, y)[0], target)
        assert_grad_close(grad_t, fd, rtol=1e-3, label="dssim target")

    def test_too_small_rejected(self):
        with pytest.raises(ValueError, match="smaller than SSIM window"):
            opt.dssim_loss(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))

    def test_filter_adjoint_identity(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(14, 17, 3))
        g = rng.normal(size=(14, 17, 3))
        lhs = float(np.sum(opt._sep_filter(x) * g))
        rhs = float(np.sum(x * opt._sep_filter_adjoint(g)))
        assert abs(lhs - rhs) < 1e-10


class TestRegularizers:
    def test_opacity_saturation(self):
        rng = np.random.default_rng(8)
        g = small_set(rng)
        g.opacity_logits[:] = -100.0
        val, _ = opt.opacity_reg(g)
        assert val < 1e-20

    def test_opacity_single_half(self):
        rng = np.random.default_rng(9)
        g = small_set(rng, n=1)
        g.opacity_logits[:] = 0.0
        val, _ = opt.opacity_reg(g)
        assert abs(val - 0.5) < 1e-12

    def test_opacity_grad_fd(self):
        rng = np.random.default_rng(10)
        g = small_set(rng)
        _, grad = opt.opacity_reg(g)

        def f(logits):
            g2 = g.copy()
            g2.opacity_logits = logits
            return opt.opacity_reg(g2)[0]

        fd = central_diff(f, g.opacity_logits.copy())
        assert_grad_close(grad, fd, label="opacity_reg")

    def test_residual_values(self):
        assert opt.residual_reg(np.zeros((4, 4, 3)))[0] == 0.0
        val, _ = opt.residual_reg(np.full((4, 4, 3), 0.02))
        assert abs(val - 0.02) < 1e-15

    def test_residual_grad_fd(self):
        rng = np.random.default_rng(11)
        m = rng.normal(scale=0.05, size=(6, 6, 3))
        m = np.where(np.abs(m) < 1e-3, 2e-3, m)  # stay off the kink
        _, grad = opt.residual_reg(m)
        fd = central_diff(lambda x: opt.residual_reg(x)[0], m)
        assert_grad_close(grad, fd, label="residual_reg")


class TestTotalLoss:
    def test_sequential_zero_case(self):
        rng = np.random.default_rng(12)
        g = small_set(rng)
        img = rng.uniform(size=(16, 16, 3))
        residual = np.zeros_like(img)
        breakdown, _, _, _ = opt.total_loss(img, img, g, residual, "sequential")
        assert breakdown.total == 0.0

    def test_mode_difference_is_opacity_term(self):
        rng = np.random.default_rng(13)
        g = small_set(rng)
        pred = rng.uniform(size=(16, 16, 3))
        target = rng.uniform(size=(16, 16, 3))
        residual = rng.normal(scale=0.01, size=pred.shape)
        b_first, _, _, _ = opt.total_loss(pred, target, g, residual, "first")
        b_seq, _, _, _ = opt.total_loss(pred, target, g, residual, "sequential")
        assert abs((b_first.total - b_seq.total)
                   - opt.LAMBDA_OPACITY * b_first.opacity_reg) < 1e-12

    def test_configured_weights(self):
        assert opt.LAMBDA_OPACITY == 0.01
        assert opt.LAMBDA_RESIDUAL == 0.01
        assert opt.LAMBDA_DSSIM == 0.2

    def test_breakdown_recomposes(self):
        rng = np.random.default_rng(14)
        g = small_set(rng)
        pred = rng.uniform(size=(16, 16, 3))
        target = rng.uniform(size=(16, 16, 3))
        residual = rng.normal(scale=0.01, size=pred.shape)
        b, _, _, _ = opt.total_loss(pred, target, g, residual, "first")
        recomposed = (0.8 * b.l1 + 0.2 * b.dssim
                      + 0.01 * b.opacity_reg + 0.01 * b.residual_reg)
        assert abs(b.total - recomposed) < 1e-12

    def test_residual_grad_matches_fd(self):
        # The residual feeds the loss twice: through the restored target and
        # through its own L1 penalty. Check the combined gradient.
        rng = np.random.default_rng(15)
        g = small_set(rng)
        obs = rng.uniform(size=(16, 16, 3))
        pred = rng.uniform(size=(16, 16, 3))
        residual = rng.normal(scale=0.05, size=obs.shape)
        residual = np.where(np.abs(residual) < 1e-3, 2e-3, residual)
        _, _, _, d_res = opt.total_loss(pred, obs - residual, g, residual, "first")

        def f(m):
            b, _, _, _ = opt.total_loss(pred, obs - m, g, m, "first")
            return b.total

        fd = central_diff(f, residual.copy())
        assert_grad_close(d_res, fd, rtol=1e-3, label="total residual")


class TestAdam:
    def test_zero_grad_identity(self):
        params = np.array([1.0, -2.0, 3.0])
        state = opt.AdamState.zeros_like("p", params)
        out = opt.adam_step(state, params, np.zeros(3), lr=0.1)
        assert np.array_equal(out, params)
        assert state.step == 1

    def test_first_step_magnitude(self):
        params = np.array([0.0])
        state = opt.AdamState.zeros_like("p", params)
        out = opt.adam_step(state, params, np.array([1.0]), lr=0.01)
        assert abs(out[0] - (-0.01)) < 1e-10

    def test_groups_independent(self):
        a = np.array([1.0])
        b = np.array([1.0])
        sa = opt.AdamState.zeros_like("a", a)
        sb = opt.AdamState.zeros_like("b", b)
        a2 = opt.adam_step(sa, a, np.array([0.5]), lr=0.1)
        assert np.array_equal(b, np.array([1.0]))
        assert sb.step == 0
        b2 = opt.adam_step(sb, b, np.array([0.5]), lr=0.1)
        assert np.allclose(a2, b2)

    def test_lr_zero_identity(self):
        rng = np.random.default_rng(16)
        params = rng.normal(size=7)
        state = opt.AdamState.zeros_like("p", params)
        out = opt.adam_step(state, params, rng.normal(size=7), lr=0.0)
        assert np.array_equal(out, params)

    def test_nonfinite_grad_rejected(self):
        params = np.zeros(3)
        state = opt.AdamState.zeros_like("positions", params)
        with pytest.raises(FloatingPointError, match="positions"):
            opt.adam_step(state, params, np.array([1.0, np.inf, 0.0]), lr=0.1)


class TestLrSchedule:
    def test_first_frame_endpoints(self):
        assert opt.lr_schedule(0, 1500, 1e-4, 1e-6) == pytest.approx(1e-4)
        assert opt.lr_schedule(1500, 1500, 1e-4, 1e-6) == pytest.approx(1e-6)

    def test_sequential_endpoints(self):
        assert opt.lr_schedule(0, 250, 1e-5, 1e-7) == pytest.approx(1e-5)
        assert opt.lr_schedule(250, 250, 1e-5, 1e-7) == pytest.approx(1e-7)

    def test_geometric_midpoint(self):
        assert opt.lr_schedule(750, 1500, 1e-4, 1e-6) == pytest.approx(1e-5)

    def test_monotone_decreasing(self):
        vals = [opt.lr_schedule(i, 100, 1e-3, 1e-5) for i in range(101)]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_zero_total_rejected(self):
        with pytest.raises(ValueError):
            opt.lr_schedule(0, 0, 1e-4, 1e-6)

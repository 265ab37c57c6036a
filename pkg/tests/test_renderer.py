import numpy as np
import pytest

from splatstream.renderer import (
    Camera, project, render, render_backward, expected_depth,
)
from splatstream.scene import (
    GaussianSet, activate, inverse_sigmoid, rgb_to_sh0,
)

from oracles import build_random_scene, fd_check_render_gradients, naive_render


def single_gaussian(position, color, opacity_logit=10.0, log_scale=np.log(0.05),
                    sh_degree=0):
    n_coeffs = (sh_degree + 1) ** 2
    sh = np.zeros((1, 3, n_coeffs))
    sh[0, :, 0] = rgb_to_sh0(np.asarray(color, dtype=np.float64))
    return GaussianSet(
        positions=np.array([position], dtype=np.float64),
        rotations=np.array([[1.0, 0, 0, 0]]),
        log_scales=np.full((1, 3), log_scale),
        opacity_logits=np.array([opacity_logit], dtype=np.float64),
        sh_coeffs=sh,
        sh_degree=sh_degree,
    )


def default_camera(width=64, height=64, fx=100.0, cx=32.0, cy=32.0):
    return Camera(rotation=np.eye(3), translation=np.zeros(3),
                  fx=fx, fy=fx, cx=cx, cy=cy, width=width, height=height,
                  near=0.1)


class TestCamera:
    def test_orthonormality_enforced(self):
        bad = np.eye(3)
        bad[0, 1] = 1e-3
        with pytest.raises(ValueError, match="orthonormal"):
            Camera(rotation=bad, translation=np.zeros(3), fx=50, fy=50,
                   cx=8, cy=8, width=16, height=16)

    def test_center(self):
        cam = Camera(rotation=np.eye(3), translation=np.array([0.0, 0, -3]),
                     fx=50, fy=50, cx=8, cy=8, width=16, height=16)
        assert np.allclose(cam.center, [0, 0, 3])


class TestProject:
    def test_on_axis_projection(self):
        g = single_gaussian([0.0, 0.0, 2.0], [0.5, 0.5, 0.5])
        proj = project(activate(g), default_camera())
        assert np.allclose(proj.mean2d[0], [32.0, 32.0])
        assert not proj.culled[0]

    def test_on_axis_projected_std(self):
        # On axis, J W Sigma W^T J^T for an isotropic Gaussian is exactly
        # (fx s / z)^2 I before the low-pass.
        s, z, fx = 0.08, 2.5, 100.0
        g = single_gaussian([0.0, 0.0, z], [0.5, 0.5, 0.5], log_scale=np.log(s))
        proj = project(activate(g), default_camera(fx=fx))
        std = np.sqrt(proj.cov2d[0, 0] - 0.3)
        assert abs(std - fx * s / z) < 1e-9
        assert abs(proj.cov2d[0, 2] - proj.cov2d[0, 0]) < 1e-12
        assert abs(proj.cov2d[0, 1]) < 1e-12

    def test_behind_camera_culled(self):
        g = single_gaussian([0.0, 0.0, -1.0], [0.5, 0.5, 0.5])
        proj = project(activate(g), default_camera())
        assert proj.culled[0]

    def test_far_off_image_culled(self):
        g = single_gaussian([50.0, 0.0, 2.0], [0.5, 0.5, 0.5])
        proj = project(activate(g), default_camera())
        assert proj.culled[0]


class TestRenderForward:
    def test_single_opaque_gaussian_center_pixel(self):
        g = single_gaussian([0.0, 0.0, 2.0], [1.0, 0.0, 0.0], opacity_logit=10.0)
        img, _ = render(g, default_camera())
        assert img.rgb[32, 32, 0] == pytest.approx(0.99, abs=1e-4)
        assert img.rgb[32, 32, 1] == 0.0
        assert img.alpha[32, 32] == pytest.approx(0.99, abs=1e-4)

    def test_two_coincident_gaussians_composite(self):
        front = single_gaussian([0.0, 0.0, 2.0], [1.0, 0.0, 0.0],
                                opacity_logit=0.0, log_scale=np.log(0.2))
        back = single_gaussian([0.0, 0.0, 3.0], [0.0, 1.0, 0.0],
                               opacity_logit=0.0, log_scale=np.log(0.3))
        g = GaussianSet(
            positions=np.vstack([front.positions, back.positions]),
            rotations=np.vstack([front.rotations, back.rotations]),
            log_scales=np.vstack([front.log_scales, back.log_scales]),
            opacity_logits=np.concatenate([front.opacity_logits, back.opacity_logits]),
            sh_coeffs=np.vstack([front.sh_coeffs, back.sh_coeffs]),
            sh_degree=0,
        )
        img, _ = render(g, default_camera())
        # C = a1 c1 + a2 (1 - a1) c2 with a1 = a2 = 0.5 at the shared center
        assert np.allclose(img.rgb[32, 32], [0.5, 0.25, 0.0], atol=1e-12)

    def test_deterministic(self):
        g, camera, _ = build_random_scene(0, n=8)
        img1, _ = render(g, camera)
        img2, _ = render(g, camera)
        assert np.array_equal(img1.rgb, img2.rgb)
        assert np.array_equal(img1.alpha, img2.alpha)

    def test_matches_naive_oracle(self):
        for seed in range(4):
            g, camera, _ = build_random_scene(seed, n=7)
            img, _ = render(g, camera)
            rgb_ref, alpha_ref = naive_render(g, camera)
            assert np.max(np.abs(img.rgb - rgb_ref)) < 1e-10
            assert np.max(np.abs(img.alpha - alpha_ref)) < 1e-10

    def test_alpha_equals_weight_sum(self):
        g, camera, _ = build_random_scene(1, n=8)
        img, aux = render(g, camera)
        inc = aux.entry_included.astype(bool)
        w = aux.entry_alpha[inc] * aux.entry_t[inc]
        sums = np.bincount(aux.entry_pixel[inc], weights=w,
                           minlength=camera.width * camera.height)
        assert np.max(sums) <= 1.0 + 1e-12
        assert np.allclose(sums.reshape(img.alpha.shape), img.alpha, atol=1e-12)

    def test_adding_gaussian_never_darkens_alpha(self):
        g, camera, rng = build_random_scene(2, n=6)
        img_before, _ = render(g, camera)
        extra = single_gaussian([0.05, -0.02, 2.5], [0.3, 0.7, 0.4],
                                opacity_logit=0.5, log_scale=np.log(0.15),
                                sh_degree=3)
        g2 = GaussianSet(
            positions=np.vstack([g.positions, extra.positions]),
            rotations=np.vstack([g.rotations, extra.rotations]),
            log_scales=np.vstack([g.log_scales, extra.log_scales]),
            opacity_logits=np.concatenate([g.opacity_logits, extra.opacity_logits]),
            sh_coeffs=np.vstack([g.sh_coeffs, extra.sh_coeffs]),
            sh_degree=3,
        )
        img_after, _ = render(g2, camera)
        # The transmittance stop can spare up to T_STOP of alpha.
        assert np.min(img_after.alpha - img_before.alpha) > -1e-4

    def test_depth_tie_break_and_permutation(self):
        g, camera, rng = build_random_scene(3, n=6)
        img, _ = render(g, camera)
        perm = rng.permutation(g.n)
        g2 = GaussianSet(g.positions[perm], g.rotations[perm],
                         g.log_scales[perm], g.opacity_logits[perm],
                         g.sh_coeffs[perm], g.sh_degree)
        img2, _ = render(g2, camera)
        assert np.array_equal(img.rgb, img2.rgb)

    def test_empty_scene_rejected(self):
        g, camera, _ = build_random_scene(4, n=2)
        object.__setattr__(g, "positions", np.zeros((0, 3)))
        with pytest.raises(ValueError, match="empty scene"):
            render(g, camera)


class TestRenderBackward:
    def test_zero_upstream_zero_grads(self):
        g, camera, _ = build_random_scene(5, n=5)
        _, aux = render(g, camera)
        grads = render_backward(g, camera, aux, np.zeros((16, 16, 3)))
        for arr in (grads.positions, grads.rotations, grads.log_scales,
                    grads.opacity_logits, grads.sh_coeffs, grads.pixel_grad_norm):
            assert np.all(arr == 0.0)

    def test_linear_in_upstream(self):
        g, camera, rng = build_random_scene(6, n=5)
        _, aux = render(g, camera)
        dl = rng.normal(size=(16, 16, 3))
        g1 = render_backward(g, camera, aux, dl)
        g2 = render_backward(g, camera, aux, 2.0 * dl)
        assert np.array_equal(g2.positions, 2.0 * g1.positions)
        assert np.array_equal(g2.sh_coeffs, 2.0 * g1.sh_coeffs)
        assert np.array_equal(g2.opacity_logits, 2.0 * g1.opacity_logits)

    def test_stale_aux_rejected(self):
        g, camera, _ = build_random_scene(7, n=5)
        _, aux = render(g, camera)
        g2, _, _ = build_random_scene(7, n=6)
        with pytest.raises(ValueError, match="stale aux"):
            render_backward(g2, camera, aux, np.zeros((16, 16, 3)))

    @pytest.mark.parametrize("seed", [0, 1])
    def test_gradients_match_finite_differences(self, seed):
        g, camera, rng = build_random_scene(seed, n=5)
        dl = rng.normal(size=(camera.height, camera.width, 3))
        checked, skipped, failures = fd_check_render_gradients(g, camera, dl)
        assert not failures, failures[:5]
        assert skipped <= 0.01 * (checked + skipped)


class TestExpectedDepth:
    def test_single_gaussian_depth(self):
        g = single_gaussian([0.0, 0.0, 2.0], [1.0, 0.0, 0.0], opacity_logit=10.0)
        _, aux = render(g, default_camera())
        depth, wsum = expected_depth(aux, default_camera())
        assert depth[32, 32] == pytest.approx(2.0)
        assert wsum[32, 32] == pytest.approx(0.99, abs=1e-4)

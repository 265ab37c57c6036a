"""Synthetic multi-view benchmark: ground-truth scenes with known static
masks, clean renders through the engine's own rasterizer, and seeded
Gaussian+Poisson sensor noise."""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .renderer import Camera, project, render
from .scene import (
    GaussianSet, PointCloudInit, activate, eval_sh, inverse_sigmoid,
    rgb_to_sh0,
)

MASK_DILATION_PX = 5
RIG_RADIUS = 4.0
RIG_ARC_DEG = 80.0
MAX_DYNAMIC_STEP_PX = 2.0


@dataclass
class NoiseSpec:
    gaussian_sigma: float
    poisson_photons: float
    seed: int = 0

    def __post_init__(self):
        if self.gaussian_sigma < 0:
            raise ValueError("gaussian_sigma must be >= 0")
        if self.poisson_photons <= 0:
            raise ValueError("poisson_photons must be > 0")


@dataclass
class SyntheticScene:
    gaussians: GaussianSet        # ground truth at the canonical pose
    dynamic_indices: np.ndarray   # (D,) indices into gaussians
    motion_offsets: np.ndarray    # (T, 3) rigid translation of the subset
    cameras: list
    frames: int
    masks: list                   # per camera, (H, W) bool, True = static

    def gaussians_at(self, t: int) -> GaussianSet:
        if not 0 <= t < self.frames:
            raise IndexError(f"frame {t} out of range [0, {self.frames})")
        g = self.gaussians.copy()
        g.positions[self.dynamic_indices] += self.motion_offsets[t]
        return g


def _lookat_camera(position, target, fx, width, height, near=0.5):
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    down = np.array([0.0, 1.0, 0.0])  # +y is down in image space
    down = down - np.dot(down, forward) * forward
    down /= np.linalg.norm(down)
    right = np.cross(down, forward)
    rot = np.stack([right, down, forward])
    return Camera(rotation=rot, translation=-rot @ np.asarray(position),
                  fx=fx, fy=fx, cx=(width - 1) / 2, cy=(height - 1) / 2,
                  width=width, height=height, near=near)


def make_rig(n_cameras: int, resolution: int):
    """Fixed cameras on an arc facing the origin."""
    fx = 1.2 * resolution
    span = math.radians(RIG_ARC_DEG)
    cams = []
    for i in range(n_cameras):
        theta = (i / (n_cameras - 1) - 0.5) * span if n_cameras > 1 else 0.0
        pos = np.array([RIG_RADIUS * math.sin(theta),
                        0.35 * math.sin(2.1 * theta),
                        -RIG_RADIUS * math.cos(theta)])
        cams.append(_lookat_camera(pos, np.zeros(3), fx, resolution, resolution))
    return cams


def _smooth_motion(frames: int, amplitude: float) -> np.ndarray:
    t = np.arange(frames) / max(frames, 1)
    return amplitude * np.stack([
        np.sin(2 * np.pi * t),
        0.6 * np.sin(4 * np.pi * t + 1.3),
        0.4 * np.sin(2 * np.pi * t + 0.7),
    ], axis=1)


def make_scene(seed: int, n_static: int, n_dynamic: int, n_cameras: int,
               frames: int, resolution: int) -> SyntheticScene:
    """Deterministic scene: backdrop slab + clutter + a moving cluster.

    Static masks are the per-camera complement of the dynamic subset's
    rasterized footprints over all frames, dilated by 5 px.
    """
    if n_static < 10:
        raise ValueError("n_static must be >= 10")
    if n_cameras < 2:
        raise ValueError("n_cameras must be >= 2")
    if frames < 1 or resolution < 8:
        raise ValueError("frames >= 1 and resolution >= 8 required")
    rng = np.random.default_rng([seed, 2024])
    cameras = make_rig(n_cameras, resolution)

    # Backdrop slab behind the scene, sized to cover every view.
    n_back = max(n_static // 2, 9)
    side = int(round(math.sqrt(n_back)))
    n_back = side * side
    grid = np.linspace(-2.5, 2.5, side)
    bx, by = np.meshgrid(grid, grid)
    spacing = grid[1] - grid[0] if side > 1 else 1.0
    back_pos = np.stack([
        bx.ravel(), by.ravel(),
        1.3 + rng.uniform(-0.05, 0.05, size=n_back)], axis=1)
    back_scale = np.full((n_back, 3), 0.75 * spacing)
    back_opacity = np.full(n_back, inverse_sigmoid(0.97))
    back_color = 0.35 + 0.3 * np.stack([
        np.sin(1.3 * back_pos[:, 0]) * np.cos(0.9 * back_pos[:, 1]),
        np.sin(0.7 * back_pos[:, 0] + 1.1),
        np.cos(1.7 * back_pos[:, 1]),
    ], axis=1)

    # Foreground clutter.
    n_clutter = max(n_static - n_back, 1)
    cl_pos = np.stack([
        rng.uniform(-1.1, 1.1, size=n_clutter),
        rng.uniform(-1.1, 1.1, size=n_clutter),
        rng.uniform(-0.5, 0.9, size=n_clutter)], axis=1)
    cl_scale = rng.uniform(0.05, 0.13, size=(n_clutter, 3))
    cl_opacity = inverse_sigmoid(rng.uniform(0.55, 0.95, size=n_clutter))
    cl_color = rng.uniform(0.15, 0.85, size=(n_clutter, 3))

    # Dynamic cluster.
    dyn_center = np.array([0.45, 0.1, -0.25])
    dyn_pos = dyn_center + rng.normal(scale=0.1, size=(max(n_dynamic, 0), 3))
    dyn_scale = rng.uniform(0.05, 0.09, size=(max(n_dynamic, 0), 3))
    dyn_opacity = inverse_sigmoid(rng.uniform(0.85, 0.95, size=max(n_dynamic, 0)))
    dyn_color = np.column_stack([
        rng.uniform(0.7, 0.95, size=max(n_dynamic, 0)),
        rng.uniform(0.15, 0.35, size=max(n_dynamic, 0)),
        rng.uniform(0.1, 0.3, size=max(n_dynamic, 0))])

    positions = np.vstack([back_pos, cl_pos, dyn_pos])
    scales = np.vstack([back_scale, cl_scale, dyn_scale])
    opacity = np.concatenate([back_opacity, cl_opacity, dyn_opacity])
    colors = np.clip(np.vstack([back_color, cl_color, dyn_color]), 0.05, 0.95)
    n_total = positions.shape[0]

    quats = rng.normal(size=(n_total, 4)) + np.array([3.0, 0, 0, 0])
    sh = np.zeros((n_total, 3, 1))
    sh[:, :, 0] = rgb_to_sh0(colors)
    gaussians = GaussianSet(
        positions=positions,
        rotations=quats,
        log_scales=np.log(scales),
        opacity_logits=opacity,
        sh_coeffs=sh,
        sh_degree=0,
    )
    dynamic_indices = np.arange(n_back + n_clutter, n_total)

    motion = _smooth_motion(frames, amplitude=0.25 if n_dynamic > 0 else 0.0)
    # Keep per-frame motion within the trackable budget (projected pixels).
    if frames > 1 and n_dynamic > 0:
        step = np.linalg.norm(np.diff(motion, axis=0), axis=1).max()
        min_depth = RIG_RADIUS - 1.5
        budget = MAX_DYNAMIC_STEP_PX * min_depth / cameras[0].fx
        if step > budget:
            motion *= budget / step

    scene = SyntheticScene(gaussians=gaussians, dynamic_indices=dynamic_indices,
                           motion_offsets=motion, cameras=cameras,
                           frames=frames, masks=[])
    scene.masks = _build_static_masks(scene)
    return scene


def _build_static_masks(scene: SyntheticScene):
    """Complement of the dynamic footprints over all frames, dilated 5 px."""
    masks = []
    h = scene.cameras[0].height
    w = scene.cameras[0].width
    dyn = scene.dynamic_indices
    for cam in scene.cameras:
        mask = np.ones((h, w), dtype=bool)
        if dyn.size:
            for t in range(scene.frames):
                act = activate(scene.gaussians_at(t))
                proj = project(act, cam)
                for gi in dyn:
                    if proj.culled[gi]:
                        continue
                    u, v = proj.mean2d[gi]
                    r = proj.radius[gi]
                    x0 = max(0, int(np.ceil(u - r)) - MASK_DILATION_PX)
                    x1 = min(w - 1, int(np.floor(u + r)) + MASK_DILATION_PX)
                    y0 = max(0, int(np.ceil(v - r)) - MASK_DILATION_PX)
                    y1 = min(h - 1, int(np.floor(v + r)) + MASK_DILATION_PX)
                    if x0 <= x1 and y0 <= y1:
                        mask[y0:y1 + 1, x0:x1 + 1] = False
        masks.append(mask)
    return masks


def render_clean(scene: SyntheticScene, t: int, camera_index: int) -> np.ndarray:
    """Ground-truth render at frame t through one rig camera, in [0, 1]."""
    if not 0 <= camera_index < len(scene.cameras):
        raise IndexError(f"camera {camera_index} out of range")
    img, _ = render(scene.gaussians_at(t), scene.cameras[camera_index])
    return np.clip(img.rgb, 0.0, 1.0)


def add_noise(image: np.ndarray, spec: NoiseSpec, frame: int = 0,
              camera: int = 0) -> np.ndarray:
    """Poisson shot noise + Gaussian read noise, clamped to [0, 1].

    The generator is seeded per (frame, camera) so realizations differ
    across time and view but reproduce exactly for the same triple.
    """
    rng = np.random.default_rng([spec.seed, frame, camera])
    img = np.asarray(image, dtype=np.float64)
    shot = rng.poisson(img * spec.poisson_photons) / spec.poisson_photons
    out = shot + rng.normal(0.0, spec.gaussian_sigma, size=img.shape)
    return np.clip(out, 0.0, 1.0)


def jitter_points(scene: SyntheticScene, sigma_world: float,
                  keep_fraction: float, seed: int) -> PointCloudInit:
    """SfM-surrogate: subsampled, perturbed ground-truth centers."""
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must be in (0, 1]")
    rng = np.random.default_rng([seed, 77])
    n = scene.gaussians.n
    k = int(round(keep_fraction * n))
    if k < 1:
        raise ValueError("subsampling produced an empty point set")
    idx = rng.choice(n, size=k, replace=False)
    points = scene.gaussians.positions[idx] + rng.normal(
        0.0, sigma_world, size=(k, 3))
    centers = np.mean([c.center for c in scene.cameras], axis=0)
    direction = scene.gaussians.positions[idx] - centers
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    colors = np.clip(eval_sh(scene.gaussians.sh_coeffs[idx],
                             scene.gaussians.sh_degree, direction), 0.0, 1.0)
    return PointCloudInit(points=points, colors=colors)


def export_dataset(scene: SyntheticScene, spec, out_dir, init: PointCloudInit):
    """Write one dataset variant: images, rig, masks, and init points.

    spec None writes the clean renders; otherwise noise is applied per
    (frame, camera). Layout: cam{c}/frame{t}.ppm, masks/cam{c}.pgm,
    rig.json, points.json.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    io.save_rig(out / "rig.json", scene.cameras)
    io.save_points(out / "points.json", init.points, init.colors)
    for c, cam in enumerate(scene.cameras):
        cam_dir = out / f"cam{c}"
        cam_dir.mkdir(exist_ok=True)
        io.write_pgm(out / "masks" / f"cam{c}.pgm", scene.masks[c])
        for t in range(scene.frames):
            # Noise applies to the quantized display image, so the
            # noise-free limit reproduces the clean files exactly.
            img = io.quantize_image(render_clean(scene, t, c))
            if spec is not None:
                img = add_noise(img, spec, frame=t, camera=c)
            io.write_ppm(cam_dir / f"frame{t}.ppm", img)
    return out

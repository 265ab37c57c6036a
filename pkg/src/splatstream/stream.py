"""Online reconstruction pipeline: first-frame joint optimization with
densification and the residual freeze rule, then per-frame sequential
optimization with new-Gaussian spawning and propagation.

Each training iteration renders one camera (seeded epoch shuffle), compares
against the restored target (observation minus that camera's residual map),
and steps the Gaussians and, when unfrozen, the residual map jointly.
"""

import csv
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import io, metrics
from .optimize import AdamState, adam_step, lr_schedule, total_loss
from .renderer import Camera, expected_depth, render, render_backward
from .scene import GaussianSet, init_gaussians, inverse_sigmoid, rgb_to_sh0


@dataclass
class StreamConfig:
    seed: int = 0
    sh_degree: int = 3
    use_residual_maps: bool = True
    reuse_new_gaussians: bool = True
    first_frame_iters: int = 1500
    densify_until: int = 750
    densify_interval: int = 100
    densify_grad_threshold: float = 4e-5
    prune_opacity_threshold: float = 0.005
    sequential_iters_deform: int = 150
    sequential_iters_new: int = 100
    residual_freeze_until_densify: bool = True
    lambda_dssim: float = 0.2
    lambda_opa: float = 0.01
    lambda_res: float = 0.01
    residual_lr_first: tuple = (1e-3, 1e-5)
    residual_lr_seq: tuple = (1e-4, 1e-6)
    spawn_cap: int = 500
    spawn_percentile: float = 99.5
    spawn_error_floor: float = 0.02
    lr_position: tuple = (1.6e-4, 1.6e-6)
    lr_sh: float = 2.5e-3
    lr_opacity: float = 5e-2
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    seq_lr_scale: float = 1.0
    seq_optimize_sh: bool = True
    clone_scale_percent: float = 0.01
    split_scale_shrink: float = 1.6

    def __post_init__(self):
        if self.densify_until > self.first_frame_iters:
            raise ValueError("densify_until must not exceed first_frame_iters")
        for name in ("first_frame_iters", "densify_interval",
                     "sequential_iters_deform", "sequential_iters_new"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @classmethod
    def from_dict(cls, cfg: dict) -> "StreamConfig":
        names = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in cfg.items() if k in names}
        for key in ("residual_lr_first", "residual_lr_seq", "lr_position"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


class ResidualMapSet:
    """One learnable (H, W, 3) residual image per training camera."""

    def __init__(self, maps):
        self.maps = list(maps)

    @classmethod
    def zeros(cls, cameras) -> "ResidualMapSet":
        return cls(np.zeros((c.height, c.width, 3)) for c in cameras)

    def __len__(self):
        return len(self.maps)

    def __getitem__(self, i):
        return self.maps[i]

    def copy(self) -> "ResidualMapSet":
        return ResidualMapSet(m.copy() for m in self.maps)


@dataclass
class FrameResult:
    gaussians: GaussianSet        # set used to render this frame
    propagated: GaussianSet       # set handed to the next frame
    residual_maps: ResidualMapSet
    rendered: list                # per train view (H, W, 3)
    n_gaussians: int
    n_spawned: int
    loss_log: list = field(default_factory=list)

    def __post_init__(self):
        if self.n_gaussians <= 0:
            raise ValueError("FrameResult requires a non-empty Gaussian set")


def restore_target(observation: np.ndarray, residual: np.ndarray) -> np.ndarray:
    """Observation minus residual, with the decomposition exactly invertible.

    Plain float subtraction occasionally rounds so that
    (obs - residual) + residual != obs at the last bit. Such entries are
    repaired: first by a 1-ulp nudge of the restored value, otherwise by
    coarsening the restored mantissa a little and snapping the residual
    (in place) to the exact difference. Observations are dyadic image
    values (see io.QUANT), which is what makes the exact snap possible;
    the residual moves by at most a few ulp. The returned target therefore
    always recomposes to the observation bit-for-bit.
    """
    if observation.shape != residual.shape:
        raise ValueError(f"shape mismatch: {observation.shape} vs {residual.shape}")
    restored = observation - residual
    bad = np.nonzero((restored + residual != observation).ravel())[0]
    if bad.size:
        r_flat = restored.reshape(-1)
        m_flat = residual.reshape(-1)
        o_flat = observation.reshape(-1)
        for i in bad:
            if not _repair_entry(r_flat, m_flat, o_flat, i):
                raise ArithmeticError(
                    f"cannot make restored+residual exact at flat index {i}")
    return restored


def _round_mantissa(x: float, bits: int = 51) -> float:
    mant, exp = np.frexp(x)
    scale = float(2 ** bits)
    return float(np.ldexp(np.round(mant * scale) / scale, exp))


def _repair_entry(r_flat, m_flat, o_flat, i) -> bool:
    o = o_flat[i]
    m = m_flat[i]
    r = o - m
    for r2 in (np.nextafter(r, np.inf), np.nextafter(r, -np.inf)):
        if r2 + m == o:
            r_flat[i] = r2
            return True
    # With a 51-bit restored mantissa, o - r2 is exact for dyadic image
    # values, so the snapped residual recomposes exactly.
    r2 = _round_mantissa(r)
    m2 = o - r2
    if r2 + m2 == o:
        r_flat[i] = r2
        m_flat[i] = m2
        return True
    return False


def scene_extent_from_cameras(cameras) -> float:
    centers = np.array([c.center for c in cameras])
    mean = centers.mean(axis=0)
    return 1.1 * float(np.linalg.norm(centers - mean, axis=1).max())


class _GaussianAdam:
    """Adam states for the five raw parameter groups of one GaussianSet."""

    GROUPS = ("positions", "rotations", "log_scales", "opacity_logits",
              "sh_coeffs")

    def __init__(self, g: GaussianSet):
        self.states = {name: AdamState.zeros_like(name, arr)
                       for name, arr in g.raw_arrays().items()}

    def step(self, g: GaussianSet, grads, lrs: dict, active=None):
        for name in self.GROUPS:
            if active is not None and name not in active:
                continue
            new = adam_step(self.states[name], getattr(g, name),
                            getattr(grads, name), lrs[name])
            setattr(g, name, new)

    def remap(self, g: GaussianSet, source_rows: np.ndarray):
        """Carry moments through a densify/prune row remapping.

        source_rows[i] >= 0 copies that old row's moments; -1 zeroes them.
        """
        for name, arr in g.raw_arrays().items():
            state = self.states[name]
            m = np.zeros_like(arr, dtype=np.float64)
            v = np.zeros_like(arr, dtype=np.float64)
            keep = source_rows >= 0
            m[keep] = state.m[source_rows[keep]]
            v[keep] = state.v[source_rows[keep]]
            state.m, state.v = m, v


def _gaussian_lrs(cfg: StreamConfig, step: int, total: int, extent: float,
                  scale: float = 1.0) -> dict:
    pos = lr_schedule(step, total, cfg.lr_position[0] * extent,
                      cfg.lr_position[1] * extent)
    return {
        "positions": pos * scale,
        "rotations": cfg.lr_rotation * scale,
        "log_scales": cfg.lr_scale * scale,
        "opacity_logits": cfg.lr_opacity * scale,
        "sh_coeffs": cfg.lr_sh * scale,
    }


class _DensifyStats:
    """Accumulated pixel-gradient norms and view counts per Gaussian."""

    def __init__(self, n: int):
        self.grad_accum = np.zeros(n)
        self.seen = np.zeros(n, dtype=np.int64)
        self.max_radius = np.zeros(n)

    def update(self, grads, proj):
        visible = ~proj.culled
        self.grad_accum += grads.pixel_grad_norm
        self.seen += visible
        self.max_radius = np.maximum(self.max_radius, proj.radius)

    def reset(self, n: int):
        self.__init__(n)


def densify_and_prune(g: GaussianSet, stats: _DensifyStats, cfg: StreamConfig,
                      scene_extent: float, rng: np.random.Generator):
    """Clone/split high-gradient Gaussians, prune transparent ones.

    Returns (new_set, source_rows) where source_rows maps each new row to
    the old row whose optimizer moments it inherits (-1 for fresh rows:
    clone copies and split children). No radius pruning, no opacity reset.
    """
    mean_grad = stats.grad_accum / np.maximum(stats.seen, 1)
    over = mean_grad > cfg.densify_grad_threshold
    max_scale = np.exp(g.log_scales).max(axis=1)
    big = max_scale > cfg.clone_scale_percent * scene_extent
    clone_ids = np.nonzero(over & ~big)[0]
    split_ids = np.nonzero(over & big)[0]

    keep_mask = np.ones(g.n, dtype=bool)
    keep_mask[split_ids] = False  # split parents are replaced by children

    parts = {name: [arr[keep_mask]] for name, arr in g.raw_arrays().items()}
    source = [np.nonzero(keep_mask)[0]]

    if clone_ids.size:
        for name, arr in g.raw_arrays().items():
            parts[name].append(arr[clone_ids].copy())
        source.append(np.full(clone_ids.size, -1, dtype=np.int64))

    if split_ids.size:
        from .scene import quat_to_rotmat

        n_children = 2
        quat = g.rotations[split_ids]
        quat = quat / np.linalg.norm(quat, axis=1, keepdims=True)
        rot = quat_to_rotmat(quat)
        scales = np.exp(g.log_scales[split_ids])
        samples = rng.standard_normal((split_ids.size, n_children, 3)) * scales[:, None, :]
        offsets = np.einsum("nij,ncj->nci", rot, samples)
        child_pos = (g.positions[split_ids][:, None, :] + offsets).reshape(-1, 3)
        child_log_scales = np.repeat(
            g.log_scales[split_ids] - np.log(cfg.split_scale_shrink),
            n_children, axis=0)
        parts["positions"].append(child_pos)
        parts["log_scales"].append(child_log_scales)
        for name in ("rotations", "opacity_logits", "sh_coeffs"):
            parts[name].append(np.repeat(g.raw_arrays()[name][split_ids],
                                         n_children, axis=0))
        source.append(np.full(split_ids.size * n_children, -1, dtype=np.int64))

    assembled = {name: np.concatenate(chunks) for name, chunks in parts.items()}
    source_rows = np.concatenate(source)

    # Opacity pruning on the assembled set (L_opa replaces opacity resets).
    opacity = 1.0 / (1.0 + np.exp(-assembled["opacity_logits"]))
    alive = opacity >= cfg.prune_opacity_threshold
    if not alive.any():
        raise RuntimeError("densify_and_prune removed every Gaussian")
    new_g = GaussianSet(
        positions=assembled["positions"][alive],
        rotations=assembled["rotations"][alive],
        log_scales=assembled["log_scales"][alive],
        opacity_logits=assembled["opacity_logits"][alive],
        sh_coeffs=assembled["sh_coeffs"][alive],
        sh_degree=g.sh_degree,
    )
    return new_g, source_rows[alive]


def spawn_new_gaussians(g: GaussianSet, error_images, observations, auxes,
                        cameras, cfg: StreamConfig, rng: np.random.Generator):
    """Back-project high-error pixels into new Gaussians.

    Pixels above the per-view error percentile (and above an absolute
    error floor, so converged views spawn nothing) are placed on their
    camera ray at the rendered depth (alpha-weighted contributor mean;
    scene median depth under thin coverage), colored from the observation.
    Returns a GaussianSet fragment or None when nothing exceeds threshold.
    """
    candidates = []  # (view, y, x)
    for v, err_img in enumerate(error_images):
        err = err_img.mean(axis=2)
        thresh = max(np.percentile(err, cfg.spawn_percentile),
                     cfg.spawn_error_floor)
        ys, xs = np.nonzero(err > thresh)
        for y, x in zip(ys, xs):
            candidates.append((v, int(y), int(x)))
    if not candidates:
        return None
    if len(candidates) > cfg.spawn_cap:
        pick = rng.choice(len(candidates), size=cfg.spawn_cap, replace=False)
        candidates = [candidates[i] for i in sorted(pick)]

    depth_maps = {}
    alpha_maps = {}
    median_depth = {}
    for v, aux in enumerate(auxes):
        depth_maps[v], alpha_maps[v] = expected_depth(aux, cameras[v])
        vis = ~aux.proj.culled
        median_depth[v] = float(np.median(aux.proj.depth[vis])) if vis.any() else 1.0

    positions, colors, log_scales = [], [], []
    for v, y, x in candidates:
        cam = cameras[v]
        z = depth_maps[v][y, x] if alpha_maps[v][y, x] >= 0.5 else median_depth[v]
        p_cam = np.array([(x - cam.cx) / cam.fx * z,
                          (y - cam.cy) / cam.fy * z, z])
        positions.append(cam.rotation.T @ (p_cam - cam.translation))
        colors.append(observations[v][y, x])
        log_scales.append(np.log(max(z / cam.fx, 1e-6)))

    k = len(positions)
    n_coeffs = (g.sh_degree + 1) ** 2
    sh = np.zeros((k, 3, n_coeffs))
    sh[:, :, 0] = rgb_to_sh0(np.array(colors))
    rot = np.zeros((k, 4))
    rot[:, 0] = 1.0
    return GaussianSet(
        positions=np.array(positions),
        rotations=rot,
        log_scales=np.repeat(np.array(log_scales)[:, None], 3, axis=1),
        opacity_logits=np.full(k, inverse_sigmoid(0.1)),
        sh_coeffs=sh,
        sh_degree=g.sh_degree,
    )


def concat_sets(a: GaussianSet, b: GaussianSet) -> GaussianSet:
    if a.sh_degree != b.sh_degree:
        raise ValueError("sh_degree mismatch")
    return GaussianSet(
        positions=np.vstack([a.positions, b.positions]),
        rotations=np.vstack([a.rotations, b.rotations]),
        log_scales=np.vstack([a.log_scales, b.log_scales]),
        opacity_logits=np.concatenate([a.opacity_logits, b.opacity_logits]),
        sh_coeffs=np.vstack([a.sh_coeffs, b.sh_coeffs]),
        sh_degree=a.sh_degree,
    )


class _CameraSchedule:
    """Deterministic seeded shuffle over cameras, one fresh epoch at a time."""

    def __init__(self, rng: np.random.Generator, n: int):
        self.rng = rng
        self.n = n
        self.queue = []

    def next(self) -> int:
        if not self.queue:
            self.queue = list(self.rng.permutation(self.n))
        return int(self.queue.pop(0))


def _target_for(obs, maps, cam_idx, cfg):
    if cfg.use_residual_maps:
        return restore_target(obs[cam_idx], maps[cam_idx])
    return obs[cam_idx]


def train_first_frame(observations, init, cameras, cfg: StreamConfig):
    """Joint first-frame optimization of Gaussians and residual maps.

    Residual maps start at zero and stay frozen (no optimizer step) until
    the first densification event. Densify/prune runs every
    densify_interval iterations up to densify_until. Returns
    (gaussians, residual_maps, log).
    """
    if len(cameras) < 2:
        raise ValueError("insufficient views")
    if len(observations) != len(cameras):
        raise ValueError("one observation per camera required")
    rng = np.random.default_rng([cfg.seed, 0])
    schedule = _CameraSchedule(rng, len(cameras))
    extent = scene_extent_from_cameras(cameras)

    g = init_gaussians(init, cfg.sh_degree)
    adam = _GaussianAdam(g)
    maps = ResidualMapSet.zeros(cameras)
    res_states = [AdamState.zeros_like(f"residual{v}", m)
                  for v, m in enumerate(maps.maps)]
    frozen = cfg.residual_freeze_until_densify
    stats = _DensifyStats(g.n)
    zero_res = [np.zeros_like(m) for m in maps.maps]

    log = {"losses": [], "densify_events": [],
           "pre_densify_snapshot": None, "pre_densify_iteration": None}

    for it in range(cfg.first_frame_iters):
        v = schedule.next()
        img, aux = render(g, cameras[v])
        residual = maps[v] if cfg.use_residual_maps else zero_res[v]
        target = _target_for(observations, maps, v, cfg)
        breakdown, d_pred, d_logits, d_residual = total_loss(
            img.rgb, target, g, residual, "first",
            lambda_dssim=cfg.lambda_dssim, lambda_opa=cfg.lambda_opa,
            lambda_res=cfg.lambda_res)
        grads = render_backward(g, cameras[v], aux, d_pred)
        grads.opacity_logits = grads.opacity_logits + d_logits
        stats.update(grads, aux.proj)
        adam.step(g, grads, _gaussian_lrs(cfg, it, cfg.first_frame_iters, extent))
        if cfg.use_residual_maps and not frozen:
            lr = lr_schedule(it, cfg.first_frame_iters,
                             cfg.residual_lr_first[0], cfg.residual_lr_first[1])
            maps.maps[v] = adam_step(res_states[v], maps[v], d_residual, lr)
        log["losses"].append(breakdown.total)

        if (it + 1) % cfg.densify_interval == 0 and (it + 1) <= cfg.densify_until:
            if log["pre_densify_snapshot"] is None:
                log["pre_densify_snapshot"] = g.copy()
                log["pre_densify_iteration"] = it
            n_before = g.n
            g, source_rows = densify_and_prune(g, stats, cfg, extent, rng)
            adam.remap(g, source_rows)
            stats.reset(g.n)
            log["densify_events"].append((it, n_before, g.n))
            frozen = False  # densification has started: residuals unfreeze

    return g, maps, log


def train_next_frame(g_prev: GaussianSet, maps_prev: ResidualMapSet,
                     observations, cameras, cfg: StreamConfig,
                     frame_index: int) -> FrameResult:
    """One sequential frame: deform existing Gaussians, then spawn and
    optimize new ones; residual maps carry over and keep adapting."""
    if len(maps_prev) != len(cameras):
        raise ValueError("camera set mismatch with maps")
    if len(observations) != len(cameras):
        raise ValueError("one observation per camera required")
    rng = np.random.default_rng([cfg.seed, frame_index])
    schedule = _CameraSchedule(rng, len(cameras))
    extent = scene_extent_from_cameras(cameras)

    g = g_prev.copy()
    maps = maps_prev.copy()
    # Residual optimizer moments restart at each frame boundary.
    res_states = [AdamState.zeros_like(f"residual{v}", m)
                  for v, m in enumerate(maps.maps)]
    zero_res = [np.zeros_like(m) for m in maps.maps]
    total_res_iters = cfg.sequential_iters_deform + cfg.sequential_iters_new
    losses = []

    def residual_step(v, d_residual, step):
        lr = lr_schedule(step, total_res_iters,
                         cfg.residual_lr_seq[0], cfg.residual_lr_seq[1])
        maps.maps[v] = adam_step(res_states[v], maps[v], d_residual, lr)

    # Stage 1: deform all existing Gaussians.
    adam = _GaussianAdam(g)
    active = set(_GaussianAdam.GROUPS)
    if not cfg.seq_optimize_sh:
        active.discard("sh_coeffs")
    for it in range(cfg.sequential_iters_deform):
        v = schedule.next()
        img, aux = render(g, cameras[v])
        residual = maps[v] if cfg.use_residual_maps else zero_res[v]
        target = _target_for(observations, maps, v, cfg)
        breakdown, d_pred, _, d_residual = total_loss(
            img.rgb, target, g, residual, "sequential",
            lambda_dssim=cfg.lambda_dssim, lambda_res=cfg.lambda_res)
        grads = render_backward(g, cameras[v], aux, d_pred)
        adam.step(g, grads,
                  _gaussian_lrs(cfg, it, cfg.sequential_iters_deform, extent,
                                cfg.seq_lr_scale), active)
        if cfg.use_residual_maps:
            residual_step(v, d_residual, it)
        losses.append(breakdown.total)

    # Spawn from end-of-stage-1 error images.
    error_images = []
    auxes = []
    for v, cam in enumerate(cameras):
        img, aux = render(g, cam)
        target = _target_for(observations, maps, v, cfg)
        error_images.append(np.abs(img.rgb - target))
        auxes.append(aux)
    new_g = spawn_new_gaussians(g, error_images, observations, auxes,
                                cameras, cfg, rng)
    n_spawned = 0 if new_g is None else new_g.n

    # Stage 2: optimize only the new Gaussians (and residual maps).
    if new_g is not None:
        combined = concat_sets(g, new_g)
        new_adam = _GaussianAdam(new_g)
        n_old = g.n
        for it in range(cfg.sequential_iters_new):
            v = schedule.next()
            img, aux = render(combined, cameras[v])
            residual = maps[v] if cfg.use_residual_maps else zero_res[v]
            target = _target_for(observations, maps, v, cfg)
            breakdown, d_pred, _, d_residual = total_loss(
                img.rgb, target, combined, residual, "sequential",
                lambda_dssim=cfg.lambda_dssim, lambda_res=cfg.lambda_res)
            grads = render_backward(combined, cameras[v], aux, d_pred)
            new_slice = _slice_gradients(grads, n_old)
            new_adam.step(new_g, new_slice,
                          _gaussian_lrs(cfg, it, cfg.sequential_iters_new,
                                        extent, cfg.seq_lr_scale))
            _write_back(combined, new_g, n_old)
            if cfg.use_residual_maps:
                residual_step(v, d_residual, cfg.sequential_iters_deform + it)
            losses.append(breakdown.total)
        render_set = combined
    else:
        render_set = g

    rendered = [np.clip(render(render_set, cam)[0].rgb, 0.0, 1.0)
                for cam in cameras]
    propagated = render_set if (cfg.reuse_new_gaussians or new_g is None) else g
    return FrameResult(gaussians=render_set, propagated=propagated,
                       residual_maps=maps, rendered=rendered,
                       n_gaussians=render_set.n, n_spawned=n_spawned,
                       loss_log=losses)


def _slice_gradients(grads, n_old):
    class _Slice:
        pass

    out = _Slice()
    for name in _GaussianAdam.GROUPS:
        setattr(out, name, getattr(grads, name)[n_old:])
    return out


def _write_back(combined: GaussianSet, new_g: GaussianSet, n_old: int):
    for name in _GaussianAdam.GROUPS:
        getattr(combined, name)[n_old:] = getattr(new_g, name)


class OrderedFrameSource:
    """Sequential access to per-frame observations (no lookahead).

    frame(t) may only be called with t equal to the number of frames
    already consumed; anything else raises, enforcing the online contract.
    """

    def __init__(self, loader, n_frames: int):
        self._loader = loader
        self.n_frames = n_frames
        self._cursor = 0

    def frame(self, t: int):
        if t != self._cursor:
            raise RuntimeError(
                f"online contract violated: frame {t} requested, "
                f"expected {self._cursor}")
        self._cursor += 1
        return self._loader(t)


@dataclass
class DatasetSource:
    """A dataset directory opened for sequential training."""

    source: OrderedFrameSource
    cameras: list          # training cameras
    camera_indices: list   # their indices in the rig
    masks: list            # per training camera (H, W) bool
    init_points: object    # PointCloudInit
    n_frames: int


def open_dataset(dataset_dir, eval_cameras=(), max_frames=None) -> DatasetSource:
    """Open an exported dataset for training, excluding held-out cameras."""
    from .scene import PointCloudInit

    root = Path(dataset_dir)
    rig = io.load_rig(root / "rig.json")
    train_idx = [i for i in range(len(rig)) if i not in set(eval_cameras)]
    if len(train_idx) < 2:
        raise io.DataError("insufficient views after excluding eval cameras")
    cameras = [rig[i] for i in train_idx]
    masks = [io.read_pgm(root / "masks" / f"cam{i}.pgm") for i in train_idx]
    pts, cols = io.load_points(root / "points.json")
    n_frames = 0
    while (root / "cam0" / f"frame{n_frames}.ppm").exists():
        n_frames += 1
    if n_frames == 0:
        raise io.DataError(f"{root}: no frames found")
    if max_frames is not None:
        n_frames = min(n_frames, max_frames)

    def loader(t):
        return [io.read_ppm(root / f"cam{i}" / f"frame{t}.ppm")
                for i in train_idx]

    return DatasetSource(
        source=OrderedFrameSource(loader, n_frames),
        cameras=cameras, camera_indices=train_idx, masks=masks,
        init_points=PointCloudInit(pts, cols), n_frames=n_frames)


def run_stream(dataset: DatasetSource, cfg: StreamConfig, out_dir=None,
               strip_residual=False, retain_results=True):
    """Train frame 0 then every sequential frame, in order.

    When out_dir is given, writes checkpoint_{t:04d}.or2g per frame plus
    metrics.csv (frame, psnr, ssim, mtv_running, n_gaussians, n_spawned)
    and timings.csv (frame, wall_ms; kept separate so metrics.csv is
    byte-reproducible across runs). strip_residual drops the residual maps
    from checkpoints (the deployment format; restore then needs a run
    trained without it). retain_results=False frees older frames' arrays
    once they are checkpointed, keeping memory flat on long streams.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    cameras = dataset.cameras
    results = []
    metrics_rows = []
    timing_rows = []
    prev_rendered = None
    mtv_sum = np.zeros(len(cameras))
    mtv_pairs = 0

    for t in range(dataset.n_frames):
        t0 = time.perf_counter()
        obs = dataset.source.frame(t)
        if t == 0:
            g, maps, log = train_first_frame(obs, dataset.init_points,
                                             cameras, cfg)
            rendered = [np.clip(render(g, cam)[0].rgb, 0.0, 1.0)
                        for cam in cameras]
            result = FrameResult(gaussians=g, propagated=g, residual_maps=maps,
                                 rendered=rendered, n_gaussians=g.n,
                                 n_spawned=0, loss_log=log["losses"])
            result.first_frame_log = log
        else:
            prev = results[-1]
            result = train_next_frame(prev.propagated, prev.residual_maps,
                                      obs, cameras, cfg, frame_index=t)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        results.append(result)

        mean_psnr = float(np.mean([
            metrics.psnr(result.rendered[v], obs[v])
            for v in range(len(cameras))]))
        mean_ssim = float(np.mean([
            metrics.ssim(result.rendered[v], obs[v])
            for v in range(len(cameras))]))
        if prev_rendered is not None:
            for v in range(len(cameras)):
                m = dataset.masks[v]
                mtv_sum[v] += np.abs(
                    result.rendered[v][m] - prev_rendered[v][m]).mean()
            mtv_pairs += 1
        mtv_running = float(100.0 * mtv_sum.mean() / mtv_pairs) if mtv_pairs else 0.0
        prev_rendered = result.rendered

        metrics_rows.append((t, mean_psnr, mean_ssim, mtv_running,
                             result.n_gaussians, result.n_spawned))
        timing_rows.append((t, wall_ms))

        if out is not None:
            maps = None if strip_residual else result.residual_maps.maps
            io.write_checkpoint(out / f"checkpoint_{t:04d}.or2g",
                                result.gaussians, maps)
        if not retain_results and len(results) >= 2:
            old = results[-2]
            old.gaussians = old.propagated = None
            old.rendered = old.residual_maps = None

    if out is not None:
        with open(out / "metrics.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["frame", "psnr", "ssim", "mtv_running",
                        "n_gaussians", "n_spawned"])
            for row in metrics_rows:
                w.writerow([row[0], f"{row[1]:.6f}", f"{row[2]:.6f}",
                            f"{row[3]:.6f}", row[4], row[5]])
        with open(out / "timings.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["frame", "wall_ms"])
            for t_i, ms in timing_rows:
                w.writerow([t_i, f"{ms:.1f}"])
    return results

"""Online dynamic 3D Gaussian splatting with learnable per-view residual
maps that absorb time-varying observation error, plus the synthetic
multi-view benchmark used to measure the temporal-consistency effect."""

from .metrics import StaticMask, mtv, psnr, ssim, st_slice
from .optimize import (
    AdamState, LossBreakdown, adam_step, dssim_loss, l1_loss, lr_schedule,
    opacity_reg, residual_reg, total_loss,
)
from .renderer import (
    Camera, GaussianGradients, RenderAux, RenderedImage, project, render,
    render_backward,
)
from .scene import (
    ActivatedGaussians, GaussianSet, PointCloudInit, activate, covariance3d,
    eval_sh, init_gaussians,
)
from .stream import (
    FrameResult, OrderedFrameSource, ResidualMapSet, StreamConfig,
    densify_and_prune, open_dataset, restore_target, run_stream,
    spawn_new_gaussians, train_first_frame, train_next_frame,
)
from .synth import (
    NoiseSpec, SyntheticScene, add_noise, export_dataset, jitter_points,
    make_scene, render_clean,
)

__version__ = "0.1.0"

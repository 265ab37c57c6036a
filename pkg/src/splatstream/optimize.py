"""Loss functions with analytic gradients, Adam, and learning-rate decay."""

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .scene import GaussianSet, sigmoid

# Training loss weights. The D-SSIM mix follows the splatting baseline the
# regularizers are measured against; both regularizer weights are 0.01.
LAMBDA_DSSIM = 0.2
LAMBDA_OPACITY = 0.01
LAMBDA_RESIDUAL = 0.01

# SSIM window: 11x11 Gaussian, sigma 1.5, standard stabilizers.
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def l1_loss(pred: np.ndarray, target: np.ndarray):
    """Mean absolute error and its gradient wrt pred (0 at exact ties)."""
    _check_same_shape(pred, target)
    diff = pred - target
    count = diff.size
    value = float(np.abs(diff).sum() / count)
    grad = np.sign(diff) / count
    return value, grad


def _ssim_kernel():
    half = SSIM_WINDOW // 2
    x = np.arange(SSIM_WINDOW, dtype=np.float64) - half
    k = np.exp(-(x ** 2) / (2 * SSIM_SIGMA ** 2))
    return k / k.sum()


_KERNEL = _ssim_kernel()
_PAD = SSIM_WINDOW // 2


def _sep_filter(img: np.ndarray) -> np.ndarray:
    """11x11 Gaussian window mean with reflection padding, spatial axes only."""
    out = correlate1d(img, _KERNEL, axis=0, mode="mirror")
    return correlate1d(out, _KERNEL, axis=1, mode="mirror")


def _fold_pad_adjoint_1d(g: np.ndarray, axis: int) -> np.ndarray:
    """Adjoint of reflect-padding by _PAD along `axis`."""
    g = np.moveaxis(g, axis, 0)
    n = g.shape[0] - 2 * _PAD
    out = g[_PAD:_PAD + n].copy()
    for i in range(_PAD):
        out[_PAD - i] += g[i]              # left pad index i mirrors source PAD-i
        out[n - 2 - i] += g[n + _PAD + i]  # right pad index mirrors n-2-i
    return np.moveaxis(out, 0, axis)


def _filter_adjoint_1d(g: np.ndarray, axis: int) -> np.ndarray:
    # Adjoint of valid correlation is full convolution; the symmetric kernel
    # makes it a zero-padded correlation, then the padding is folded back.
    pad = [(0, 0)] * g.ndim
    pad[axis] = (_PAD, _PAD)
    full = correlate1d(np.pad(g, pad), _KERNEL, axis=axis, mode="constant")
    return _fold_pad_adjoint_1d(full, axis)


def _sep_filter_adjoint(g: np.ndarray) -> np.ndarray:
    out = _filter_adjoint_1d(g, axis=1)
    return _filter_adjoint_1d(out, axis=0)


def _ssim_core(x: np.ndarray, y: np.ndarray, want_grads: bool):
    """Windowed SSIM mean over pixels/channels; optionally both gradients.

    Works on (H, W) or (H, W, C) arrays. Gradient derivation treats the
    SSIM map as a function of the five windowed moments
    (mx, my, E[x^2], E[y^2], E[xy]) and chains through the window filter's
    adjoint, so reflection padding is differentiated exactly.
    """
    _check_same_shape(x, y)
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ValueError(
            f"image smaller than SSIM window: {x.shape[:2]} < {SSIM_WINDOW}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mx = _sep_filter(x)
    my = _sep_filter(y)
    exx = _sep_filter(x * x)
    eyy = _sep_filter(y * y)
    exy = _sep_filter(x * y)

    a1 = 2 * mx * my + SSIM_C1
    a2 = 2 * (exy - mx * my) + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = (exx - mx * mx) + (eyy - my * my) + SSIM_C2
    d = b1 * b2
    s = (a1 * a2) / d
    value = float(s.mean())
    if not want_grads:
        return value, None, None

    # dL/ds for L = mean(s): uniform weight.
    w = 1.0 / s.size
    ds_da1 = a2 / d
    ds_da2 = a1 / d
    ds_db1 = -s / b1
    ds_db2 = -s / b2

    # Moment-space partials.
    g_mx = w * (ds_da1 * 2 * my + ds_da2 * (-2 * my) + ds_db1 * 2 * mx + ds_db2 * (-2 * mx))
    g_my = w * (ds_da1 * 2 * mx + ds_da2 * (-2 * mx) + ds_db1 * 2 * my + ds_db2 * (-2 * my))
    g_exx = w * ds_db2
    g_eyy = w * ds_db2
    g_exy = w * ds_da2 * 2

    grad_x = _sep_filter_adjoint(g_mx) + 2 * x * _sep_filter_adjoint(g_exx) \
        + y * _sep_filter_adjoint(g_exy)
    grad_y = _sep_filter_adjoint(g_my) + 2 * y * _sep_filter_adjoint(g_eyy) \
        + x * _sep_filter_adjoint(g_exy)
    return value, grad_x, grad_y


def ssim_value(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM score (shared definition with the D-SSIM loss)."""
    value, _, _ = _ssim_core(a, b, want_grads=False)
    return value


def dssim_loss(pred: np.ndarray, target: np.ndarray):
    """(1 - SSIM)/2 and its gradient wrt pred."""
    value, grad_pred, _ = _ssim_core(pred, target, want_grads=True)
    return (1.0 - value) / 2.0, -0.5 * grad_pred


def _dssim_loss_both(pred: np.ndarray, target: np.ndarray):
    value, grad_pred, grad_target = _ssim_core(pred, target, want_grads=True)
    return (1.0 - value) / 2.0, -0.5 * grad_pred, -0.5 * grad_target


def opacity_reg(g: GaussianSet):
    """L1 norm of the activated opacities, normalized per Gaussian.

    The per-Gaussian mean keeps the 0.01 weight meaningful at any scene
    size; an unnormalized sum at that weight swamps the image terms and
    collapses every opacity.
    """
    op = sigmoid(g.opacity_logits)
    n = op.size
    return float(op.sum() / n), op * (1.0 - op) / n


def residual_reg(residual: np.ndarray):
    """Mean absolute residual value and its subgradient (0 at zeros)."""
    count = residual.size
    return float(np.abs(residual).sum() / count), np.sign(residual) / count


@dataclass
class LossBreakdown:
    l1: float
    dssim: float
    opacity_reg: float
    residual_reg: float
    total: float


def total_loss(pred: np.ndarray, restored_target: np.ndarray, g: GaussianSet,
               residual: np.ndarray, mode: str,
               lambda_dssim: float = LAMBDA_DSSIM,
               lambda_opa: float = LAMBDA_OPACITY,
               lambda_res: float = LAMBDA_RESIDUAL):
    """Combined training loss for one view.

    mode "first" includes the opacity regularizer; "sequential" drops it.
    Returns (breakdown, d/dpred, d/dopacity_logits, d/dresidual). The
    residual gradient has two paths: through the restored target
    (restored = observation - residual) and through its own L1 penalty.
    """
    if mode not in ("first", "sequential"):
        raise ValueError(f"unknown mode {mode!r}")
    l1_val, l1_g_pred = l1_loss(pred, restored_target)
    ds_val, ds_g_pred, ds_g_target = _dssim_loss_both(pred, restored_target)
    opa_val, opa_g = opacity_reg(g)
    res_val, res_g = residual_reg(residual)

    w_opa = lambda_opa if mode == "first" else 0.0
    total = ((1 - lambda_dssim) * l1_val + lambda_dssim * ds_val
             + w_opa * opa_val + lambda_res * res_val)
    breakdown = LossBreakdown(l1_val, ds_val, opa_val, res_val, total)

    d_pred = (1 - lambda_dssim) * l1_g_pred + lambda_dssim * ds_g_pred
    d_logits = w_opa * opa_g
    # d(target)/d(residual) = -1; the L1 image term's target gradient is
    # the negated pred gradient, D-SSIM's is computed explicitly.
    d_residual = ((1 - lambda_dssim) * l1_g_pred - lambda_dssim * ds_g_target
                  + lambda_res * res_g)
    return breakdown, d_pred, d_logits, d_residual


@dataclass
class AdamState:
    """First/second moment arrays and step counter for one parameter group."""

    name: str
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, name: str, params: np.ndarray) -> "AdamState":
        return cls(name, np.zeros_like(params, dtype=np.float64),
                   np.zeros_like(params, dtype=np.float64), 0)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray,
              lr: float) -> np.ndarray:
    """One Adam update with bias correction; mutates state, returns params."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError(f"shape mismatch in Adam group {state.name!r}")
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError(f"non-finite gradient in group {state.name!r}")
    state.step += 1
    state.m = ADAM_BETA1 * state.m + (1 - ADAM_BETA1) * grads
    state.v = ADAM_BETA2 * state.v + (1 - ADAM_BETA2) * grads * grads
    m_hat = state.m / (1 - ADAM_BETA1 ** state.step)
    v_hat = state.v / (1 - ADAM_BETA2 ** state.step)
    return params - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def lr_schedule(step: int, total_steps: int, lr_start: float, lr_end: float) -> float:
    """Exponential (log-linear) interpolation from lr_start to lr_end."""
    if total_steps == 0:
        raise ValueError("total_steps must be positive")
    if lr_start <= 0 or lr_end <= 0:
        raise ValueError("learning rates must be positive")
    t = step / total_steps
    return float(lr_start * (lr_end / lr_start) ** t)

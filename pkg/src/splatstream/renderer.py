"""Differentiable splatting of a GaussianSet through a pinhole camera.

Forward: project each Gaussian to a 2D mean and covariance (first-order
EWA), sort by view depth, and alpha-composite front to back per pixel.
Backward: replay the saved contributor lists and push gradients through
every raw parameter analytically, including the SH view-direction path.

Conventions (these are declared, not physical constants): pixel centers
sit at integer coordinates; alpha is clamped at 0.99; contributors below
1/255 alpha are skipped; compositing stops once transmittance drops below
1e-4; a 0.3 px^2 low-pass is added to projected covariances; background
is black.
"""

from dataclasses import dataclass

import numpy as np

from . import _composite
from .scene import (
    ActivatedGaussians, GaussianSet, activate, covariance3d, quat_to_rotmat,
    sh_basis, sh_basis_gradient,
)

ALPHA_CLAMP = 0.99
ALPHA_SKIP = 1.0 / 255.0
T_STOP = _composite.T_STOP
LOWPASS = 0.3
# Bounding boxes extend to 3.5 sigma so that every contributor at the box
# edge already falls below the 1/255 alpha skip; integer box growth then
# never changes the image.
BBOX_SIGMA = 3.5


@dataclass
class Camera:
    """Pinhole camera: world-to-camera rotation/translation + intrinsics."""

    rotation: np.ndarray    # (3, 3) world-to-camera
    translation: np.ndarray  # (3,) so x_cam = R x_world + t
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.rotation.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.max(np.abs(self.rotation @ self.rotation.T - np.eye(3))) > 1e-6:
            raise ValueError("rotation must be orthonormal")
        if self.width < 8 or self.height < 8:
            raise ValueError("image must be at least 8x8")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.near <= 0:
            raise ValueError("near plane must be positive")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass
class Projection:
    """Per-Gaussian screen-space quantities (packed symmetric 2x2s: a, b, c)."""

    mean2d: np.ndarray   # (N, 2) pixels (u=col, v=row)
    cov2d: np.ndarray    # (N, 3) low-passed projected covariance
    conic: np.ndarray    # (N, 3) inverse covariance
    depth: np.ndarray    # (N,) view-space z
    radius: np.ndarray   # (N,) bbox radius in pixels (0 where culled)
    culled: np.ndarray   # (N,) bool
    t_cam: np.ndarray    # (N, 3) camera-space positions
    color: np.ndarray    # (N, 3) SH color toward this camera, clamped
    color_active: np.ndarray  # (N, 3) bool, False where the 0-clamp engaged
    viewdir: np.ndarray  # (N, 3) unit world direction camera->gaussian
    viewdist: np.ndarray  # (N,)


@dataclass
class RenderedImage:
    rgb: np.ndarray    # (H, W, 3)
    alpha: np.ndarray  # (H, W)


@dataclass
class RenderAux:
    """Forward-pass replay state for the backward pass and densify stats.

    Entry arrays are sorted by pixel id, then by view depth within each
    pixel (transmittance is therefore non-increasing along each run).
    """

    n: int
    proj: Projection
    opacities: np.ndarray      # (N,) activated
    entry_pixel: np.ndarray    # (E,) flat pixel index
    entry_gauss: np.ndarray    # (E,) gaussian index
    entry_alpha: np.ndarray    # (E,) composited alpha (after clamp)
    entry_weight: np.ndarray   # (E,) raw gaussian weight exp(-q/2)
    entry_t: np.ndarray        # (E,) transmittance before this contributor
    entry_included: np.ndarray  # (E,) uint8


@dataclass
class GaussianGradients:
    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh_coeffs: np.ndarray
    pixel_grad_norm: np.ndarray  # (N,) ||dL/d(mean2d)|| for this view


def project(act: ActivatedGaussians, camera: Camera) -> Projection:
    """Project activated Gaussians into screen space (first-order EWA)."""
    n = act.positions.shape[0]
    rot = camera.rotation
    t_cam = act.positions @ rot.T + camera.translation
    x, y, z = t_cam[:, 0], t_cam[:, 1], t_cam[:, 2]

    in_front = z > camera.near
    zs = np.where(in_front, z, 1.0)  # keep the math finite for culled rows

    u = camera.fx * x / zs + camera.cx
    v = camera.fy * y / zs + camera.cy
    mean2d = np.stack([u, v], axis=1)

    # cov2d = (J W) Sigma (J W)^T + lowpass, J the projection Jacobian.
    cov3d = covariance3d(act.quaternions, act.scales)
    jw = np.zeros((n, 2, 3), dtype=np.float64)
    jw[:, 0, 0] = camera.fx / zs
    jw[:, 0, 2] = -camera.fx * x / zs ** 2
    jw[:, 1, 1] = camera.fy / zs
    jw[:, 1, 2] = -camera.fy * y / zs ** 2
    m = jw @ rot
    cov_full = m @ cov3d @ np.swapaxes(m, 1, 2)
    a = cov_full[:, 0, 0] + LOWPASS
    b = cov_full[:, 0, 1]
    c = cov_full[:, 1, 1] + LOWPASS
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    cov2d = np.stack([a, b, c], axis=1)

    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = BBOX_SIGMA * np.sqrt(lam_max)

    off_image = ((u + radius < -0.5) | (u - radius > camera.width - 0.5)
                 | (v + radius < -0.5) | (v - radius > camera.height - 0.5))
    culled = ~in_front | (in_front & off_image)
    radius = np.where(culled, 0.0, radius)

    center = camera.center
    delta = act.positions - center
    dist = np.linalg.norm(delta, axis=1)
    dist_safe = np.where(dist > 0, dist, 1.0)
    viewdir = delta / dist_safe[:, None]

    basis = sh_basis(viewdir, act.sh_degree)
    pre = np.einsum("nck,nk->nc", act.sh_coeffs, basis) + 0.5
    color = np.maximum(pre, 0.0)

    return Projection(mean2d=mean2d, cov2d=cov2d, conic=conic, depth=z,
                      radius=radius, culled=culled, t_cam=t_cam, color=color,
                      color_active=pre >= 0.0, viewdir=viewdir, viewdist=dist_safe)


def _build_entries(proj: Projection, opacities: np.ndarray, camera: Camera):
    """Flatten per-Gaussian bounding boxes into per-pixel contributor entries.

    Returns entry arrays grouped by pixel (counting sort) with depth order
    preserved inside each pixel; survivors of the 1/255 alpha skip only.
    """
    visible = np.nonzero(~proj.culled)[0]
    if visible.size == 0:
        empty_i = np.empty(0, dtype=np.int64)
        empty_f = np.empty(0, dtype=np.float64)
        return empty_i, empty_i, empty_f, empty_f

    # Primary key depth, ties broken by storage index.
    order = visible[np.lexsort((visible, proj.depth[visible]))]
    return _composite.rasterize_entries(
        order, proj.mean2d, proj.conic, proj.radius, opacities,
        camera.width, camera.height)


def render(g: GaussianSet, camera: Camera):
    """Render the scene; returns (RenderedImage, RenderAux)."""
    if g.n == 0:
        raise ValueError("empty scene")
    act = activate(g)
    proj = project(act, camera)
    pixel, gid, alpha, weight = _build_entries(proj, act.opacities, camera)
    n_pixels = camera.width * camera.height
    rgb_flat, t_final, t_before, included = _composite.composite_forward(
        pixel, gid, alpha, proj.color, n_pixels)
    image = RenderedImage(
        rgb=rgb_flat.reshape(camera.height, camera.width, 3),
        alpha=(1.0 - t_final).reshape(camera.height, camera.width),
    )
    aux = RenderAux(n=g.n, proj=proj, opacities=act.opacities,
                    entry_pixel=pixel, entry_gauss=gid, entry_alpha=alpha,
                    entry_weight=weight, entry_t=t_before,
                    entry_included=included)
    return image, aux


def _bincount(idx, weights, n):
    return np.bincount(idx, weights=weights, minlength=n)


def render_backward(g: GaussianSet, camera: Camera, aux: RenderAux,
                    dl_dimage: np.ndarray) -> GaussianGradients:
    """Analytic gradients of sum(dl_dimage * image) wrt all raw parameters."""
    if aux.n != g.n:
        raise ValueError("stale aux")
    if dl_dimage.shape != (camera.height, camera.width, 3):
        raise ValueError("dl_dimage shape mismatch")
    n = g.n
    proj = aux.proj
    act_opacity = aux.opacities
    dl_flat = np.ascontiguousarray(dl_dimage.reshape(-1, 3), dtype=np.float64)

    dl_dc, dl_dopacity, dl_dmean2d, dl_dconic = _composite.composite_backward(
        aux.entry_pixel, aux.entry_gauss, aux.entry_alpha, aux.entry_weight,
        aux.entry_t, aux.entry_included, proj.color, act_opacity,
        proj.mean2d, proj.conic, dl_flat, camera.width, n)

    # conic = inv(cov2d): dL/dV = -C G C with full symmetric matrices.
    g_con = np.empty((n, 2, 2), dtype=np.float64)
    g_con[:, 0, 0] = dl_dconic[:, 0]
    g_con[:, 0, 1] = g_con[:, 1, 0] = 0.5 * dl_dconic[:, 1]
    g_con[:, 1, 1] = dl_dconic[:, 2]
    conic_m = np.empty_like(g_con)
    conic_m[:, 0, 0] = proj.conic[:, 0]
    conic_m[:, 0, 1] = conic_m[:, 1, 0] = proj.conic[:, 1]
    conic_m[:, 1, 1] = proj.conic[:, 2]
    g_cov2d = -conic_m @ g_con @ conic_m

    # cov2d = M Sigma M^T + lowpass, with M = J R.
    quat = g.rotations / np.linalg.norm(g.rotations, axis=1, keepdims=True)
    scales = np.exp(g.log_scales)
    rotmat = quat_to_rotmat(quat)
    cov3d = covariance3d(quat, scales)

    x, y, z = proj.t_cam[:, 0], proj.t_cam[:, 1], proj.t_cam[:, 2]
    zs = np.where(proj.depth > camera.near, z, 1.0)
    jw = np.zeros((n, 2, 3), dtype=np.float64)
    jw[:, 0, 0] = camera.fx / zs
    jw[:, 0, 2] = -camera.fx * x / zs ** 2
    jw[:, 1, 1] = camera.fy / zs
    jw[:, 1, 2] = -camera.fy * y / zs ** 2
    m = jw @ camera.rotation

    g_sigma = np.swapaxes(m, 1, 2) @ g_cov2d @ m          # (N, 3, 3)
    g_m = 2.0 * g_cov2d @ m @ cov3d                        # (N, 2, 3)
    g_j = g_m @ camera.rotation.T                          # (N, 2, 3)

    # J's dependence on the camera-space position.
    inv_z2 = 1.0 / zs ** 2
    dl_dtcam = np.zeros((n, 3), dtype=np.float64)
    dl_dtcam[:, 0] = g_j[:, 0, 2] * (-camera.fx * inv_z2)
    dl_dtcam[:, 1] = g_j[:, 1, 2] * (-camera.fy * inv_z2)
    dl_dtcam[:, 2] = (g_j[:, 0, 0] * (-camera.fx * inv_z2)
                      + g_j[:, 1, 1] * (-camera.fy * inv_z2)
                      + g_j[:, 0, 2] * (2 * camera.fx * x / zs ** 3)
                      + g_j[:, 1, 2] * (2 * camera.fy * y / zs ** 3))

    # Projected-mean dependence: u = fx x / z + cx, v = fy y / z + cy.
    dl_dtcam[:, 0] += dl_dmean2d[:, 0] * camera.fx / zs
    dl_dtcam[:, 1] += dl_dmean2d[:, 1] * camera.fy / zs
    dl_dtcam[:, 2] += (dl_dmean2d[:, 0] * (-camera.fx * x * inv_z2)
                       + dl_dmean2d[:, 1] * (-camera.fy * y * inv_z2))

    dl_dpos = dl_dtcam @ camera.rotation

    # Sigma = R diag(s^2) R^T.
    g_rot = 2.0 * g_sigma @ rotmat * (scales ** 2)[:, None, :]
    dl_dscale = 2.0 * scales * np.einsum(
        "nji,njk,nki->ni", rotmat, g_sigma, rotmat)
    dl_dlog_scales = dl_dscale * scales

    dl_dquat_unit = _quat_backward(quat, g_rot)
    raw_norm = np.linalg.norm(g.rotations, axis=1, keepdims=True)
    inner = np.sum(dl_dquat_unit * quat, axis=1, keepdims=True)
    dl_drot = (dl_dquat_unit - quat * inner) / raw_norm

    # SH color: through coefficients and through the view direction.
    basis = sh_basis(proj.viewdir, g.sh_degree)
    dl_dc = dl_dc * proj.color_active
    dl_dsh = dl_dc[:, :, None] * basis[:, None, :]

    dbasis = sh_basis_gradient(proj.viewdir, g.sh_degree)  # (N, K, 3)
    # dL/ddir = sum_ch dl_dc[ch] * sum_k coeff[ch,k] * dbasis[k]
    dl_ddir = np.einsum("nc,nck,nkd->nd", dl_dc, g.sh_coeffs, dbasis)
    # dir = (p - center)/dist: project out the radial component.
    radial = np.sum(dl_ddir * proj.viewdir, axis=1, keepdims=True)
    dl_dpos += (dl_ddir - proj.viewdir * radial) / proj.viewdist[:, None]

    op = act_opacity
    dl_dlogits = dl_dopacity * op * (1.0 - op)

    pixel_grad_norm = np.linalg.norm(dl_dmean2d, axis=1)

    return GaussianGradients(
        positions=dl_dpos,
        rotations=dl_drot,
        log_scales=dl_dlog_scales,
        opacity_logits=dl_dlogits,
        sh_coeffs=dl_dsh,
        pixel_grad_norm=pixel_grad_norm,
    )


def _quat_backward(quat: np.ndarray, g_rot: np.ndarray) -> np.ndarray:
    """Contract dL/dR with dR/dq for unit quaternions (N, 4)."""
    w, x, y, z = quat[:, 0], quat[:, 1], quat[:, 2], quat[:, 3]
    zero = np.zeros_like(w)

    def contract(rows):
        d = np.stack([np.stack(r, axis=1) for r in rows], axis=1)  # (N,3,3)
        return 2.0 * np.einsum("nij,nij->n", g_rot, d)

    dw = contract([(zero, -z, y), (z, zero, -x), (-y, x, zero)])
    dx = contract([(zero, y, z), (y, -2 * x, -w), (z, w, -2 * x)])
    dy = contract([(-2 * y, x, w), (x, zero, z), (-w, z, -2 * y)])
    dz = contract([(-2 * z, -w, x), (w, -2 * z, y), (x, y, zero)])
    return np.stack([dw, dx, dy, dz], axis=1)


def expected_depth(aux: RenderAux, camera: Camera):
    """Alpha-weighted mean contributor depth per pixel, plus total alpha.

    Pixels with no included contributors report depth 0 and alpha 0.
    """
    inc = aux.entry_included.astype(bool)
    pix = aux.entry_pixel[inc]
    w = aux.entry_alpha[inc] * aux.entry_t[inc]
    d = aux.proj.depth[aux.entry_gauss[inc]]
    n_pixels = camera.width * camera.height
    wsum = _bincount(pix, w, n_pixels)
    dsum = _bincount(pix, w * d, n_pixels)
    depth = np.where(wsum > 0, dsum / np.maximum(wsum, 1e-12), 0.0)
    return (depth.reshape(camera.height, camera.width),
            wsum.reshape(camera.height, camera.width))

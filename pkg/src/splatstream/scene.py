"""Gaussian scene representation: raw parameters, activations, SH color."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

# Real SH basis constants (graphics sign convention, degrees 0..3).
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)

MAX_SH_DEGREE = 3

# Defaults used when initializing from a point set.
INIT_OPACITY = 0.1
FALLBACK_NN_DIST = 0.1  # isotropic scale when a point has no neighbors


@dataclass
class PointCloudInit:
    """Seed points with colors, the stand-in for an SfM point cloud."""

    points: np.ndarray   # (K, 3) world positions
    colors: np.ndarray   # (K, 3) in [0, 1]

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.colors = np.asarray(self.colors, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("points must be (K, 3)")
        if self.colors.shape != self.points.shape:
            raise ValueError("colors must match points shape")
        if self.points.shape[0] < 1:
            raise ValueError("empty initialization")
        if np.any(self.colors < 0) or np.any(self.colors > 1):
            raise ValueError("colors must lie in [0, 1]")


@dataclass
class GaussianSet:
    """Raw (pre-activation) parameters of N Gaussians.

    Scales are stored as logs, opacities as logits, rotations as
    unnormalized quaternions; `activate` maps everything to the effective
    domain. sh_coeffs has shape (N, 3, (sh_degree+1)^2).
    """

    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh_coeffs: np.ndarray
    sh_degree: int

    def __post_init__(self):
        n = self.positions.shape[0]
        if n < 1:
            raise ValueError("GaussianSet requires N >= 1")
        if self.sh_degree not in (0, 1, 2, 3):
            raise ValueError("unsupported SH degree")
        n_coeffs = (self.sh_degree + 1) ** 2
        expect = {
            "positions": (n, 3),
            "rotations": (n, 4),
            "log_scales": (n, 3),
            "opacity_logits": (n,),
            "sh_coeffs": (n, 3, n_coeffs),
        }
        for name, shape in expect.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> "GaussianSet":
        return GaussianSet(
            self.positions.copy(), self.rotations.copy(), self.log_scales.copy(),
            self.opacity_logits.copy(), self.sh_coeffs.copy(), self.sh_degree)

    def raw_arrays(self) -> dict:
        """Named views of the raw parameter arrays (optimizer groups)."""
        return {
            "positions": self.positions,
            "rotations": self.rotations,
            "log_scales": self.log_scales,
            "opacity_logits": self.opacity_logits,
            "sh_coeffs": self.sh_coeffs,
        }


@dataclass
class ActivatedGaussians:
    """Effective parameters after activation; all constraints hold."""

    positions: np.ndarray     # (N, 3)
    quaternions: np.ndarray   # (N, 4), unit norm
    scales: np.ndarray        # (N, 3), > 0
    opacities: np.ndarray     # (N,), in (0, 1)
    sh_coeffs: np.ndarray     # (N, 3, (d+1)^2)
    sh_degree: int


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def inverse_sigmoid(y):
    return np.log(y / (1.0 - y))


def activate(g: GaussianSet) -> ActivatedGaussians:
    """Map raw parameters to effective ones. Pure; raises on non-finite input."""
    for name, arr in g.raw_arrays().items():
        if not np.all(np.isfinite(arr)):
            idx = int(np.argwhere(~np.isfinite(arr))[0][0])
            raise ValueError(f"non-finite parameter in {name} at index {idx}")
    norms = np.linalg.norm(g.rotations, axis=1, keepdims=True)
    if np.any(norms == 0):
        idx = int(np.argmax(norms[:, 0] == 0))
        raise ValueError(f"non-finite parameter in rotations at index {idx}")
    return ActivatedGaussians(
        positions=g.positions.copy(),
        quaternions=g.rotations / norms,
        scales=np.exp(g.log_scales),
        opacities=sigmoid(g.opacity_logits),
        sh_coeffs=g.sh_coeffs.copy(),
        sh_degree=g.sh_degree,
    )


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Unit quaternions (N, 4) wxyz -> rotation matrices (N, 3, 3)."""
    q = np.atleast_2d(q)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def covariance3d(quaternion: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """World covariance(s) R diag(s)^2 R^T from unit quaternion(s) and scale(s).

    Accepts a single (4,)/(3,) pair or batched (N, 4)/(N, 3); returns
    (3, 3) or (N, 3, 3) accordingly.
    """
    single = np.asarray(quaternion).ndim == 1
    q = np.atleast_2d(quaternion)
    s = np.atleast_2d(scales)
    rot = quat_to_rotmat(q)
    m = rot * s[:, None, :]          # columns scaled: M = R diag(s)
    cov = m @ np.swapaxes(m, 1, 2)   # M M^T = R diag(s)^2 R^T
    return cov[0] if single else cov


def sh_basis(direction: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis values for unit direction(s), shape (..., (degree+1)^2)."""
    if degree > MAX_SH_DEGREE:
        raise ValueError("unsupported SH degree")
    d = np.asarray(direction, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    out = np.empty(d.shape[:-1] + ((degree + 1) ** 2,), dtype=np.float64)
    out[..., 0] = SH_C0
    if degree >= 1:
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 4] = SH_C2[0] * x * y
        out[..., 5] = SH_C2[1] * y * z
        out[..., 6] = SH_C2[2] * (2 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * x * z
        out[..., 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 9] = SH_C3[0] * y * (3 * xx - yy)
        out[..., 10] = SH_C3[1] * x * y * z
        out[..., 11] = SH_C3[2] * y * (4 * zz - xx - yy)
        out[..., 12] = SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
        out[..., 13] = SH_C3[4] * x * (4 * zz - xx - yy)
        out[..., 14] = SH_C3[5] * z * (xx - yy)
        out[..., 15] = SH_C3[6] * x * (xx - 3 * yy)
    return out


def sh_basis_gradient(direction: np.ndarray, degree: int) -> np.ndarray:
    """d(basis)/d(direction) for unit direction(s), shape (..., (d+1)^2, 3)."""
    if degree > MAX_SH_DEGREE:
        raise ValueError("unsupported SH degree")
    d = np.asarray(direction, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    zero = np.zeros_like(x)
    n = (degree + 1) ** 2
    grad = np.zeros(d.shape[:-1] + (n, 3), dtype=np.float64)
    if degree >= 1:
        grad[..., 1, 1] = -SH_C1
        grad[..., 2, 2] = SH_C1
        grad[..., 3, 0] = -SH_C1
    if degree >= 2:
        grad[..., 4, 0] = SH_C2[0] * y
        grad[..., 4, 1] = SH_C2[0] * x
        grad[..., 5, 1] = SH_C2[1] * z
        grad[..., 5, 2] = SH_C2[1] * y
        grad[..., 6, 0] = SH_C2[2] * (-2 * x)
        grad[..., 6, 1] = SH_C2[2] * (-2 * y)
        grad[..., 6, 2] = SH_C2[2] * (4 * z)
        grad[..., 7, 0] = SH_C2[3] * z
        grad[..., 7, 2] = SH_C2[3] * x
        grad[..., 8, 0] = SH_C2[4] * (2 * x)
        grad[..., 8, 1] = SH_C2[4] * (-2 * y)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        grad[..., 9, 0] = SH_C3[0] * (6 * x * y)
        grad[..., 9, 1] = SH_C3[0] * (3 * xx - 3 * yy)
        grad[..., 9, 2] = zero
        grad[..., 10, 0] = SH_C3[1] * y * z
        grad[..., 10, 1] = SH_C3[1] * x * z
        grad[..., 10, 2] = SH_C3[1] * x * y
        grad[..., 11, 0] = SH_C3[2] * (-2 * x * y)
        grad[..., 11, 1] = SH_C3[2] * (4 * zz - xx - 3 * yy)
        grad[..., 11, 2] = SH_C3[2] * (8 * y * z)
        grad[..., 12, 0] = SH_C3[3] * (-6 * x * z)
        grad[..., 12, 1] = SH_C3[3] * (-6 * y * z)
        grad[..., 12, 2] = SH_C3[3] * (6 * zz - 3 * xx - 3 * yy)
        grad[..., 13, 0] = SH_C3[4] * (4 * zz - 3 * xx - yy)
        grad[..., 13, 1] = SH_C3[4] * (-2 * x * y)
        grad[..., 13, 2] = SH_C3[4] * (8 * x * z)
        grad[..., 14, 0] = SH_C3[5] * (2 * x * z)
        grad[..., 14, 1] = SH_C3[5] * (-2 * y * z)
        grad[..., 14, 2] = SH_C3[5] * (xx - yy)
        grad[..., 15, 0] = SH_C3[6] * (3 * xx - 3 * yy)
        grad[..., 15, 1] = SH_C3[6] * (-6 * x * y)
        grad[..., 15, 2] = zero
    return grad


def eval_sh(coeffs: np.ndarray, degree: int, direction: np.ndarray) -> np.ndarray:
    """Evaluate SH color (offset 0.5 convention, clamped at 0 from below).

    coeffs: (..., 3, (degree+1)^2); direction: (..., 3) unit vectors.
    """
    basis = sh_basis(direction, degree)
    rgb = np.einsum("...ck,...k->...c", np.asarray(coeffs, dtype=np.float64), basis) + 0.5
    return np.maximum(rgb, 0.0)


def rgb_to_sh0(colors: np.ndarray) -> np.ndarray:
    """Degree-0 coefficient reproducing `colors` under the 0.5 offset."""
    return (np.asarray(colors, dtype=np.float64) - 0.5) / SH_C0


def mean_nn_distance(points: np.ndarray, k: int = 3) -> np.ndarray:
    """Mean distance from each point to its (up to) k nearest neighbors."""
    n = points.shape[0]
    if n == 1:
        return np.full(1, FALLBACK_NN_DIST)
    k_eff = min(k, n - 1)
    tree = cKDTree(points)
    dist, _ = tree.query(points, k=k_eff + 1)  # first hit is the point itself
    return dist[:, 1:].mean(axis=1)


def init_gaussians(init: PointCloudInit, sh_degree: int) -> GaussianSet:
    """Build a GaussianSet from seed points.

    Positions are copied; color goes into the degree-0 SH coefficient,
    higher orders zero; isotropic scale from the mean 3-NN distance;
    opacity 0.1; identity rotations.
    """
    if sh_degree not in (0, 1, 2, 3):
        raise ValueError("unsupported SH degree")
    k = init.points.shape[0]
    n_coeffs = (sh_degree + 1) ** 2
    sh = np.zeros((k, 3, n_coeffs), dtype=np.float64)
    sh[:, :, 0] = rgb_to_sh0(init.colors)
    rot = np.zeros((k, 4), dtype=np.float64)
    rot[:, 0] = 1.0
    dist = mean_nn_distance(init.points)
    dist = np.maximum(dist, 1e-7)
    return GaussianSet(
        positions=init.points.copy(),
        rotations=rot,
        log_scales=np.repeat(np.log(dist)[:, None], 3, axis=1),
        opacity_logits=np.full(k, inverse_sigmoid(INIT_OPACITY)),
        sh_coeffs=sh,
        sh_degree=sh_degree,
    )

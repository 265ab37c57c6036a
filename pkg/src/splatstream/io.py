"""File formats: PPM/PGM images, rig and config JSON, binary checkpoints.

Checkpoint layout (little-endian): magic "OR2G", u32 version, u32 N,
u32 sh_degree, float32 arrays in fixed order (positions, rotations,
log_scales, opacity_logits, sh_coeffs), u32 residual-map count, then per
map u32 H, u32 W and float32 H*W*3 data. Round-trips are bit-exact.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .renderer import Camera
from .scene import GaussianSet

CHECKPOINT_MAGIC = b"OR2G"
CHECKPOINT_VERSION = 1


class DataError(Exception):
    """Malformed or inconsistent input data."""


# --------------------------------------------------------------------------
# PPM / PGM

# Pixel values quantize with a 256 denominator (value = byte/256), not the
# usual 255: every decoded intensity is then a dyadic rational with a short
# mantissa, which is what makes the restored+residual decomposition exactly
# invertible in float arithmetic. White is 255/256.
QUANT = 256.0


def quantize_image(image: np.ndarray) -> np.ndarray:
    """Snap an image in [0, 1] to the dyadic pixel lattice (byte/QUANT),
    exactly what writing and re-reading a PPM would produce."""
    return np.clip(np.rint(np.asarray(image) * QUANT), 0, 255) / QUANT


def write_ppm(path, image: np.ndarray):
    """Write an (H, W, 3) float image in [0, 1] as binary P6, maxval 255."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError(f"PPM image must be (H, W, 3), got {img.shape}")
    data = np.clip(np.rint(img * QUANT), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    try:
        with open(path, "wb") as f:
            f.write(f"P6\n{w} {h}\n255\n".encode())
            f.write(data.tobytes())
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e


def write_pgm(path, mask: np.ndarray):
    """Write a boolean (H, W) mask as binary P5 (255 = True)."""
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise DataError(f"PGM mask must be (H, W), got {m.shape}")
    h, w = m.shape
    try:
        with open(path, "wb") as f:
            f.write(f"P5\n{w} {h}\n255\n".encode())
            f.write((m.astype(np.uint8) * 255).tobytes())
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e


def _read_pnm_header(raw: bytes, path, magic: bytes):
    if raw[:2] != magic:
        raise DataError(f"{path}: bad magic {raw[:2]!r}, expected {magic!r}")
    # header = magic, width, height, maxval as whitespace-separated tokens
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise DataError(f"{path}: truncated at byte {pos} (header)")
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if pos >= len(raw):
        raise DataError(f"{path}: truncated at byte {pos} (header)")
    pos += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as e:
        raise DataError(f"{path}: non-numeric header field") from e
    if maxval != 255:
        raise DataError(f"{path}: unsupported maxval {maxval} (only 255)")
    return w, h, pos


def read_ppm(path) -> np.ndarray:
    """Read a P6 PPM into float64 (H, W, 3) in [0, 1]."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    w, h, pos = _read_pnm_header(raw, path, b"P6")
    need = w * h * 3
    if len(raw) - pos < need:
        raise DataError(f"{path}: truncated at byte {len(raw)} "
                        f"(expected {pos + need} bytes)")
    data = np.frombuffer(raw, dtype=np.uint8, count=need, offset=pos)
    return data.reshape(h, w, 3).astype(np.float64) / QUANT


def read_pgm(path) -> np.ndarray:
    """Read a P5 PGM into a boolean (H, W) mask (nonzero = True)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    w, h, pos = _read_pnm_header(raw, path, b"P5")
    need = w * h
    if len(raw) - pos < need:
        raise DataError(f"{path}: truncated at byte {len(raw)} "
                        f"(expected {pos + need} bytes)")
    data = np.frombuffer(raw, dtype=np.uint8, count=need, offset=pos)
    return data.reshape(h, w) > 0


# --------------------------------------------------------------------------
# Camera rig

def save_rig(path, cameras):
    payload = {"cameras": [{
        "rotation": cam.rotation.tolist(),
        "translation": cam.translation.tolist(),
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height, "near": cam.near,
    } for cam in cameras]}
    Path(path).write_text(json.dumps(payload, indent=1))


def load_rig(path):
    try:
        payload = json.loads(Path(path).read_text())
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON: {e}") from e
    cams = []
    for i, c in enumerate(payload.get("cameras", [])):
        try:
            cams.append(Camera(
                rotation=np.array(c["rotation"], dtype=np.float64),
                translation=np.array(c["translation"], dtype=np.float64),
                fx=float(c["fx"]), fy=float(c["fy"]),
                cx=float(c["cx"]), cy=float(c["cy"]),
                width=int(c["width"]), height=int(c["height"]),
                near=float(c["near"])))
        except (KeyError, ValueError) as e:
            raise DataError(f"{path}: camera {i} invalid: {e}") from e
    if not cams:
        raise DataError(f"{path}: no cameras")
    return cams


def save_points(path, points: np.ndarray, colors: np.ndarray):
    Path(path).write_text(json.dumps(
        {"points": points.tolist(), "colors": colors.tolist()}))


def load_points(path):
    try:
        payload = json.loads(Path(path).read_text())
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    return (np.array(payload["points"], dtype=np.float64),
            np.array(payload["colors"], dtype=np.float64))


# --------------------------------------------------------------------------
# Checkpoints

def write_checkpoint(path, g: GaussianSet, residual_maps=None):
    """Serialize a GaussianSet and optional per-camera residual maps."""
    maps = residual_maps if residual_maps is not None else []
    try:
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(struct.pack("<III", CHECKPOINT_VERSION, g.n, g.sh_degree))
            for name in ("positions", "rotations", "log_scales",
                         "opacity_logits", "sh_coeffs"):
                f.write(np.ascontiguousarray(
                    getattr(g, name), dtype="<f4").tobytes())
            f.write(struct.pack("<I", len(maps)))
            for m in maps:
                if m.ndim != 3 or m.shape[2] != 3:
                    raise DataError("residual maps must be (H, W, 3)")
                f.write(struct.pack("<II", m.shape[0], m.shape[1]))
                f.write(np.ascontiguousarray(m, dtype="<f4").tobytes())
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e


class _Reader:
    def __init__(self, raw, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.raw):
            raise DataError(
                f"{self.path}: truncated at byte {len(self.raw)} "
                f"(needed {self.pos + n} for {what})")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def f32_array(self, shape, what):
        count = int(np.prod(shape))
        data = np.frombuffer(self.take(4 * count, what), dtype="<f4")
        return data.reshape(shape).astype(np.float64)


def read_checkpoint(path):
    """Read a checkpoint; returns (GaussianSet, list of residual maps)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    r = _Reader(raw, path)
    magic = r.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r} at byte 0")
    version = r.u32("version")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported version {version} at byte 4")
    n = r.u32("gaussian count")
    sh_degree = r.u32("sh degree")
    if sh_degree > 3:
        raise DataError(f"{path}: invalid sh_degree {sh_degree} at byte 12")
    n_coeffs = (sh_degree + 1) ** 2
    g = GaussianSet(
        positions=r.f32_array((n, 3), "positions"),
        rotations=r.f32_array((n, 4), "rotations"),
        log_scales=r.f32_array((n, 3), "log_scales"),
        opacity_logits=r.f32_array((n,), "opacity_logits"),
        sh_coeffs=r.f32_array((n, 3, n_coeffs), "sh_coeffs"),
        sh_degree=int(sh_degree),
    )
    n_maps = r.u32("residual map count")
    maps = []
    for i in range(n_maps):
        h = r.u32(f"map {i} height")
        w = r.u32(f"map {i} width")
        maps.append(r.f32_array((h, w, 3), f"map {i} data"))
    if r.pos != len(raw):
        raise DataError(f"{path}: {len(raw) - r.pos} trailing bytes "
                        f"after offset {r.pos}")
    return g, maps


# --------------------------------------------------------------------------
# Run configuration

CONFIG_DEFAULTS = {
    # paths and orchestration
    "dataset": None,
    "clean_dataset": None,     # defaults to <dataset>/../clean at use time
    "out": None,
    "eval_cameras": [3],
    "max_frames": None,
    # stream
    "seed": 0,
    "sh_degree": 3,
    "use_residual_maps": True,
    "reuse_new_gaussians": True,
    "first_frame_iters": 1500,
    "densify_until": 750,
    "densify_interval": 100,
    "densify_grad_threshold": 4e-5,
    "prune_opacity_threshold": 0.005,
    "sequential_iters_deform": 150,
    "sequential_iters_new": 100,
    "residual_freeze_until_densify": True,
    "lambda_dssim": 0.2,
    "lambda_opa": 0.01,
    "lambda_res": 0.01,
    "residual_lr_first": [1e-3, 1e-5],
    "residual_lr_seq": [1e-4, 1e-6],
    "spawn_cap": 500,
    "spawn_percentile": 99.5,
    "spawn_error_floor": 0.02,
    "lr_position": [1.6e-4, 1.6e-6],
    "lr_sh": 2.5e-3,
    "lr_opacity": 5e-2,
    "lr_scale": 5e-3,
    "lr_rotation": 1e-3,
    "seq_lr_scale": 1.0,
    "seq_optimize_sh": True,
    "clone_scale_percent": 0.01,
    "split_scale_shrink": 1.6,
    "strip_residual": False,
    # synthetic dataset generation
    "n_static": 300,
    "n_dynamic": 20,
    "n_cameras": 8,
    "frames": 30,
    "resolution": 64,
    "noise_sigma": 0.02,
    "photons": 500.0,
    "jitter_sigma": 0.02,
    "keep_fraction": 1.0,
    # sweep
    "sweep_arms": None,
}


def default_config() -> dict:
    return json.loads(json.dumps(CONFIG_DEFAULTS))


def load_config(path) -> dict:
    """Load a JSON config; unknown keys are rejected."""
    try:
        payload = json.loads(Path(path).read_text())
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(payload, dict):
        raise DataError(f"{path}: config must be a JSON object")
    unknown = sorted(set(payload) - set(CONFIG_DEFAULTS))
    if unknown:
        raise DataError(f"{path}: unknown config keys: {', '.join(unknown)}")
    cfg = default_config()
    cfg.update(payload)
    return cfg


def save_config(path, cfg: dict):
    unknown = sorted(set(cfg) - set(CONFIG_DEFAULTS))
    if unknown:
        raise DataError(f"unknown config keys: {', '.join(unknown)}")
    Path(path).write_text(json.dumps(cfg, indent=1, sort_keys=True))

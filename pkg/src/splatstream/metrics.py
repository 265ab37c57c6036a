"""Evaluation metrics: PSNR, SSIM, masked temporal variation, ST slices."""

from dataclasses import dataclass

import numpy as np

from .optimize import ssim_value

PSNR_CAP = 100.0  # reported for zero MSE instead of infinity


@dataclass
class StaticMask:
    """Boolean H x W mask; True marks static pixels."""

    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 2:
            raise ValueError("mask must be 2-D")
        if not self.mask.any():
            raise ValueError("mask has no static pixels")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1/MSE) over all pixels and channels, capped at 100 dB."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(1.0 / mse)))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Windowed SSIM score; shares its definition with the D-SSIM loss."""
    return ssim_value(a, b)


def mtv(frames, mask: StaticMask) -> float:
    """Masked temporal variation x100: mean |frame_{t+1} - frame_t| on mask."""
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    if len(frames) < 2:
        raise ValueError("mtv needs at least 2 frames")
    m = mask.mask
    total = 0.0
    count = 0
    for prev, cur in zip(frames, frames[1:]):
        if prev.shape != cur.shape or prev.shape[:2] != m.shape:
            raise ValueError("frame/mask shape mismatch")
        diff = np.abs(cur[m] - prev[m])
        total += float(diff.sum())
        count += diff.size
    return 100.0 * total / count


def st_slice(frames, column: int) -> np.ndarray:
    """Fixed image column over time: output pixel (y, t) = frames[t][y, column]."""
    frames = [np.asarray(f) for f in frames]
    h, w = frames[0].shape[:2]
    if not 0 <= column < w:
        raise ValueError(f"column {column} out of range [0, {w})")
    return np.stack([f[:, column] for f in frames], axis=1)


def evaluate_frames(rendered, reference, masks=None):
    """Per-frame PSNR/SSIM against a reference sequence, plus sequence mTV.

    rendered/reference: per-view lists of frame lists (view-major). masks:
    optional per-view StaticMask list; mTV is averaged over views and is
    None when masks are missing or the sequence has a single frame.
    Returns (rows, summary) where each row is (frame, psnr, ssim).
    """
    n_views = len(rendered)
    if n_views != len(reference) or n_views == 0:
        raise ValueError("rendered/reference view count mismatch")
    n_frames = len(rendered[0])
    for v in range(n_views):
        if len(rendered[v]) != n_frames or len(reference[v]) != n_frames:
            raise ValueError("rendered/reference frame count mismatch")

    rows = []
    for t in range(n_frames):
        p = float(np.mean([psnr(rendered[v][t], reference[v][t])
                           for v in range(n_views)]))
        s = float(np.mean([ssim(rendered[v][t], reference[v][t])
                           for v in range(n_views)]))
        rows.append((t, p, s))

    seq_mtv = None
    if masks is not None and n_frames >= 2:
        seq_mtv = float(np.mean([
            mtv(rendered[v], masks[v]) for v in range(n_views)]))
    mean_psnr = float(np.mean([r[1] for r in rows]))
    mean_ssim = float(np.mean([r[2] for r in rows]))
    summary = {"psnr": mean_psnr, "ssim": mean_ssim, "mtv": seq_mtv}
    return rows, summary

"""Sequential rasterization and alpha-compositing kernels.

Entries are produced sorted by pixel id via a counting sort, and within
each pixel in increasing view-space depth (the emission order). Each
pixel's arithmetic touches only its own entries, so a pixel's output is
bit-identical whenever its own contributor list is unchanged, regardless
of what happens elsewhere in the image. All kernels are single-threaded
and deterministic.
"""

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


ALPHA_CLAMP = 0.99
ALPHA_SKIP = 1.0 / 255.0
T_STOP = 1e-4  # compositing stops once transmittance falls below this


@njit(cache=True)
def rasterize_entries(order, mean2d, conic, radius, opacity, width, height):
    """Expand Gaussian footprints into per-pixel contributor entries.

    `order` lists visible Gaussian indices sorted by (depth, index). The
    returned arrays are grouped by pixel id with depth order preserved
    inside each group. Contributors below the 1/255 alpha skip are never
    emitted.
    """
    n_pixels = width * height
    counts = np.zeros(n_pixels + 1, dtype=np.int64)
    for oi in range(order.shape[0]):
        gi = order[oi]
        u = mean2d[gi, 0]
        v = mean2d[gi, 1]
        r = radius[gi]
        x0 = max(0, int(np.ceil(u - r)))
        x1 = min(width - 1, int(np.floor(u + r)))
        y0 = max(0, int(np.ceil(v - r)))
        y1 = min(height - 1, int(np.floor(v + r)))
        ca = conic[gi, 0]
        cb = conic[gi, 1]
        cc = conic[gi, 2]
        op = opacity[gi]
        for py in range(y0, y1 + 1):
            dy = py - v
            for px in range(x0, x1 + 1):
                dx = px - u
                q = ca * dx * dx + 2 * cb * dx * dy + cc * dy * dy
                if op * np.exp(-0.5 * q) >= ALPHA_SKIP:
                    counts[py * width + px + 1] += 1

    offsets = np.cumsum(counts)
    total = offsets[n_pixels]
    pixel_ids = np.empty(total, dtype=np.int64)
    gauss_ids = np.empty(total, dtype=np.int64)
    alphas = np.empty(total, dtype=np.float64)
    weights = np.empty(total, dtype=np.float64)
    cursor = offsets[:n_pixels].copy()

    for oi in range(order.shape[0]):
        gi = order[oi]
        u = mean2d[gi, 0]
        v = mean2d[gi, 1]
        r = radius[gi]
        x0 = max(0, int(np.ceil(u - r)))
        x1 = min(width - 1, int(np.floor(u + r)))
        y0 = max(0, int(np.ceil(v - r)))
        y1 = min(height - 1, int(np.floor(v + r)))
        ca = conic[gi, 0]
        cb = conic[gi, 1]
        cc = conic[gi, 2]
        op = opacity[gi]
        for py in range(y0, y1 + 1):
            dy = py - v
            for px in range(x0, x1 + 1):
                dx = px - u
                q = ca * dx * dx + 2 * cb * dx * dy + cc * dy * dy
                w = np.exp(-0.5 * q)
                a = op * w
                if a >= ALPHA_SKIP:
                    p = py * width + px
                    k = cursor[p]
                    cursor[p] = k + 1
                    pixel_ids[k] = p
                    gauss_ids[k] = gi
                    alphas[k] = min(ALPHA_CLAMP, a)
                    weights[k] = w
    return pixel_ids, gauss_ids, alphas, weights


@njit(cache=True)
def composite_forward(pixel_ids, gauss_ids, alphas, colors, n_pixels):
    """Front-to-back composite. Returns (rgb, t_final, t_before, included)."""
    n_entries = pixel_ids.shape[0]
    rgb = np.zeros((n_pixels, 3), dtype=np.float64)
    t_final = np.ones(n_pixels, dtype=np.float64)
    t_before = np.empty(n_entries, dtype=np.float64)
    included = np.zeros(n_entries, dtype=np.uint8)
    cur = -1
    t = 1.0
    for e in range(n_entries):
        p = pixel_ids[e]
        if p != cur:
            if cur >= 0:
                t_final[cur] = t
            cur = p
            t = 1.0
        t_before[e] = t
        if t < T_STOP:
            continue
        included[e] = 1
        a = alphas[e]
        g = gauss_ids[e]
        w = a * t
        rgb[p, 0] += w * colors[g, 0]
        rgb[p, 1] += w * colors[g, 1]
        rgb[p, 2] += w * colors[g, 2]
        t *= 1.0 - a
    if cur >= 0:
        t_final[cur] = t
    return rgb, t_final, t_before, included


@njit(cache=True)
def composite_backward(pixel_ids, gauss_ids, alphas, weights, t_before,
                       included, colors, opacities, mean2d, conic, dl_drgb,
                       width, n_gauss):
    """Per-Gaussian gradients of the composite in screen space.

    One back-to-front pass per pixel: dC/dalpha_i = T_i c_i - S_i/(1-a_i)
    with S_i the weighted color suffix behind i. The alpha clamp at 0.99
    blocks gradients into opacity/footprint for saturated contributors.
    Accumulation order is fixed (reverse entry order), so results are
    bit-reproducible.
    """
    n_entries = pixel_ids.shape[0]
    dl_dcolor = np.zeros((n_gauss, 3), dtype=np.float64)
    dl_dopacity = np.zeros(n_gauss, dtype=np.float64)
    dl_dmean2d = np.zeros((n_gauss, 2), dtype=np.float64)
    dl_dconic = np.zeros((n_gauss, 3), dtype=np.float64)
    e = n_entries - 1
    while e >= 0:
        p = pixel_ids[e]
        g0 = dl_drgb[p, 0]
        g1 = dl_drgb[p, 1]
        g2 = dl_drgb[p, 2]
        px = p % width
        py = p // width
        s0 = 0.0
        s1 = 0.0
        s2 = 0.0
        while e >= 0 and pixel_ids[e] == p:
            if included[e]:
                a = alphas[e]
                t = t_before[e]
                gi = gauss_ids[e]
                w = weights[e]
                c0 = colors[gi, 0]
                c1 = colors[gi, 1]
                c2 = colors[gi, 2]
                wt = a * t
                dl_dcolor[gi, 0] += wt * g0
                dl_dcolor[gi, 1] += wt * g1
                dl_dcolor[gi, 2] += wt * g2
                inv = 1.0 / (1.0 - a)
                dl_da = (g0 * (t * c0 - s0 * inv) + g1 * (t * c1 - s1 * inv)
                         + g2 * (t * c2 - s2 * inv))
                s0 += wt * c0
                s1 += wt * c1
                s2 += wt * c2
                op = opacities[gi]
                if op * w < ALPHA_CLAMP:
                    dl_dopacity[gi] += dl_da * w
                    dl_dq = -0.5 * dl_da * op * w
                    dx = px - mean2d[gi, 0]
                    dy = py - mean2d[gi, 1]
                    ca = conic[gi, 0]
                    cb = conic[gi, 1]
                    cc = conic[gi, 2]
                    dl_dmean2d[gi, 0] -= dl_dq * (2 * ca * dx + 2 * cb * dy)
                    dl_dmean2d[gi, 1] -= dl_dq * (2 * cb * dx + 2 * cc * dy)
                    dl_dconic[gi, 0] += dl_dq * dx * dx
                    dl_dconic[gi, 1] += dl_dq * 2 * dx * dy
                    dl_dconic[gi, 2] += dl_dq * dy * dy
            e -= 1
    return dl_dcolor, dl_dopacity, dl_dmean2d, dl_dconic

"""Texture features on the patch intensity (335 values).

Segment order: HOG (252), Tamura coarseness/contrast/directionality (3),
edge histogram descriptor (80).
"""

import math

import numpy as np
from scipy import ndimage

HOG_BINS = 7
HOG_CELL = 16
HOG_BLOCK = 2
EHD_GRID = 4
EHD_BLOCK = 4
EHD_THRESHOLD = 11.0
EHD_TYPES = ("vertical", "horizontal", "diagonal_45", "diagonal_135", "non_directional")
TAMURA_MAX_K = 5
TAMURA_DIR_BINS = 16
TAMURA_DIR_THRESHOLD = 12.0

SEGMENTS = (
    ("hog", 9 * HOG_BLOCK * HOG_BLOCK * HOG_BINS),
    ("tamura", 3),
    ("edge_histogram_descriptor", EHD_GRID * EHD_GRID * len(EHD_TYPES)),
)
LENGTH = sum(n for _, n in SEGMENTS)


def intensity(pixels):
    """BT.601 luma on the 0-255 scale."""
    p = np.asarray(pixels, dtype=np.float64)
    return p[..., 0] * 0.299 + p[..., 1] * 0.587 + p[..., 2] * 0.114


def hog(gray, bins=HOG_BINS, cell=HOG_CELL, block=HOG_BLOCK):
    """HOG with centered-difference gradients and unsigned orientations.

    Each pixel votes its magnitude into one of ``bins`` equal sectors of
    [0, 180) degrees. Blocks of ``block x block`` cells slide one cell at a
    time and are L2 normalized; an all-zero block stays zero.
    """
    g = np.asarray(gray, dtype=np.float64) / 255.0
    kernel = np.array([-1.0, 0.0, 1.0])
    gx = ndimage.correlate1d(g, kernel, axis=1, mode="nearest")
    gy = ndimage.correlate1d(g, kernel, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    b = np.minimum((ang / (180.0 / bins)).astype(int), bins - 1)
    ny, nx = g.shape[0] // cell, g.shape[1] // cell
    cells = np.zeros((ny, nx, bins))
    for i in range(ny):
        for j in range(nx):
            sl = (slice(i * cell, (i + 1) * cell), slice(j * cell, (j + 1) * cell))
            cells[i, j] = np.bincount(b[sl].ravel(), weights=mag[sl].ravel(), minlength=bins)
    out = []
    for i in range(ny - block + 1):
        for j in range(nx - block + 1):
            v = cells[i:i + block, j:j + block].ravel()
            norm = np.linalg.norm(v)
            out.append(v / norm if norm > 1e-12 else np.zeros_like(v))
    return np.concatenate(out)


def _shift(a, dy, dx):
    """``a`` translated so out[y, x] = a[y + dy, x + dx], clamped at edges."""
    h, w = a.shape
    ys = np.clip(np.arange(h) + dy, 0, h - 1)
    xs = np.clip(np.arange(w) + dx, 0, w - 1)
    return a[np.ix_(ys, xs)]


def tamura_coarseness(gray, max_k=TAMURA_MAX_K):
    g = np.asarray(gray, dtype=np.float64)
    best_e = np.full(g.shape, -1.0)
    best_s = np.ones(g.shape)
    for k in range(1, max_k + 1):
        size = 2 ** k
        avg = ndimage.uniform_filter(g, size=size, mode="nearest")
        half = size // 2
        eh = np.abs(_shift(avg, 0, half) - _shift(avg, 0, -half))
        ev = np.abs(_shift(avg, half, 0) - _shift(avg, -half, 0))
        e = np.maximum(eh, ev)
        better = e > best_e
        best_e[better] = e[better]
        best_s[better] = size
    return float(best_s.mean())


def tamura_contrast(gray):
    g = np.asarray(gray, dtype=np.float64).ravel()
    var = g.var()
    if var <= 1e-12:
        return 0.0
    kurt = np.mean((g - g.mean()) ** 4) / var ** 2
    return float(math.sqrt(var) / kurt ** 0.25)


def tamura_directionality(gray, bins=TAMURA_DIR_BINS, threshold=TAMURA_DIR_THRESHOLD):
    """Single-peak directionality in [0, 1]; 1 means one dominant direction.

    Edge angles come from 3x3 Prewitt responses and only pixels with mean
    absolute response above ``threshold`` count. The score is one minus the
    histogram-weighted squared circular distance to the peak bin, scaled by
    the largest possible distance (90 degrees).
    """
    g = np.asarray(gray, dtype=np.float64)
    dh = ndimage.prewitt(g, axis=1, mode="nearest") / 3.0
    dv = ndimage.prewitt(g, axis=0, mode="nearest") / 3.0
    dg = (np.abs(dh) + np.abs(dv)) / 2.0
    keep = dg >= threshold
    if not np.any(keep):
        return 0.0
    theta = np.arctan2(dv[keep], dh[keep]) % np.pi
    hist = np.histogram(theta, bins=bins, range=(0.0, np.pi))[0].astype(np.float64)
    hist /= hist.sum()
    centers = (np.arange(bins) + 0.5) * np.pi / bins
    peak = centers[np.argmax(hist)]
    d = np.abs(centers - peak)
    d = np.minimum(d, np.pi - d)
    return float(1.0 - np.sum(hist * d ** 2) / (np.pi / 2) ** 2)


def ehd_filter_responses(block):
    """Absolute responses of the five edge filters on one image block.

    The block is split into 2x2 sub-blocks whose mean intensities
    (a0 top-left, a1 top-right, a2 bottom-left, a3 bottom-right) are filtered.
    """
    h, w = block.shape
    a0 = block[:h // 2, :w // 2].mean()
    a1 = block[:h // 2, w // 2:].mean()
    a2 = block[h // 2:, :w // 2].mean()
    a3 = block[h // 2:, w // 2:].mean()
    r2 = math.sqrt(2.0)
    return np.abs(np.array([
        a0 - a1 + a2 - a3,
        a0 + a1 - a2 - a3,
        r2 * a0 - r2 * a3,
        r2 * a1 - r2 * a2,
        2 * a0 - 2 * a1 - 2 * a2 + 2 * a3,
    ]))


def edge_histogram_descriptor(gray, grid=EHD_GRID, block=EHD_BLOCK, threshold=EHD_THRESHOLD):
    """Local edge histograms over a ``grid x grid`` layout of sub-images.

    Each block votes for its strongest edge type when that response reaches
    ``threshold`` (0-255 scale). Bins are normalized by blocks per sub-image.
    """
    g = np.asarray(gray, dtype=np.float64)
    sh, sw = g.shape[0] // grid, g.shape[1] // grid
    out = np.zeros((grid, grid, len(EHD_TYPES)))
    for i in range(grid):
        for j in range(grid):
            sub = g[i * sh:(i + 1) * sh, j * sw:(j + 1) * sw]
            n_blocks = 0
            for bi in range(0, sh - block + 1, block):
                for bj in range(0, sw - block + 1, block):
                    n_blocks += 1
                    resp = ehd_filter_responses(sub[bi:bi + block, bj:bj + block])
                    t = int(np.argmax(resp))
                    if resp[t] >= threshold:
                        out[i, j, t] += 1
            if n_blocks:
                out[i, j] /= n_blocks
    return out.ravel()


def texture_features(pixels):
    gray = intensity(pixels)
    out = np.concatenate([
        hog(gray),
        [tamura_coarseness(gray), tamura_contrast(gray), tamura_directionality(gray)],
        edge_histogram_descriptor(gray),
    ])
    assert out.shape == (LENGTH,)
    return out

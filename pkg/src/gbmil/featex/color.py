"""Color features on a k-means quantized patch (259 values).

Segment order: mean RGB (3), palette histogram (32), auto-correlogram at
chessboard distances 1, 3, 5, 7 (4 x 32, distance-major), color coherence
vector (32 x 2, coherent fraction then incoherent fraction per color), Sobel
edge magnitude histogram (16) and edge direction histogram (16).
Per-color segments are zero-padded to 32 palette slots.
"""

import math

import numpy as np
from scipy import ndimage

N_SLOTS = 32
CORRELOGRAM_DISTANCES = (1, 3, 5, 7)
EDGE_BINS = 16
SOBEL_MAX = 4.0 * math.sqrt(2.0)

SEGMENTS = (
    ("mean_rgb", 3),
    ("color_histogram", N_SLOTS),
    ("auto_correlogram", N_SLOTS * len(CORRELOGRAM_DISTANCES)),
    ("color_coherence", N_SLOTS * 2),
    ("edge_magnitude_histogram", EDGE_BINS),
    ("edge_direction_histogram", EDGE_BINS),
)
LENGTH = sum(n for _, n in SEGMENTS)


def ring_offsets(d):
    """Offsets at exact chessboard distance ``d``."""
    return [(dy, dx) for dy in range(-d, d + 1) for dx in range(-d, d + 1)
            if max(abs(dy), abs(dx)) == d]


def _shifted_pairs(idx, dy, dx):
    h, w = idx.shape
    a = idx[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
    b = idx[max(0, dy):h - max(0, -dy), max(0, dx):w - max(0, -dx)]
    return a, b


def auto_correlogram(indices, n_slots=N_SLOTS, distances=CORRELOGRAM_DISTANCES):
    """Probability that an in-image pixel at distance d from a pixel of color c
    also has color c. Returns an array of shape ``(len(distances), n_slots)``."""
    out = np.zeros((len(distances), n_slots))
    for row, d in enumerate(distances):
        same = np.zeros(n_slots)
        total = np.zeros(n_slots)
        for dy, dx in ring_offsets(d):
            a, b = _shifted_pairs(indices, dy, dx)
            if a.size == 0:
                continue
            a = a.ravel()
            total += np.bincount(a, minlength=n_slots)[:n_slots]
            same += np.bincount(a, weights=(a == b.ravel()), minlength=n_slots)[:n_slots]
        np.divide(same, total, out=out[row], where=total > 0)
    return out


def coherence_vector(indices, n_slots=N_SLOTS, threshold_fraction=0.01):
    """Per color: fraction of patch pixels in 8-connected same-color regions of
    at least ``ceil(threshold_fraction * area)`` pixels, and the rest."""
    area = indices.size
    tau = math.ceil(threshold_fraction * area)
    structure = np.ones((3, 3), dtype=bool)
    coherent = np.zeros(n_slots)
    incoherent = np.zeros(n_slots)
    for c in np.unique(indices):
        labels, n = ndimage.label(indices == c, structure=structure)
        sizes = np.bincount(labels.ravel())[1:]
        big = sizes[sizes >= tau].sum()
        coherent[c] = big / area
        incoherent[c] = (sizes.sum() - big) / area
    return np.column_stack([coherent, incoherent])


def edge_histograms(quantized_rgb, bins=EDGE_BINS):
    """Sobel magnitude and direction histograms, computed on each quantized
    color plane and summed over the three planes.

    The magnitude histogram counts every pixel over ``[0, 4*sqrt(2)]`` and
    sums to 1. The direction histogram spans ``[0, 360)`` degrees weighted by
    magnitude; it is all zeros when the patch has no gradient.
    """
    planes = np.asarray(quantized_rgb, dtype=np.float64) / 255.0
    mag_hist = np.zeros(bins)
    dir_hist = np.zeros(bins)
    for p in range(planes.shape[2]):
        gx = ndimage.sobel(planes[:, :, p], axis=1, mode="nearest")
        gy = ndimage.sobel(planes[:, :, p], axis=0, mode="nearest")
        mag = np.hypot(gx, gy)
        ang = np.degrees(np.arctan2(gy, gx)) % 360.0
        mag_hist += np.histogram(np.minimum(mag, SOBEL_MAX), bins=bins,
                                 range=(0.0, SOBEL_MAX))[0]
        dir_hist += np.histogram(ang, bins=bins, range=(0.0, 360.0), weights=mag)[0]
    mag_hist /= mag_hist.sum()
    total = dir_hist.sum()
    if total > 1e-12:
        dir_hist /= total
    else:
        dir_hist[:] = 0.0
    return mag_hist, dir_hist


def color_features(qpatch, patch_pixels):
    """Concatenate the color segments for one quantized patch."""
    pixels = np.asarray(patch_pixels, dtype=np.float64)
    idx = np.asarray(qpatch.indices)
    n_colors = len(qpatch.palette)
    if n_colors > N_SLOTS:
        raise ValueError(f"palette has {n_colors} colors, at most {N_SLOTS} supported")
    mean_rgb = pixels.reshape(-1, 3).mean(axis=0) / 255.0
    hist = np.bincount(idx.ravel(), minlength=N_SLOTS).astype(np.float64) / idx.size
    corr = auto_correlogram(idx)
    ccv = coherence_vector(idx)
    mag, direction = edge_histograms(qpatch.rgb())
    out = np.concatenate([mean_rgb, hist, corr.ravel(), ccv.ravel(), mag, direction])
    assert out.shape == (LENGTH,)
    return out

"""ROI patch extraction and per-patch k-means color quantization."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Patch:
    pixels: np.ndarray  # (size, size, 3) uint8
    origin: tuple       # (row, col) in the source image


@dataclass(frozen=True)
class QuantizedPatch:
    indices: np.ndarray  # (h, w) int palette indices
    palette: np.ndarray  # (n, 3) float RGB centroids, n <= n_colors
    sse_trace: tuple = ()

    def rgb(self):
        """Patch with every pixel replaced by its palette color."""
        return self.palette[self.indices]


def load_image(path):
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def load_mask(path, threshold=128):
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L")) >= threshold


def extract_patches(image, mask, size=64, overlap=0.5, min_inside_fraction=1.0):
    """Slide a ``size`` window with the given overlap over the image.

    A window is kept when at least ``min_inside_fraction`` of its pixels lie
    inside the mask (1.0 means fully inside). Patches come back in row-major
    order of their origin.
    """
    image = np.asarray(image)
    mask = np.asarray(mask).astype(bool)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("image must be an (h, w, 3) RGB array")
    if mask.shape != image.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {image.shape[:2]}")
    h, w = mask.shape
    if size > min(h, w):
        raise ValueError(f"patch size {size} exceeds image size {w}x{h}")
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    stride = max(1, int(round(size * (1.0 - overlap))))

    # integral image gives the in-mask pixel count of each window in O(1)
    integral = np.zeros((h + 1, w + 1), dtype=np.int64)
    integral[1:, 1:] = np.cumsum(np.cumsum(mask, axis=0), axis=1)
    need = min_inside_fraction * size * size
    patches = []
    for r in range(0, h - size + 1, stride):
        for c in range(0, w - size + 1, stride):
            inside = (integral[r + size, c + size] - integral[r, c + size]
                      - integral[r + size, c] + integral[r, c])
            if inside >= need - 1e-9:
                patches.append(Patch(image[r:r + size, c:c + size].copy(), (r, c)))
    return patches


def _farthest_point_init(colors, weights, k, rng):
    first = rng.choice(len(colors), p=weights / weights.sum())
    chosen = [first]
    d2 = np.sum((colors - colors[first]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((colors - colors[nxt]) ** 2, axis=1))
    return colors[chosen].copy()


def kmeans_colors(colors, weights, k, seed, max_iter=50):
    """Weighted Lloyd iterations over distinct colors.

    Returns ``(centroids, assignment, sse_trace)``. The SSE trace records the
    within-cluster squared error after each assignment step.
    """
    rng = np.random.default_rng(seed)
    centroids = _farthest_point_init(colors, weights, k, rng)
    assign = None
    trace = []
    for _ in range(max_iter):
        d2 = ((colors[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d2, axis=1)
        trace.append(float(np.sum(weights * d2[np.arange(len(colors)), new])))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for j in range(k):
            sel = assign == j
            if np.any(sel):
                w = weights[sel]
                centroids[j] = (w[:, None] * colors[sel]).sum(axis=0) / w.sum()
    return centroids, assign, tuple(trace)


def quantize_colors(patch, n_colors=32, seed=0, max_iter=50):
    """Quantize a patch (``Patch`` or RGB array) to at most ``n_colors`` colors.

    When the patch has no more distinct colors than ``n_colors`` the palette
    is exactly that set of colors.
    """
    if n_colors < 1:
        raise ValueError("n_colors must be >= 1")
    pixels = patch.pixels if isinstance(patch, Patch) else np.asarray(patch)
    h, w = pixels.shape[:2]
    flat = pixels.reshape(-1, 3).astype(np.float64)
    colors, inverse, counts = np.unique(flat, axis=0, return_inverse=True,
                                        return_counts=True)
    inverse = inverse.reshape(-1)
    if len(colors) <= n_colors:
        return QuantizedPatch(inverse.reshape(h, w), colors, (0.0,))
    centroids, assign, trace = kmeans_colors(colors, counts.astype(np.float64),
                                             n_colors, seed, max_iter)
    # drop clusters that ended up empty so every palette entry is used
    used = np.unique(assign)
    remap = np.full(n_colors, -1)
    remap[used] = np.arange(len(used))
    return QuantizedPatch(remap[assign][inverse].reshape(h, w), centroids[used], trace)


def quantize_image_roi(image, mask, n_colors=32, seed=0, max_iter=50):
    """Quantize a whole ROI at once; the per-image alternative to per-patch.

    Returns an ``(h, w)`` index raster (``-1`` outside the mask) and the palette.
    """
    image = np.asarray(image)
    mask = np.asarray(mask).astype(bool)
    flat = image[mask].astype(np.float64)
    colors, inverse, counts = np.unique(flat, axis=0, return_inverse=True,
                                        return_counts=True)
    inverse = inverse.reshape(-1)
    indices = np.full(mask.shape, -1, dtype=np.int64)
    if len(colors) <= n_colors:
        indices[mask] = inverse
        return indices, colors
    centroids, assign, _ = kmeans_colors(colors, counts.astype(np.float64),
                                         n_colors, seed, max_iter)
    indices[mask] = assign[inverse]
    return indices, centroids

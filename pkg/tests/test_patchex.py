import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gbmil.patchex import (extract_patches, kmeans_colors, load_image, load_mask,
                           quantize_colors, quantize_image_roi)


@settings(max_examples=30, deadline=None)
@given(st.integers(64, 200), st.integers(64, 200))
def test_full_mask_patch_count(h, w):
    img = np.zeros((h, w, 3), dtype=np.uint8)
    patches = extract_patches(img, np.ones((h, w), bool))
    assert len(patches) == ((w - 64) // 32 + 1) * ((h - 64) // 32 + 1)
    assert all(p.pixels.shape == (64, 64, 3) for p in patches)


def test_patches_lie_inside_mask(rng):
    h, w = 180, 220
    yy, xx = np.mgrid[:h, :w]
    mask = (yy - 90) ** 2 / 80 ** 2 + (xx - 110) ** 2 / 100 ** 2 <= 1
    img = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
    patches = extract_patches(img, mask)
    assert patches
    for p in patches:
        r, c = p.origin
        assert mask[r:r + 64, c:c + 64].all()
        np.testing.assert_array_equal(p.pixels, img[r:r + 64, c:c + 64])
    # brute force: every stride-32 window that is fully inside is kept
    expect = [(r, c) for r in range(0, h - 63, 32) for c in range(0, w - 63, 32)
              if mask[r:r + 64, c:c + 64].all()]
    assert [p.origin for p in patches] == expect


def test_partial_inside_fraction():
    mask = np.zeros((64, 64), bool)
    mask[:, :40] = True
    img = np.zeros((64, 64, 3), np.uint8)
    assert extract_patches(img, mask) == []
    assert len(extract_patches(img, mask, min_inside_fraction=0.6)) == 1


def test_extract_errors():
    img = np.zeros((32, 32, 3), np.uint8)
    with pytest.raises(ValueError):
        extract_patches(img, np.ones((32, 32), bool))
    with pytest.raises(ValueError):
        extract_patches(np.zeros((80, 80, 3), np.uint8), np.ones((70, 80), bool))


def test_quantize_constant_patch():
    q = quantize_colors(np.full((64, 64, 3), 12, np.uint8))
    assert len(q.palette) == 1
    np.testing.assert_array_equal(q.indices, 0)


def test_quantize_two_colors_exact():
    p = np.zeros((64, 64, 3), np.uint8)
    p[:, 32:] = (200, 10, 40)
    q = quantize_colors(p)
    assert len(q.palette) == 2
    np.testing.assert_array_equal(q.rgb(), p.astype(float))


def _best_two_partition_sse(colors, weights):
    best = np.inf
    n = len(colors)
    for mask in itertools.product((0, 1), repeat=n):
        m = np.array(mask, bool)
        if m.all() or not m.any():
            continue
        sse = 0.0
        for part in (m, ~m):
            w = weights[part]
            c = (w[:, None] * colors[part]).sum(0) / w.sum()
            sse += np.sum(w * ((colors[part] - c) ** 2).sum(1))
        best = min(best, sse)
    return best


def test_kmeans_four_colors_reaches_brute_force_optimum():
    colors = np.array([[0, 0, 0], [10, 0, 0], [200, 200, 0], [210, 190, 5]], float)
    weights = np.array([3.0, 1.0, 2.0, 5.0])
    _, _, trace = kmeans_colors(colors, weights, 2, seed=0)
    assert trace[-1] == pytest.approx(_best_two_partition_sse(colors, weights))


def test_kmeans_sse_non_increasing(rng):
    for seed in range(5):
        colors = rng.integers(0, 256, (60, 3)).astype(float)
        weights = rng.integers(1, 20, 60).astype(float)
        _, _, trace = kmeans_colors(colors, weights, 8, seed=seed)
        assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))


def test_quantize_many_colors(rng):
    p = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
    q = quantize_colors(p, n_colors=32, seed=1)
    assert 1 <= len(q.palette) <= 32
    assert set(np.unique(q.indices)) == set(range(len(q.palette)))
    q2 = quantize_colors(p, n_colors=32, seed=1)
    np.testing.assert_array_equal(q.indices, q2.indices)


def test_quantize_roi(rng):
    img = rng.integers(0, 4, (70, 70, 3), dtype=np.uint8) * 60
    mask = np.zeros((70, 70), bool)
    mask[5:60, 5:60] = True
    idx, palette = quantize_image_roi(img, mask, n_colors=8)
    assert (idx[~mask] == -1).all()
    assert idx[mask].min() >= 0 and idx[mask].max() < len(palette) <= 8


def test_image_io(tmp_path):
    from PIL import Image

    arr = np.zeros((20, 30, 3), np.uint8)
    arr[5:10] = 200
    Image.fromarray(arr).save(tmp_path / "a.png")
    Image.fromarray((arr[:, :, 0] > 0).astype(np.uint8) * 255).save(tmp_path / "m.png")
    np.testing.assert_array_equal(load_image(tmp_path / "a.png"), arr)
    m = load_mask(tmp_path / "m.png")
    assert m.dtype == bool and m.sum() == 5 * 30

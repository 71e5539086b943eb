"""Statistical features over the RGB patch treated as an (h, w, 3) volume.

All matrix families use 26-neighbour connectivity: co-occurrences and runs are
aggregated over the 13 unique 3-D directions, size zones are 26-connected and
NGTDM neighbourhoods are the full 3x3x3 cube minus the centre. Gray levels are
0-based in the matrices and 1-based (``i = level + 1``) in every formula that
weights by gray level. Logarithms are natural.

Segment order (43 values): skewness, kurtosis, GLCM (13), GLRLM (11),
GLSZM (12), NGTDM (5).
"""

import math

import numpy as np
from scipy import ndimage

LEVELS = 8
NGTDM_COARSENESS_CAP = 1e6

GLCM_NAMES = (
    "energy", "contrast", "correlation", "variance", "inverse_difference_moment",
    "sum_average", "sum_variance", "sum_entropy", "entropy",
    "difference_variance", "difference_entropy", "imc1", "imc2",
)
RUN_NAMES = ("sre", "lre", "gln", "rln", "rp", "lgre", "hgre",
             "srlge", "srhge", "lrlge", "lrhge")
ZONE_NAMES = RUN_NAMES + ("zone_size_variance",)
NGTDM_NAMES = ("coarseness", "contrast", "busyness", "complexity", "strength")

SEGMENTS = (
    ("global_moments", 2),
    ("glcm", len(GLCM_NAMES)),
    ("glrlm", len(RUN_NAMES)),
    ("glszm", len(ZONE_NAMES)),
    ("ngtdm", len(NGTDM_NAMES)),
)
LENGTH = sum(n for _, n in SEGMENTS)


def directions_13():
    """The 13 offsets whose first non-zero component is positive."""
    out = []
    for d0 in (-1, 0, 1):
        for d1 in (-1, 0, 1):
            for d2 in (-1, 0, 1):
                o = (d0, d1, d2)
                nz = [v for v in o if v != 0]
                if nz and nz[0] > 0:
                    out.append(o)
    return out


def quantize_levels(values, levels=LEVELS):
    """Uniform quantization of 0-255 values into ``levels`` bins."""
    v = np.asarray(values, dtype=np.int64)
    return np.clip(v * levels // 256, 0, levels - 1)


def _overlap(shape, o):
    src = tuple(slice(max(0, -d), n - max(0, d)) for n, d in zip(shape, o))
    dst = tuple(slice(max(0, d), n - max(0, -d)) for n, d in zip(shape, o))
    return src, dst


def glcm_3d(volume, levels):
    """Symmetric co-occurrence counts summed over the 13 directions."""
    vol = np.asarray(volume, dtype=np.int64)
    m = np.zeros(levels * levels, dtype=np.int64)
    for o in directions_13():
        src, dst = _overlap(vol.shape, o)
        a = vol[src].ravel()
        b = vol[dst].ravel()
        m += np.bincount(a * levels + b, minlength=levels * levels)
        m += np.bincount(b * levels + a, minlength=levels * levels)
    return m.reshape(levels, levels)


def glrlm_3d(volume, levels):
    """Run-length counts ``[level, run_length - 1]`` summed over 13 directions."""
    vol = np.asarray(volume, dtype=np.int64)
    shape = np.array(vol.shape)
    max_run = int(shape.max())
    m = np.zeros((levels, max_run), dtype=np.int64)
    coords = np.indices(vol.shape).reshape(vol.ndim, -1).T
    flat = vol.ravel()
    for o in directions_13():
        o = np.array(o)
        prev = coords - o
        inside = np.all((prev >= 0) & (prev < shape), axis=1)
        start = ~inside
        pi = prev[inside]
        start[inside] = vol[tuple(pi.T)] != flat[inside]
        pos = coords[start]
        lvl = flat[start]
        length = np.ones(len(pos), dtype=np.int64)
        alive = np.ones(len(pos), dtype=bool)
        step = 1
        while np.any(alive):
            nxt = pos + step * o
            ok = np.all((nxt >= 0) & (nxt < shape), axis=1) & alive
            idx = np.flatnonzero(ok)
            same = vol[tuple(nxt[idx].T)] == lvl[idx]
            alive[:] = False
            alive[idx[same]] = True
            length += alive
            step += 1
        np.add.at(m, (lvl, length - 1), 1)
    return m


def glszm_3d(volume, levels):
    """Size-zone counts ``[level, zone_size - 1]`` with 26-connected zones."""
    vol = np.asarray(volume, dtype=np.int64)
    structure = np.ones((3,) * vol.ndim, dtype=bool)
    m = np.zeros((levels, vol.size), dtype=np.int64)
    for lvl in range(levels):
        labels, n = ndimage.label(vol == lvl, structure=structure)
        if n:
            sizes = np.bincount(labels.ravel())[1:]
            np.add.at(m[lvl], sizes - 1, 1)
    return m


def ngtdm_3d(volume, levels):
    """Neighbourhood gray-tone difference table.

    Returns ``(n, s)`` where ``n[i]`` counts voxels at level ``i`` that have
    at least one in-bounds neighbour and ``s[i]`` sums ``|i - mean of
    neighbours|`` over those voxels.
    """
    vol = np.asarray(volume, dtype=np.float64)
    kernel = np.ones((3,) * vol.ndim)
    kernel[(1,) * vol.ndim] = 0.0
    total = ndimage.convolve(vol, kernel, mode="constant", cval=0.0)
    count = ndimage.convolve(np.ones_like(vol), kernel, mode="constant", cval=0.0)
    valid = count > 0
    lvl = vol.astype(np.int64)[valid]
    diff = np.abs(vol[valid] - total[valid] / count[valid])
    n = np.bincount(lvl, minlength=levels)[:levels]
    s = np.bincount(lvl, weights=diff, minlength=levels)[:levels]
    return n, s


def _entropy(p):
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def glcm_features(counts):
    total = counts.sum()
    ng = counts.shape[0]
    if total == 0:
        return np.zeros(len(GLCM_NAMES))
    p = counts / total
    i = np.arange(1, ng + 1, dtype=np.float64)
    ii, jj = np.meshgrid(i, i, indexing="ij")
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    mux, muy = np.dot(i, px), np.dot(i, py)
    sx = math.sqrt(max(np.dot((i - mux) ** 2, px), 0.0))
    sy = math.sqrt(max(np.dot((i - muy) ** 2, py), 0.0))

    energy = np.sum(p ** 2)
    contrast = np.sum((ii - jj) ** 2 * p)
    correlation = ((np.sum(ii * jj * p) - mux * muy) / (sx * sy)) if sx * sy > 1e-15 else 0.0
    variance = np.sum((ii - mux) ** 2 * p)
    idm = np.sum(p / (1.0 + (ii - jj) ** 2))

    ksum = (ii + jj).astype(int).ravel()
    psum = np.bincount(ksum, weights=p.ravel(), minlength=2 * ng + 1)
    k = np.arange(len(psum), dtype=np.float64)
    sum_avg = np.dot(k, psum)
    sum_var = np.dot((k - sum_avg) ** 2, psum)
    sum_ent = _entropy(psum)
    ent = _entropy(p.ravel())

    kdiff = np.abs(ii - jj).astype(int).ravel()
    pdiff = np.bincount(kdiff, weights=p.ravel(), minlength=ng)
    kd = np.arange(len(pdiff), dtype=np.float64)
    mud = np.dot(kd, pdiff)
    diff_var = np.dot((kd - mud) ** 2, pdiff)
    diff_ent = _entropy(pdiff)

    hx, hy = _entropy(px), _entropy(py)
    pxpy = np.outer(px, py)
    nz = p > 0
    hxy1 = float(-np.sum(p[nz] * np.log(pxpy[nz])))
    nzo = pxpy > 0
    hxy2 = float(-np.sum(pxpy[nzo] * np.log(pxpy[nzo])))
    hmax = max(hx, hy)
    imc1 = (ent - hxy1) / hmax if hmax > 1e-15 else 0.0
    imc2 = math.sqrt(max(0.0, 1.0 - math.exp(-2.0 * (hxy2 - ent))))
    return np.array([energy, contrast, correlation, variance, idm, sum_avg, sum_var,
                     sum_ent, ent, diff_var, diff_ent, imc1, imc2], dtype=np.float64)


def run_features(counts, n_voxels=None):
    """Run-length style statistics over a ``[level, length - 1]`` matrix.

    The same definitions serve GLRLM (runs) and GLSZM (zones). The
    percentage feature divides the number of runs by ``n_voxels``, which
    defaults to the number of voxels covered by the runs.
    """
    m = np.asarray(counts, dtype=np.float64)
    nr = m.sum()
    if nr == 0:
        return np.zeros(len(RUN_NAMES))
    i = np.arange(1, m.shape[0] + 1, dtype=np.float64)[:, None]
    j = np.arange(1, m.shape[1] + 1, dtype=np.float64)[None, :]
    if n_voxels is None:
        n_voxels = float(np.sum(m * j))
    i2, j2 = i ** 2, j ** 2
    return np.array([
        np.sum(m / j2) / nr,
        np.sum(m * j2) / nr,
        np.sum(m.sum(axis=1) ** 2) / nr,
        np.sum(m.sum(axis=0) ** 2) / nr,
        nr / n_voxels,
        np.sum(m / i2) / nr,
        np.sum(m * i2) / nr,
        np.sum(m / (i2 * j2)) / nr,
        np.sum(m * i2 / j2) / nr,
        np.sum(m * j2 / i2) / nr,
        np.sum(m * i2 * j2) / nr,
    ])


def zone_features(counts):
    m = np.asarray(counts, dtype=np.float64)
    base = run_features(m)
    nz = m.sum()
    if nz == 0:
        return np.append(base, 0.0)
    p = m / nz
    j = np.arange(1, m.shape[1] + 1, dtype=np.float64)[None, :]
    mu = np.sum(p * j)
    return np.append(base, np.sum(p * (j - mu) ** 2))


def ngtdm_features(n, s):
    n = np.asarray(n, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    nvp = n.sum()
    if nvp == 0:
        return np.zeros(len(NGTDM_NAMES))
    p = n / nvp
    i = np.arange(1, len(n) + 1, dtype=np.float64)
    present = p > 0
    ngp = int(present.sum())
    ps = np.dot(p, s)
    coarseness = 1.0 / ps if ps > 1e-15 else NGTDM_COARSENESS_CAP

    ip, pp, sp = i[present], p[present], s[present]
    di = ip[:, None] - ip[None, :]
    if ngp > 1:
        contrast = (np.sum(pp[:, None] * pp[None, :] * di ** 2) / (ngp * (ngp - 1))
                    * s.sum() / nvp)
    else:
        contrast = 0.0
    denom = np.sum(np.abs(ip[:, None] * pp[:, None] - ip[None, :] * pp[None, :]))
    busyness = ps / denom if denom > 1e-15 else 0.0
    complexity = np.sum(np.abs(di) * (pp[:, None] * sp[:, None] + pp[None, :] * sp[None, :])
                        / (pp[:, None] + pp[None, :])) / nvp
    ssum = s.sum()
    strength = (np.sum((pp[:, None] + pp[None, :]) * di ** 2) / ssum) if ssum > 1e-15 else 0.0
    return np.array([coarseness, contrast, busyness, complexity, strength])


def global_moments(values):
    """Skewness and (Pearson) kurtosis; both 0 for a constant input."""
    v = np.asarray(values, dtype=np.float64).ravel()
    c = v - v.mean()
    var = np.mean(c ** 2)
    if var <= 1e-12:
        return np.zeros(2)
    return np.array([np.mean(c ** 3) / var ** 1.5, np.mean(c ** 4) / var ** 2])


def matrix_features(volume, levels):
    """All matrix-derived statistics (41 values) for an integer-level volume."""
    return np.concatenate([
        glcm_features(glcm_3d(volume, levels)),
        run_features(glrlm_3d(volume, levels)),
        zone_features(glszm_3d(volume, levels)),
        ngtdm_features(*ngtdm_3d(volume, levels)),
    ])


def statistical_features(pixels, levels=LEVELS):
    raw = np.asarray(pixels)
    out = np.concatenate([global_moments(raw), matrix_features(quantize_levels(raw, levels), levels)])
    assert out.shape == (LENGTH,)
    return out

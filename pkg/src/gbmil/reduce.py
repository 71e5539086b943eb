"""Train-fitted standardization and PCA."""

from dataclasses import dataclass

import numpy as np

from . import serialize

SCALE_FLOOR = 1e-12


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def transform(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.mean.shape[0]:
            raise ValueError(f"expected {self.mean.shape[0]} features, got {x.shape[-1]}")
        return (x - self.mean) / self.scale

    @classmethod
    def centering(cls, x):
        """Mean removal only (unit scale)."""
        x = np.asarray(x, dtype=np.float64)
        return cls(x.mean(axis=0), np.ones(x.shape[1]))


@dataclass(frozen=True)
class PCAProjection:
    components: np.ndarray   # (d_out, d_in), orthonormal rows
    eigenvalues: np.ndarray  # kept eigenvalues, descending
    variance_kept: float
    all_eigenvalues: np.ndarray

    @property
    def d_out(self):
        return self.components.shape[0]

    @property
    def d_in(self):
        return self.components.shape[1]


def fit_standardizer(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("standardizer needs at least two rows")
    mean = x.mean(axis=0)
    scale = np.maximum(x.std(axis=0), SCALE_FLOOR)
    return Standardizer(mean, scale)


def fit_pca(x, variance=0.95):
    """Keep the fewest leading components reaching the variance fraction.

    Each component's largest-magnitude coefficient is made positive so the
    projection is reproducible.
    """
    if not 0.0 < variance <= 1.0:
        raise ValueError("variance must lie in (0, 1]")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("PCA needs at least two rows")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (x.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    total = evals.sum()
    if total <= 0:
        raise ValueError("training data has zero variance")
    cum = np.cumsum(evals) / total
    k = int(np.searchsorted(cum, variance - 1e-12) + 1)
    k = min(k, int(np.count_nonzero(evals > 0)))
    comps = evecs[:, :k].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PCAProjection(comps, evals[:k].copy(), float(cum[k - 1]), evals)


def transform(proj, std, x):
    """Standardize with train statistics, then project."""
    z = std.transform(x)
    if z.shape[-1] != proj.d_in:
        raise ValueError(f"expected {proj.d_in} features, got {z.shape[-1]}")
    return z @ proj.components.T


@dataclass(frozen=True)
class Reducer:
    """Standardizer + PCA fitted on one training split."""

    std: Standardizer
    pca: PCAProjection
    standardize: bool = True

    def __call__(self, x):
        return transform(self.pca, self.std, x)

    def dumps(self):
        return serialize.dumps("reducer", {
            "mean": self.std.mean, "scale": self.std.scale,
            "components": self.pca.components, "eigenvalues": self.pca.eigenvalues,
            "all_eigenvalues": self.pca.all_eigenvalues,
        }, {"variance_kept": self.pca.variance_kept, "standardize": self.standardize})

    @classmethod
    def loads(cls, data):
        a, meta = serialize.loads(data, "reducer")
        return cls(Standardizer(a["mean"], a["scale"]),
                   PCAProjection(a["components"], a["eigenvalues"], meta["variance_kept"],
                                 a["all_eigenvalues"]),
                   meta["standardize"])


def fit_reducer(train_x, variance=0.95, standardize=True):
    train_x = np.asarray(train_x, dtype=np.float64)
    std = fit_standardizer(train_x) if standardize else Standardizer.centering(train_x)
    return Reducer(std, fit_pca(std.transform(train_x), variance), standardize)

"""Soft-margin binary SVM solved in the dual, plus grid search.

The solver is sequential minimal optimization with second-order working set
selection on a precomputed Gram matrix, so problem sizes are limited to a few
thousand rows.
"""

import itertools
import logging
from dataclasses import dataclass

import numba
import numpy as np

from . import serialize

log = logging.getLogger(__name__)

LINEAR = "linear"
RBF = "rbf"
TAU = 1e-12

DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
GAMMA_EXPONENTS = (-3, -2, -1, 0, 1, 2, 3)


@dataclass(frozen=True)
class KernelSpec:
    kind: str = LINEAR
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in (LINEAR, RBF):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == RBF and not self.gamma > 0:
            raise ValueError("RBF gamma must be positive")

    def __call__(self, a, b):
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        b = np.atleast_2d(np.asarray(b, dtype=np.float64))
        dot = a @ b.T
        if self.kind == LINEAR:
            return dot
        sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * dot
        return np.exp(-self.gamma * np.maximum(sq, 0.0))


def default_gamma_grid(dim):
    return tuple((2.0 ** j) / dim for j in GAMMA_EXPONENTS)


@numba.njit(cache=True)
def _smo(K, y, C, eps, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    while it < max_iter:
        # working set selection (second order)
        gmax = -np.inf
        i = -1
        for t in range(n):
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                v = -y[t] * G[t]
                if v > gmax:
                    gmax = v
                    i = t
        gmin = np.inf
        j = -1
        best = np.inf
        for t in range(n):
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                v = -y[t] * G[t]
                if v < gmin:
                    gmin = v
                if i >= 0:
                    b = gmax - v
                    if b > 0:
                        a = K[i, i] + K[t, t] - 2.0 * K[i, t]
                        if a <= 0:
                            a = TAU
                        obj = -(b * b) / a
                        if obj < best:
                            best = obj
                            j = t
        if i < 0 or j < 0 or gmax - gmin < eps:
            break
        it += 1

        qi = y[i] * y[i] * K[i, i]
        qj = y[j] * y[j] * K[j, j]
        qij = y[i] * y[j] * K[i, j]
        ai_old = alpha[i]
        aj_old = alpha[j]
        if y[i] != y[j]:
            quad = qi + qj + 2.0 * qij
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = qi + qj - 2.0 * qij
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            s = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if s > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = s - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = s
            if s > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = s - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = s
        dai = alpha[i] - ai_old
        daj = alpha[j] - aj_old
        for t in range(n):
            G[t] += y[t] * (y[i] * K[i, t] * dai + y[j] * K[j, t] * daj)

    # offset: average over free vectors, else midpoint of the feasible range
    nfree = 0
    sfree = 0.0
    ub = np.inf
    lb = -np.inf
    for t in range(n):
        yg = y[t] * G[t]
        if alpha[t] >= C:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            nfree += 1
            sfree += yg
    rho = sfree / nfree if nfree > 0 else (ub + lb) / 2.0
    return alpha, -rho, it


@dataclass(frozen=True)
class SVMModel:
    support: np.ndarray  # (n_sv, d)
    coef: np.ndarray     # alpha_i * y_i
    bias: float
    kernel: KernelSpec
    C: float
    alpha: np.ndarray = None   # full dual vector of the training problem
    n_iter: int = 0

    def decision(self, x):
        """f(x) = sum_i alpha_i y_i k(x_i, x) + b; vector input gives a float."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.support.shape[1]:
            raise ValueError(f"expected {self.support.shape[1]} features, got {x.shape[1]}")
        if len(self.coef) == 0:
            f = np.full(x.shape[0], self.bias)
        else:
            f = self.kernel(x, self.support) @ self.coef + self.bias
        return float(f[0]) if single else f

    def predict(self, x):
        return np.where(np.asarray(self.decision(x)) >= 0, 1, -1)

    def dumps(self):
        return serialize.dumps("svm", {"support": self.support, "coef": self.coef},
                               {"bias": self.bias, "kernel": self.kernel.kind,
                                "gamma": self.kernel.gamma, "C": self.C})

    @classmethod
    def loads(cls, data):
        a, meta = serialize.loads(data, "svm")
        return cls(a["support"], a["coef"], meta["bias"],
                   KernelSpec(meta["kernel"], meta["gamma"]), meta["C"])


def train_svm(x, y, C=1.0, kernel=KernelSpec(), tol=1e-3, seed=0, max_iter=10_000_000):
    """Train on rows ``x`` with labels in {+1, -1}.

    ``tol`` bounds the maximal KKT violation at exit. The solver is
    deterministic; ``seed`` only fixes the row order used for tie-breaking in
    working set selection.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("x and y sizes differ")
    if x.shape[0] < 2:
        raise ValueError("need at least two training rows")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be +1 or -1")
    if np.all(y == y[0]):
        raise ValueError("training data contains a single class")
    if not C > 0:
        raise ValueError("C must be positive")
    order = np.random.default_rng(seed).permutation(len(y)) if seed else np.arange(len(y))
    xo, yo = x[order], y[order]
    K = kernel(xo, xo)
    alpha_o, bias, n_iter = _smo(K, yo, float(C), float(tol), int(max_iter))
    alpha = np.empty_like(alpha_o)
    alpha[order] = alpha_o
    sv = alpha > 0
    return SVMModel(x[sv].copy(), (alpha * y)[sv], float(bias), kernel, float(C), alpha, int(n_iter))


def decision(model, x):
    return model.decision(x)


def dual_objective(alpha, K, y):
    """Dual objective sum(alpha) - 1/2 alpha^T Q alpha (to be maximized)."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def stratified_folds(labels, k, seed):
    """Fold index per item, dealing each class round-robin after a shuffle."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    fold = np.empty(len(labels), dtype=np.int64)
    start = 0
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        fold[idx] = (start + np.arange(len(idx))) % k
        start += len(idx)
    return fold


def grid_search(items, labels, train_fn, grid, inner_k=3, seed=0):
    """Pick the grid point with the best mean inner-CV accuracy.

    ``train_fn(params, train_items, train_labels)`` must return a callable
    mapping a list of items to predicted labels. ``grid`` maps parameter
    names to candidate values; ties go to the smallest value of the first
    key, then of the second, and so on. Returns ``(best_params, scores)``.
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("empty hyper-parameter grid")
    keys = list(grid)
    candidates = [dict(zip(keys, combo))
                  for combo in itertools.product(*(sorted(grid[k]) for k in keys))]
    if len(candidates) == 1:
        return candidates[0], {}
    labels = np.asarray(labels)
    counts = [np.sum(labels == c) for c in np.unique(labels)]
    k = min(inner_k, min(counts)) if len(counts) > 1 else 0
    if k < 2:
        log.warning("grid search: too few items per class for inner CV; using first grid point")
        return candidates[0], {}
    folds = stratified_folds(labels, k, seed)
    scores = {}
    best, best_acc = None, -1.0
    for params in candidates:
        accs = []
        for f in range(k):
            tr = np.flatnonzero(folds != f)
            te = np.flatnonzero(folds == f)
            predict = train_fn(params, [items[i] for i in tr], labels[tr])
            pred = np.asarray(predict([items[i] for i in te]))
            accs.append(float(np.mean(pred == labels[te])))
        acc = float(np.mean(accs))
        scores[tuple(params[key] for key in keys)] = acc
        if acc > best_acc + 1e-12:
            best, best_acc = params, acc
    return best, scores

"""Multiple-instance classifiers.

MI-VBGMM embeds each bag as the normalized sum of its instances'
VBGMM responsibilities and trains an SVM on the embeddings. The baselines are
Citation-kNN over the minimal Hausdorff distance, mi-SVM (instance-label
alternation) and MI-SVM (witness alternation).

Every classifier exposes ``predict(bag) -> (label, score)``. The score is the
SVM decision value for the SVM-based methods and the signed vote fraction
``(pos - neg) / (pos + neg)`` for Citation-kNN; its magnitude breaks ties in
video-level voting.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from . import serialize, svmcore, vbgmm
from .bagcore import NEGATIVE, POSITIVE
from .svmcore import KernelSpec

log = logging.getLogger(__name__)

MI_VBGMM = "mivbgmm"
CKNN = "cknn"
MI_SVM_INSTANCE = "misvm"   # mi-SVM
MI_SVM_BAG = "MISVM"        # MI-SVM
METHODS = (MI_VBGMM, CKNN, MI_SVM_INSTANCE, MI_SVM_BAG)


@dataclass(frozen=True)
class MILConfig:
    kernel: str = svmcore.LINEAR
    c_grid: tuple = svmcore.DEFAULT_C_GRID
    gamma_grid: tuple = None          # None: 2^j / d for j in -3..3
    inner_folds: int = 3
    svm_tol: float = 1e-3
    k_init: int = 50
    prune_threshold: float = 0.01
    vb_tol: float = 1e-5
    vb_max_iter: int = 200
    vb_delete_moves: bool = True
    cknn_refs: tuple = (1, 3, 5)
    cknn_citers: tuple = (0, 3, 5)
    cknn_tie_positive: bool = False
    max_alternations: int = 20
    seed: int = 0

    def svm_grid(self, dim):
        grid = {"C": tuple(self.c_grid)}
        if self.kernel == svmcore.RBF:
            grid["gamma"] = tuple(self.gamma_grid or svmcore.default_gamma_grid(dim))
        return grid

    def kernel_for(self, params):
        return KernelSpec(self.kernel, params.get("gamma", 1.0))


def bag_label_from_instances(labels):
    """Standard MIL rule: positive iff some instance is positive."""
    labels = list(labels)
    if not labels:
        raise ValueError("empty instance label list")
    return POSITIVE if any(l == POSITIVE for l in labels) else NEGATIVE


def _instances(bag):
    x = bag.instances if hasattr(bag, "instances") else np.asarray(bag, dtype=np.float64)
    x = np.atleast_2d(x)
    if x.shape[0] == 0:
        raise ValueError("empty bag")
    return x


# -- MI-VBGMM ---------------------------------------------------------------

@dataclass(frozen=True)
class BagEmbedding:
    z: np.ndarray
    c: float


def embed_bag(model, bag):
    """Mean responsibility vector of the bag's instances.

    ``model`` is a pruned :class:`VBGMMModel` or a ``ResponsibilityMap``.
    Each responsibility row sums to 1, so the normalizer is ``1 / m``.
    """
    x = _instances(bag)
    resp = model if isinstance(model, vbgmm.ResponsibilityMap) else vbgmm.ResponsibilityMap(model)
    g = resp(x)
    c = 1.0 / x.shape[0]
    return BagEmbedding(c * g.sum(axis=0), c)


class MIVBGMMClassifier:
    method = MI_VBGMM

    def __init__(self, mixture, svm, params):
        self.mixture = mixture
        self.svm = svm
        self.params = params
        self._resp = vbgmm.ResponsibilityMap(mixture)

    def embed(self, bag):
        return embed_bag(self._resp, bag).z

    def predict(self, bag):
        score = float(self.svm.decision(self.embed(bag)))
        return (POSITIVE if score >= 0 else NEGATIVE), score

    def dumps(self):
        return serialize.dumps("mil", {
            "mixture": serialize.blob(self.mixture.dumps()),
            "svm": serialize.blob(self.svm.dumps()),
        }, {"method": self.method, "params": self.params})


def _svm_train_fn(cfg):
    def train(params, xs, ys):
        model = svmcore.train_svm(np.asarray(xs), ys, params["C"], cfg.kernel_for(params),
                                  cfg.svm_tol)
        return model.predict
    return train


def mivbgmm_train(train, cfg=MILConfig()):
    """Fit and prune the mixture on pooled train instances, embed the train
    bags, then grid-search and train the SVM on the embeddings."""
    x, _ = train.stacked_instances()
    k_init = min(cfg.k_init, x.shape[0])
    mixture = vbgmm.prune(
        vbgmm.fit(x, k_init, tol=cfg.vb_tol, max_iter=cfg.vb_max_iter, seed=cfg.seed,
                  delete_moves=cfg.vb_delete_moves, threshold=cfg.prune_threshold),
        cfg.prune_threshold)
    resp = vbgmm.ResponsibilityMap(mixture)
    z = np.array([embed_bag(resp, b).z for b in train.bags])
    y = train.labels.astype(np.float64)
    params, _ = svmcore.grid_search(list(z), y, _svm_train_fn(cfg),
                                    cfg.svm_grid(z.shape[1]), cfg.inner_folds, cfg.seed)
    svm = svmcore.train_svm(z, y, params["C"], cfg.kernel_for(params), cfg.svm_tol)
    log.info("MI-VBGMM: K*=%d of %d, params=%s", mixture.k_star, k_init, params)
    return MIVBGMMClassifier(mixture, svm, params)


def mivbgmm_predict(clf, bag):
    return clf.predict(bag)


# -- Citation-kNN -----------------------------------------------------------

def min_hausdorff(a, b):
    """Smallest Euclidean distance between an instance of ``a`` and one of ``b``."""
    xa, xb = _instances(a), _instances(b)
    if xa.shape[1] != xb.shape[1]:
        raise ValueError("bags have different dimensions")
    return float(cdist(xa, xb).min())


def bag_distances(bags_a, bags_b):
    """Matrix of minimal Hausdorff distances between two bag lists."""
    xa = [_instances(b) for b in bags_a]
    xb = [_instances(b) for b in bags_b]
    full = cdist(np.vstack(xa), np.vstack(xb))
    ra = np.cumsum([0] + [len(v) for v in xa[:-1]])
    rb = np.cumsum([0] + [len(v) for v in xb[:-1]])
    return np.minimum.reduceat(np.minimum.reduceat(full, ra, axis=0), rb, axis=1)


def _cknn_vote(train_labels, train_dist, query_dist, refs, citers, tie_positive):
    n = len(train_labels)
    if refs > n:
        log.warning("CKNN: R=%d exceeds %d training bags; clamping", refs, n)
        refs = n
    nearest = np.argsort(query_dist, kind="stable")[:refs]
    voters = list(nearest)
    if citers > 0:
        for b in range(n):
            others = np.delete(train_dist[b], b)
            rank = 1 + int(np.sum(others < query_dist[b]))
            if rank <= citers:
                voters.append(b)
    votes = train_labels[voters]
    pos = int(np.sum(votes == POSITIVE))
    neg = len(votes) - pos
    if pos > neg or (pos == neg and tie_positive):
        label = POSITIVE
    else:
        label = NEGATIVE
    return label, (pos - neg) / len(votes)


def cknn_predict(train, query, R, C, tie_positive=False):
    """Citation-kNN label of ``query`` from R references and C-rank citers."""
    if R < 1 or C < 0:
        raise ValueError("need R >= 1 and C >= 0")
    bags = list(train.bags if hasattr(train, "bags") else train)
    labels = np.array([b.label for b in bags])
    return _cknn_vote(labels, bag_distances(bags, bags), bag_distances([query], bags)[0],
                      R, C, tie_positive)[0]


class CKNNClassifier:
    method = CKNN

    def __init__(self, bags, refs, citers, tie_positive=False):
        self.bags = list(bags)
        self.labels = np.array([b.label for b in self.bags])
        self.refs, self.citers, self.tie_positive = refs, citers, tie_positive
        self.params = {"R": refs, "C": citers}
        self._dist = bag_distances(self.bags, self.bags)

    def predict(self, bag):
        qd = bag_distances([bag], self.bags)[0]
        return _cknn_vote(self.labels, self._dist, qd, self.refs, self.citers, self.tie_positive)

    def dumps(self):
        x = np.vstack([b.instances for b in self.bags])
        sizes = np.array([b.size for b in self.bags])
        return serialize.dumps("mil", {"instances": x, "sizes": sizes, "labels": self.labels},
                               {"method": self.method, "params": self.params,
                                "bag_ids": [b.bag_id for b in self.bags],
                                "tie_positive": self.tie_positive})


def cknn_train(train, cfg=MILConfig()):
    bags = list(train.bags)
    y = train.labels

    def fit(params, tr_bags, _labels):
        clf = CKNNClassifier(tr_bags, params["R"], params["C"], cfg.cknn_tie_positive)
        return lambda qs: [clf.predict(q)[0] for q in qs]

    params, _ = svmcore.grid_search(bags, y, fit, {"R": cfg.cknn_refs, "C": cfg.cknn_citers},
                                    cfg.inner_folds, cfg.seed)
    return CKNNClassifier(bags, params["R"], params["C"], cfg.cknn_tie_positive)


# -- mi-SVM / MI-SVM ---------------------------------------------------------

class InstanceSVMClassifier:
    """Bag prediction from instance scores: positive iff the maximal
    instance decision is non-negative; the score is that maximum."""

    def __init__(self, method, svm, params, history):
        self.method = method
        self.svm = svm
        self.params = params
        self.history = history

    def instance_scores(self, bag):
        return np.atleast_1d(self.svm.decision(_instances(bag)))

    def predict(self, bag):
        score = float(self.instance_scores(bag).max())
        return (POSITIVE if score >= 0 else NEGATIVE), score

    def dumps(self):
        return serialize.dumps("mil", {"svm": serialize.blob(self.svm.dumps())},
                               {"method": self.method, "params": self.params,
                                "iterations": len(self.history)})


def _mi_svm_fit(bags, labels, C, kernel, tol, max_iter):
    x = np.vstack([_instances(b) for b in bags])
    owner = np.repeat(np.arange(len(bags)), [len(_instances(b)) for b in bags])
    work = np.asarray(labels, dtype=np.float64)[owner]
    pos_bags = [i for i, l in enumerate(labels) if l == POSITIVE]
    history = []
    svm = None
    for _ in range(max_iter):
        svm = svmcore.train_svm(x, work, C, kernel, tol)
        f = svm.decision(x)
        new = work.copy()
        for i in pos_bags:
            rows = np.flatnonzero(owner == i)
            new[rows] = np.where(f[rows] >= 0, 1.0, -1.0)
            if not np.any(new[rows] > 0):
                new[rows[np.argmax(f[rows])]] = 1.0
        changed = int(np.sum(new != work))
        history.append(changed)
        work = new
        if changed == 0:
            break
    return svm, history, work


def misvm_instance_train(train, cfg=MILConfig()):
    """mi-SVM: alternate SVM training and relabeling of positive-bag instances."""
    bags = list(train.bags)
    y = train.labels

    def fit(params, tr_bags, tr_labels):
        svm, _, _ = _mi_svm_fit(tr_bags, tr_labels, params["C"], cfg.kernel_for(params),
                                cfg.svm_tol, cfg.max_alternations)
        clf = InstanceSVMClassifier(MI_SVM_INSTANCE, svm, params, [])
        return lambda qs: [clf.predict(q)[0] for q in qs]

    params, _ = svmcore.grid_search(bags, y, fit, cfg.svm_grid(train.feature_dim),
                                    cfg.inner_folds, cfg.seed)
    svm, history, work = _mi_svm_fit(bags, y, params["C"], cfg.kernel_for(params),
                                     cfg.svm_tol, cfg.max_alternations)
    clf = InstanceSVMClassifier(MI_SVM_INSTANCE, svm, params, history)
    clf.working_labels = work
    return clf


def _MI_svm_fit(bags, labels, C, kernel, tol, max_iter):
    pos = [b for b, l in zip(bags, labels) if l == POSITIVE]
    neg = np.vstack([_instances(b) for b, l in zip(bags, labels) if l != POSITIVE]
                    or [np.empty((0, _instances(bags[0]).shape[1]))])
    pos_x = [_instances(b) for b in pos]
    witnesses = np.array([p.mean(axis=0) for p in pos_x])
    selected = None
    history = []
    svm = None
    for _ in range(max_iter):
        x = np.vstack([witnesses, neg])
        y = np.r_[np.ones(len(witnesses)), -np.ones(len(neg))]
        svm = svmcore.train_svm(x, y, C, kernel, tol)
        new = np.array([int(np.argmax(svm.decision(p))) for p in pos_x])
        stable = selected is not None and np.array_equal(new, selected)
        history.append(new.copy())
        selected = new
        witnesses = np.array([p[s] for p, s in zip(pos_x, selected)])
        if stable:
            break
    return svm, history, selected


def misvm_bag_train(train, cfg=MILConfig()):
    """MI-SVM: alternate SVM training and witness re-selection."""
    bags = list(train.bags)
    y = train.labels

    def fit(params, tr_bags, tr_labels):
        svm, _, _ = _MI_svm_fit(tr_bags, tr_labels, params["C"], cfg.kernel_for(params),
                                cfg.svm_tol, cfg.max_alternations)
        clf = InstanceSVMClassifier(MI_SVM_BAG, svm, params, [])
        return lambda qs: [clf.predict(q)[0] for q in qs]

    params, _ = svmcore.grid_search(bags, y, fit, cfg.svm_grid(train.feature_dim),
                                    cfg.inner_folds, cfg.seed)
    svm, history, selected = _MI_svm_fit(bags, y, params["C"], cfg.kernel_for(params),
                                         cfg.svm_tol, cfg.max_alternations)
    clf = InstanceSVMClassifier(MI_SVM_BAG, svm, params, history)
    clf.witnesses = selected
    return clf


TRAINERS = {
    MI_VBGMM: mivbgmm_train,
    CKNN: cknn_train,
    MI_SVM_INSTANCE: misvm_instance_train,
    MI_SVM_BAG: misvm_bag_train,
}


def train_method(method, train, cfg=MILConfig()):
    if method not in TRAINERS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    labels = train.labels
    if any(l is None for l in labels):
        raise ValueError("all training bags must be labeled")
    if len(set(labels.tolist())) < 2:
        raise ValueError("training split contains a single class")
    return TRAINERS[method](train, cfg)

"""By-video cross-validation, video majority voting, metrics and reports."""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import milmethods, reduce
from .bagcore import NEGATIVE, POSITIVE, DatasetError, fold_view, split_by_video
from .milmethods import MILConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PredictionRecord:
    bag_id: str
    video_id: str
    truth: int
    predicted: int
    score: float
    fold: int


@dataclass(frozen=True)
class MetricTable:
    """Percentages. ``undefined`` names metrics whose denominator was zero
    (reported as 0)."""

    acc: float
    pre: float
    rec: float
    f1: float
    undefined: tuple = ()

    def as_dict(self):
        return {"acc": self.acc, "pre": self.pre, "rec": self.rec, "f1": self.f1,
                "undefined": list(self.undefined)}


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows truth (L, H), cols predicted (L, H)

    def normalized(self):
        c = self.counts.astype(np.float64)
        rows = c.sum(axis=1, keepdims=True)
        return np.divide(100.0 * c, rows, out=np.zeros_like(c), where=rows > 0)


@dataclass(frozen=True)
class EvalConfig:
    folds: int = 5
    pca_variance: float = 0.95
    standardize: bool = True
    use_pca: bool = True
    stratify: bool = False
    mil: MILConfig = field(default_factory=MILConfig)


def f1_score(pre, rec):
    return 2.0 * pre * rec / (pre + rec) if pre + rec > 0 else 0.0


def compute_metrics(records, positive=POSITIVE):
    """Accuracy, precision, recall and F1 (in percent) with H as positive."""
    records = list(records)
    if not records:
        raise ValueError("no prediction records")
    truth = np.array([r.truth for r in records])
    pred = np.array([r.predicted for r in records])
    tp = int(np.sum((pred == positive) & (truth == positive)))
    fp = int(np.sum((pred == positive) & (truth != positive)))
    fn = int(np.sum((pred != positive) & (truth == positive)))
    tn = len(records) - tp - fp - fn
    undefined = []
    acc = 100.0 * (tp + tn) / len(records)
    if tp + fp:
        pre = 100.0 * tp / (tp + fp)
    else:
        pre = 0.0
        undefined.append("pre")
    if tp + fn:
        rec = 100.0 * tp / (tp + fn)
    else:
        rec = 0.0
        undefined.append("rec")
    if pre + rec == 0:
        undefined.append("f1")
    return MetricTable(acc, pre, rec, f1_score(pre, rec), tuple(undefined))


def mean_metrics(tables):
    tables = list(tables)
    return MetricTable(*(float(np.mean([getattr(t, k) for t in tables]))
                         for k in ("acc", "pre", "rec", "f1")))


def aggregate_confusion(records):
    """Confusion counts summed over all records (i.e. over folds)."""
    records = list(records)
    if not records:
        raise ValueError("no prediction records")
    counts = np.zeros((2, 2), dtype=np.int64)
    for r in records:
        counts[int(r.truth == POSITIVE), int(r.predicted == POSITIVE)] += 1
    return ConfusionMatrix(counts)


def video_vote(records):
    """Majority label of a video's image predictions.

    On a tie the label of the single record with the largest ``|score|``
    wins. Returns ``(label, margin)`` with margin = |#H - #L|.
    """
    records = list(records)
    if not records:
        raise ValueError("video has no image records")
    pos = sum(1 for r in records if r.predicted == POSITIVE)
    neg = len(records) - pos
    if pos != neg:
        return (POSITIVE if pos > neg else NEGATIVE), abs(pos - neg)
    # order-independent: strongest score, then positive label on exact equality
    best = max(records, key=lambda r: (abs(r.score), r.predicted == POSITIVE))
    return best.predicted, 0


def video_ground_truth(dataset):
    """Majority ground-truth image label per video; a tie is an error."""
    votes = {}
    for b in dataset.bags:
        if b.label is None:
            raise DatasetError(f"bag {b.bag_id!r} is unlabeled")
        votes.setdefault(b.video_id, []).append(b.label)
    out = {}
    for v, labels in sorted(votes.items()):
        s = sum(labels)
        if s == 0:
            raise DatasetError(f"video {v!r} has tied ground-truth image labels")
        out[v] = POSITIVE if s > 0 else NEGATIVE
    return out


def video_records(records, dataset):
    """One record per video: voted prediction vs majority ground truth."""
    truth = video_ground_truth(dataset)
    by_video = {}
    for r in records:
        by_video.setdefault(r.video_id, []).append(r)
    out = []
    for v in sorted(by_video):
        recs = by_video[v]
        label, margin = video_vote(recs)
        score = max((r.score for r in recs if r.predicted == label), key=abs)
        out.append(PredictionRecord(v, v, truth[v], label, float(score), recs[0].fold))
    return out


def fit_fold_reducer(train, cfg=EvalConfig()):
    """Standardizer + PCA fitted on the train split's instances only."""
    x, _ = train.stacked_instances()
    return reduce.fit_reducer(x, cfg.pca_variance if cfg.use_pca else 1.0, cfg.standardize)


@dataclass
class FoldInfo:
    fold: int
    n_train: int
    n_test: int
    d_out: int
    variance_kept: float
    params: dict
    k_star: int = None


def run_cv(dataset, method, cfg=EvalConfig(), k=None, seed=0, details=False):
    """Cross-validate ``method`` with folds split by video.

    ``method`` is a method name from :data:`milmethods.METHODS` or a callable
    ``trainer(train_dataset, mil_config)`` returning an object with
    ``predict(bag) -> (label, score)``. Returns the prediction records (and
    per-fold diagnostics when ``details`` is true).
    """
    k = k or cfg.folds
    split = split_by_video(dataset, k, seed, stratify=cfg.stratify)
    if callable(method):
        trainer = method
    else:
        if method not in milmethods.TRAINERS:
            raise ValueError(f"unknown method {method!r}")
        trainer = milmethods.TRAINERS[method]
    records = []
    infos = []
    for fold in range(k):
        train, test = fold_view(dataset, split, fold)
        labels = set(train.labels.tolist())
        if None in labels:
            raise DatasetError(f"fold {fold}: unlabeled training bag")
        if len(labels) < 2:
            raise DatasetError(f"fold {fold}: training split has only class "
                               f"{'H' if POSITIVE in labels else 'L'}; "
                               f"{len(train)} bags from {len(train.video_ids)} videos")
        red = fit_fold_reducer(train, cfg)
        train_r, test_r = train.map_instances(red), test.map_instances(red)
        clf = trainer(train_r, cfg.mil)
        for b in test_r.bags:
            label, score = clf.predict(b)
            records.append(PredictionRecord(b.bag_id, b.video_id, b.label, int(label),
                                            float(score), fold))
        mixture = getattr(clf, "mixture", None)
        infos.append(FoldInfo(fold, len(train), len(test), red.pca.d_out,
                              red.pca.variance_kept, dict(getattr(clf, "params", {}) or {}),
                              mixture.k_star if mixture is not None else None))
        log.info("fold %d: %d train / %d test bags, PCA %d dims", fold, len(train),
                 len(test), red.pca.d_out)
    return (records, infos) if details else records


def config_digest(obj):
    blob = json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _jsonable(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def build_report(records, dataset, method, cfg, seed, infos=(), task="both"):
    """Report dictionary in the ``report.json`` schema.

    Headline metrics are means over folds; pooled metrics are included too.
    """
    folds = sorted({r.fold for r in records})
    per_fold = [compute_metrics([r for r in records if r.fold == f]) for f in folds]
    report = {
        "method": method if isinstance(method, str) else getattr(method, "__name__", "custom"),
        "config_digest": config_digest(cfg),
        "seed": seed,
        "task": task,
        "n_bags": len(records),
        "folds": [_jsonable(asdict(i)) for i in infos],
    }
    if task in ("image", "both"):
        report["per_fold"] = [t.as_dict() for t in per_fold]
        report["mean"] = mean_metrics(per_fold).as_dict()
        report["pooled"] = compute_metrics(records).as_dict()
        conf = aggregate_confusion(records)
        report["confusion_image"] = conf.counts.tolist()
        report["confusion_image_normalized"] = conf.normalized().tolist()
    if task in ("video", "both"):
        vrec = video_records(records, dataset)
        vfold = [compute_metrics([r for r in vrec if r.fold == f]) for f in folds]
        report["video_per_fold"] = [t.as_dict() for t in vfold]
        report["video_level"] = mean_metrics(vfold).as_dict()
        report["video_pooled"] = compute_metrics(vrec).as_dict()
        conf = aggregate_confusion(vrec)
        report["confusion_video"] = conf.counts.tolist()
        report["confusion_video_normalized"] = conf.normalized().tolist()
    return _jsonable(report)


def dumps_report(report):
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def render_text(report):
    """Plain-text metric table for a report dictionary."""
    lines = [f"method: {report['method']}   seed: {report['seed']}   "
             f"config: {report['config_digest'][:12]}"]
    header = f"{'':<18}{'Acc':>8}{'Pre':>8}{'Rec':>8}{'F1':>8}"
    lines.append(header)
    rows = [("image (mean)", "mean"), ("image (pooled)", "pooled"),
            ("video (mean)", "video_level"), ("video (pooled)", "video_pooled")]
    for title, key in rows:
        if key in report:
            m = report[key]
            lines.append(f"{title:<18}{m['acc']:>8.1f}{m['pre']:>8.1f}{m['rec']:>8.1f}{m['f1']:>8.1f}")
    for key, title in (("confusion_image_normalized", "image"),
                       ("confusion_video_normalized", "video")):
        if key in report:
            c = report[key]
            lines.append(f"{title} confusion (rows truth L,H; %): "
                         f"L[{c[0][0]:.1f} {c[0][1]:.1f}] H[{c[1][0]:.1f} {c[1][1]:.1f}]")
    return "\n".join(lines) + "\n"

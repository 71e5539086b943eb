"""Bags, datasets and the by-video fold protocol.

Labels use +1 for H (high vascularity, the positive class) and -1 for L.
An unlabeled bag carries ``label=None``.

On-disk layout
--------------
A dataset is a manifest plus one or more feature matrix files.

Manifest: UTF-8 text, one record per line, comma separated::

    bag_id,video_id,label,feature_file,row_begin,row_count

``label`` is ``L``, ``H`` or ``?``. ``feature_file`` is relative to the
manifest's directory. Blank lines and lines starting with ``#`` are ignored.
Fields may not contain commas.

Feature matrix file: a 16-byte header of two little-endian uint64 values
``(rows, cols)`` followed by ``rows * cols`` little-endian float64 values in
row-major order. A bag owns rows ``[row_begin, row_begin + row_count)``.
"""

import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

POSITIVE = 1
NEGATIVE = -1

_LABEL_TO_TEXT = {POSITIVE: "H", NEGATIVE: "L", None: "?"}
_TEXT_TO_LABEL = {v: k for k, v in _LABEL_TO_TEXT.items()}


class DatasetError(ValueError):
    """Malformed dataset, manifest or split request."""


@dataclass(frozen=True, eq=False)
class Bag:
    """One labeled set of instances.

    ``instances`` is an ``(m, d)`` float array with ``m >= 1``.
    ``instance_labels`` holds hidden per-instance labels when they are known
    (synthetic data); no learner reads them.
    """

    bag_id: str
    video_id: str
    instances: np.ndarray
    label: Optional[int] = None
    instance_labels: Optional[np.ndarray] = None
    sources: Optional[tuple] = None

    def __post_init__(self):
        x = np.array(self.instances, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[0] < 1:
            raise DatasetError(f"bag {self.bag_id!r} needs at least one instance")
        if not np.all(np.isfinite(x)):
            raise DatasetError(f"bag {self.bag_id!r} has non-finite values")
        if self.label not in (POSITIVE, NEGATIVE, None):
            raise DatasetError(f"bag {self.bag_id!r}: label must be +1, -1 or None")
        x.setflags(write=False)
        object.__setattr__(self, "instances", x)
        if self.instance_labels is not None:
            il = np.asarray(self.instance_labels, dtype=np.int64)
            if il.shape != (x.shape[0],):
                raise DatasetError(f"bag {self.bag_id!r}: instance label count mismatch")
            il.setflags(write=False)
            object.__setattr__(self, "instance_labels", il)

    @property
    def size(self):
        return self.instances.shape[0]

    @property
    def dim(self):
        return self.instances.shape[1]

    def with_instances(self, instances):
        """Copy of the bag with transformed instances (same ids and label)."""
        return Bag(self.bag_id, self.video_id, instances, self.label,
                   self.instance_labels, self.sources)


@dataclass(frozen=True, eq=False)
class Dataset:
    bags: tuple
    feature_dim: int = field(default=0)

    def __post_init__(self):
        bags = tuple(self.bags)
        if not bags:
            raise DatasetError("a dataset needs at least one bag")
        dim = self.feature_dim or bags[0].dim
        seen = set()
        for b in bags:
            if b.bag_id in seen:
                raise DatasetError(f"duplicate bag_id {b.bag_id!r}")
            seen.add(b.bag_id)
            if b.dim != dim:
                raise DatasetError(
                    f"bag {b.bag_id!r} has dimension {b.dim}, expected {dim}")
        object.__setattr__(self, "bags", bags)
        object.__setattr__(self, "feature_dim", dim)

    def __len__(self):
        return len(self.bags)

    def __iter__(self):
        return iter(self.bags)

    @property
    def labels(self):
        return np.array([b.label for b in self.bags])

    @property
    def video_ids(self):
        return sorted({b.video_id for b in self.bags})

    def stacked_instances(self):
        """All instances as one matrix plus the owning bag index per row."""
        x = np.vstack([b.instances for b in self.bags])
        owner = np.repeat(np.arange(len(self.bags)), [b.size for b in self.bags])
        return x, owner

    def map_instances(self, fn):
        """New dataset with ``fn`` applied to each bag's instance matrix."""
        return Dataset(tuple(b.with_instances(fn(b.instances)) for b in self.bags))

    def subset(self, bag_ids):
        keep = set(bag_ids)
        return Dataset(tuple(b for b in self.bags if b.bag_id in keep))


@dataclass(frozen=True)
class FoldSplit:
    k: int
    assignment: dict

    def fold_of(self, video_id):
        return self.assignment[video_id]

    def fold_sizes(self):
        sizes = [0] * self.k
        for f in self.assignment.values():
            sizes[f] += 1
        return sizes


def split_by_video(dataset, k, seed, stratify=False):
    """Assign each video to one of ``k`` folds.

    Video ids are sorted, shuffled with ``seed`` and dealt round-robin, so
    fold sizes differ by at most one video. With ``stratify=True`` videos are
    dealt separately per majority label (ties count as positive), which keeps
    the per-class spread even but is off by default.
    """
    if k < 2:
        raise DatasetError("need k >= 2 folds")
    videos = dataset.video_ids
    if len(videos) < k:
        raise DatasetError(f"{len(videos)} videos cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    if not stratify:
        groups = [videos]
    else:
        votes = {}
        for b in dataset.bags:
            votes[b.video_id] = votes.get(b.video_id, 0) + (b.label or 0)
        groups = [[v for v in videos if votes[v] >= 0],
                  [v for v in videos if votes[v] < 0]]
    assignment = {}
    nxt = 0
    for group in groups:
        order = rng.permutation(len(group))
        for v in (group[i] for i in order):
            assignment[v] = nxt % k
            nxt += 1
    return FoldSplit(k, assignment)


def fold_view(dataset, split, test_fold):
    """Return ``(train, test)`` datasets for one fold, bags in bag_id order."""
    if not 0 <= test_fold < split.k:
        raise DatasetError(f"fold index {test_fold} outside [0, {split.k})")
    ordered = sorted(dataset.bags, key=lambda b: b.bag_id)
    train = [b for b in ordered if split.assignment[b.video_id] != test_fold]
    test = [b for b in ordered if split.assignment[b.video_id] == test_fold]
    if not train or not test:
        raise DatasetError(f"fold {test_fold} leaves an empty train or test side")
    return Dataset(tuple(train)), Dataset(tuple(test))


def class_counts(dataset):
    """``(n_negative, n_positive)`` over all bags; every bag must be labeled."""
    neg = pos = 0
    for b in dataset.bags:
        if b.label is None:
            raise DatasetError(f"bag {b.bag_id!r} is unlabeled")
        if b.label == POSITIVE:
            pos += 1
        else:
            neg += 1
    return neg, pos


# -- on-disk format ---------------------------------------------------------

_HEADER = struct.Struct("<QQ")


def write_matrix(path, x):
    x = np.ascontiguousarray(x, dtype="<f8")
    if x.ndim != 2:
        raise DatasetError("feature matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*x.shape))
        fh.write(x.tobytes())


def read_matrix(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise DatasetError(f"{path}: truncated header")
    rows, cols = _HEADER.unpack_from(data)
    expected = _HEADER.size + rows * cols * 8
    if len(data) != expected:
        raise DatasetError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(rows, cols).copy()


def write_dataset(dataset, manifest_path, feature_file="features.bin"):
    """Write every bag's rows into one feature file next to the manifest."""
    root = os.path.dirname(os.path.abspath(manifest_path))
    x, _ = dataset.stacked_instances()
    write_matrix(os.path.join(root, feature_file), x)
    lines = ["# bag_id,video_id,label,feature_file,row_begin,row_count"]
    row = 0
    for b in dataset.bags:
        for token in (b.bag_id, b.video_id):
            if "," in token or "\n" in token:
                raise DatasetError(f"identifier {token!r} may not contain ',' or newlines")
        lines.append(",".join([b.bag_id, b.video_id, _LABEL_TO_TEXT[b.label],
                               feature_file, str(row), str(b.size)]))
        row += b.size
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_dataset(manifest_path):
    root = os.path.dirname(os.path.abspath(manifest_path))
    cache = {}
    bags = []
    with open(manifest_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 6:
                raise DatasetError(f"{manifest_path}:{lineno}: expected 6 fields")
            bag_id, video_id, label, ffile, begin, count = parts
            if label not in _TEXT_TO_LABEL:
                raise DatasetError(f"{manifest_path}:{lineno}: bad label {label!r}")
            if ffile not in cache:
                cache[ffile] = read_matrix(os.path.join(root, ffile))
            mat = cache[ffile]
            lo, n = int(begin), int(count)
            if n < 1 or lo < 0 or lo + n > mat.shape[0]:
                raise DatasetError(f"{manifest_path}:{lineno}: rows out of range")
            bags.append(Bag(bag_id, video_id, mat[lo:lo + n], _TEXT_TO_LABEL[label]))
    return Dataset(tuple(bags))

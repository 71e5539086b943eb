"""Seeded synthetic MIL datasets with a known generating structure.

Instances come from one concept cluster and several background clusters,
whose means sit on orthogonal axes ``separation`` apart. Negative bags only
hold background instances; positive bags also hold
``max(1, round(witness_rate * m))`` concept instances, so the standard MIL
assumption holds by construction. Bags are grouped into videos whose labels
are balanced; within a video a minority of bags (set by ``video_purity``) may
take the opposite label, but never enough to tie the video majority.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .bagcore import NEGATIVE, POSITIVE, Bag, Dataset


@dataclass(frozen=True)
class SyntheticSpec:
    n_videos: int = 10
    bags_per_video: int = 4
    instances_min: int = 8
    instances_max: int = 20
    dim: int = 10
    n_background: int = 3
    separation: float = 8.0
    concept_scale: float = 0.25
    background_scale: float = 1.0
    witness_rate: float = 0.3
    label_noise: float = 0.0
    positive_fraction: float = 0.5
    video_purity: float = 0.75
    seed: int = 0

    def validate(self):
        if self.n_videos < 1 or self.bags_per_video < 1:
            raise ValueError("need at least one video and one bag per video")
        if not 1 <= self.instances_min <= self.instances_max:
            raise ValueError("need 1 <= instances_min <= instances_max")
        if self.n_background < 1:
            raise ValueError("need at least one background cluster")
        if self.dim < self.n_background + 1:
            raise ValueError("dim must be at least n_background + 1")
        if not 0.0 < self.witness_rate <= 1.0:
            raise ValueError("witness_rate must lie in (0, 1]")
        if not 0.0 <= self.label_noise < 1.0:
            raise ValueError("label_noise must lie in [0, 1)")
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ValueError("positive_fraction must lie in [0, 1]")
        if not 0.5 <= self.video_purity <= 1.0:
            raise ValueError("video_purity must lie in [0.5, 1]")
        if self.separation <= 0 or self.concept_scale <= 0 or self.background_scale <= 0:
            raise ValueError("separation and scales must be positive")

    def as_dict(self):
        return asdict(self)

    def cluster_means(self):
        """Row 0 is the concept mean, rows 1.. the background means."""
        means = np.zeros((self.n_background + 1, self.dim))
        side = self.separation / math.sqrt(2.0)
        for k in range(self.n_background + 1):
            means[k, k] = side
        return means


def _video_labels(spec, rng):
    n_pos = int(round(spec.n_videos * spec.positive_fraction))
    labels = np.array([POSITIVE] * n_pos + [NEGATIVE] * (spec.n_videos - n_pos))
    return labels[rng.permutation(spec.n_videos)]


def generate_synthetic(spec):
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    means = spec.cluster_means()
    b = spec.bags_per_video
    minority = min(int(math.floor((1.0 - spec.video_purity) * b + 1e-9)), (b - 1) // 2)
    bags = []
    for v, vlabel in enumerate(_video_labels(spec, rng)):
        labels = np.full(b, vlabel)
        flip = rng.choice(b, size=minority, replace=False)
        labels[flip] = -vlabel
        for j in range(b):
            m = int(rng.integers(spec.instances_min, spec.instances_max + 1))
            n_concept = max(1, int(round(spec.witness_rate * m))) if labels[j] == POSITIVE else 0
            n_concept = min(n_concept, m)
            comp = np.r_[np.zeros(n_concept, dtype=int),
                         rng.integers(1, spec.n_background + 1, size=m - n_concept)]
            comp = comp[rng.permutation(m)]
            scale = np.where(comp == 0, spec.concept_scale, spec.background_scale)
            x = means[comp] + scale[:, None] * rng.standard_normal((m, spec.dim))
            label = int(labels[j])
            if spec.label_noise > 0 and rng.random() < spec.label_noise:
                label = -label
            bags.append(Bag(f"v{v:03d}_b{j:02d}", f"v{v:03d}", x, label,
                            np.where(comp == 0, POSITIVE, NEGATIVE)))
    return Dataset(tuple(bags))


def oracle_instance_labels(spec, x):
    """Nearest-true-mean assignment: +1 for the concept cluster."""
    means = spec.cluster_means()
    d2 = ((np.asarray(x)[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return np.where(np.argmin(d2, axis=1) == 0, POSITIVE, NEGATIVE)


def oracle_bag_label(spec, bag):
    return POSITIVE if np.any(oracle_instance_labels(spec, bag.instances) == POSITIVE) else NEGATIVE

"""Multiple-instance classification of gallbladder vascularity from image patches.

The pipeline goes patches -> handcrafted features -> PCA -> variational
Bayesian GMM bag embedding -> kernel SVM, with mi-SVM, MI-SVM and Citation-kNN
baselines and a by-video cross-validation harness.
"""

from .bagcore import (
    NEGATIVE,
    POSITIVE,
    Bag,
    Dataset,
    FoldSplit,
    class_counts,
    fold_view,
    split_by_video,
)

__all__ = [
    "NEGATIVE",
    "POSITIVE",
    "Bag",
    "Dataset",
    "FoldSplit",
    "class_counts",
    "fold_view",
    "split_by_video",
]

__version__ = "0.1.0"

"""Handcrafted patch features: color (259) + texture (335) + statistical (43)."""

import numpy as np

from ..patchex import Patch, QuantizedPatch, quantize_colors
from . import color, statistical, texture
from .color import color_features
from .statistical import statistical_features
from .texture import texture_features

FEATURE_LENGTH = color.LENGTH + texture.LENGTH + statistical.LENGTH


def feature_layout():
    """Ordered ``(name, offset, length)`` rows covering the whole vector."""
    rows = []
    offset = 0
    for family, mod in (("color", color), ("texture", texture), ("statistical", statistical)):
        for name, n in mod.SEGMENTS:
            rows.append((f"{family}.{name}", offset, n))
            offset += n
    return rows


class FeatureVector:
    __slots__ = ("values", "layout")

    def __init__(self, values, layout=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.layout = layout if layout is not None else feature_layout()

    def segment(self, name):
        for seg, off, n in self.layout:
            if seg == name:
                return self.values[off:off + n]
        raise KeyError(name)


def extract_all(patch, n_colors=32, seed=0, qpatch=None):
    """Feature vector for one patch; ``qpatch`` overrides per-patch quantization."""
    pixels = patch.pixels if isinstance(patch, Patch) else np.asarray(patch)
    if qpatch is None:
        qpatch = quantize_colors(pixels, n_colors=n_colors, seed=seed)
    values = np.concatenate([
        color_features(qpatch, pixels),
        texture_features(pixels),
        statistical_features(pixels),
    ])
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("non-finite feature value")
    return FeatureVector(values)


__all__ = [
    "FEATURE_LENGTH",
    "FeatureVector",
    "QuantizedPatch",
    "color_features",
    "extract_all",
    "feature_layout",
    "statistical_features",
    "texture_features",
]

"""Pipeline configuration, validation, digests and per-stage seeds.

Config files are TOML with one table per stage::

    seed = 0

    [patch]
    size = 64
    overlap = 0.5
    min_inside_fraction = 1.0
    n_colors = 32
    quantize = "patch"        # or "roi"

    [reduce]
    pca_variance = 0.95
    standardize = true

    [vbgmm]
    k_init = 50
    prune_threshold = 0.01
    tol = 1e-5
    max_iter = 200
    delete_moves = true       # retry fits with one component removed

    [svm]
    kernel = "linear"         # or "rbf"
    c_grid = [0.01, 0.1, 1, 10, 100]
    gamma_grid = []           # empty: 2^j / d, j = -3..3
    inner_folds = 3
    tol = 1e-3

    [cknn]
    refs = [1, 3, 5]
    citers = [0, 3, 5]
    tie_positive = false

    [mil]
    method = "mivbgmm"        # mivbgmm | cknn | misvm | MISVM
    max_alternations = 20

    [eval]
    folds = 5
    task = "both"             # image | video | both
    stratify = false
"""

import copy
import hashlib
import json

from .evalharness import EvalConfig
from .milmethods import METHODS, MILConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "patch": {"size": 64, "overlap": 0.5, "min_inside_fraction": 1.0, "n_colors": 32,
              "quantize": "patch"},
    "reduce": {"pca_variance": 0.95, "standardize": True},
    "vbgmm": {"k_init": 50, "prune_threshold": 0.01, "tol": 1e-5, "max_iter": 200,
              "delete_moves": True},
    "svm": {"kernel": "linear", "c_grid": [0.01, 0.1, 1.0, 10.0, 100.0], "gamma_grid": [],
            "inner_folds": 3, "tol": 1e-3},
    "cknn": {"refs": [1, 3, 5], "citers": [0, 3, 5], "tie_positive": False},
    "mil": {"method": "mivbgmm", "max_alternations": 20},
    "eval": {"folds": 5, "task": "both", "stratify": False},
}

# sections each stage's outputs depend on
STAGE_SECTIONS = {
    "extract-patches": ("patch",),
    "featurize": ("patch",),
    "reduce": ("reduce",),
    "train": ("reduce", "vbgmm", "svm", "cknn", "mil"),
    "evaluate": ("reduce", "vbgmm", "svm", "cknn", "mil", "eval"),
    "synth": ("synth",),
}


def _check(cond, msg):
    if not cond:
        raise ConfigError(msg)


def validate(cfg):
    p, r, v, s, c, m, e = (cfg[k] for k in ("patch", "reduce", "vbgmm", "svm", "cknn", "mil", "eval"))
    _check(isinstance(cfg["seed"], int) and cfg["seed"] >= 0, "seed must be a non-negative integer")
    _check(isinstance(p["size"], int) and p["size"] >= 4, "patch.size must be an integer >= 4")
    _check(0.0 <= p["overlap"] < 1.0, "patch.overlap must lie in [0, 1)")
    _check(0.0 < p["min_inside_fraction"] <= 1.0, "patch.min_inside_fraction must lie in (0, 1]")
    _check(1 <= p["n_colors"] <= 32, "patch.n_colors must lie in [1, 32]")
    _check(p["quantize"] in ("patch", "roi"), "patch.quantize must be 'patch' or 'roi'")
    _check(0.0 < r["pca_variance"] <= 1.0, "reduce.pca_variance must lie in (0, 1]")
    _check(isinstance(v["k_init"], int) and v["k_init"] >= 1, "vbgmm.k_init must be >= 1")
    _check(0.0 <= v["prune_threshold"] < 1.0, "vbgmm.prune_threshold must lie in [0, 1)")
    _check(isinstance(v["delete_moves"], bool), "vbgmm.delete_moves must be true or false")
    _check(v["tol"] > 0 and v["max_iter"] >= 1, "vbgmm.tol and vbgmm.max_iter must be positive")
    _check(s["kernel"] in ("linear", "rbf"), "svm.kernel must be 'linear' or 'rbf'")
    _check(len(s["c_grid"]) > 0 and all(x > 0 for x in s["c_grid"]), "svm.c_grid must be positive and non-empty")
    _check(all(x > 0 for x in s["gamma_grid"]), "svm.gamma_grid entries must be positive")
    _check(isinstance(s["inner_folds"], int) and s["inner_folds"] >= 2, "svm.inner_folds must be >= 2")
    _check(s["tol"] > 0, "svm.tol must be positive")
    _check(len(c["refs"]) > 0 and all(isinstance(x, int) and x >= 1 for x in c["refs"]),
           "cknn.refs must be integers >= 1")
    _check(len(c["citers"]) > 0 and all(isinstance(x, int) and x >= 0 for x in c["citers"]),
           "cknn.citers must be integers >= 0")
    _check(m["method"] in METHODS, f"mil.method must be one of {', '.join(METHODS)}")
    _check(isinstance(m["max_alternations"], int) and m["max_alternations"] >= 1,
           "mil.max_alternations must be >= 1")
    _check(isinstance(e["folds"], int) and e["folds"] >= 2, "eval.folds must be >= 2")
    _check(e["task"] in ("image", "video", "both"), "eval.task must be image, video or both")
    return cfg


def merge(base, override):
    out = copy.deepcopy(base)
    for key, val in (override or {}).items():
        if key not in out:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(out[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {key!r} must be a table")
            for sub, sval in val.items():
                if sub not in out[key]:
                    raise ConfigError(f"unknown config key {key}.{sub}")
                out[key][sub] = sval
        else:
            out[key] = val
    return out


def load(path=None, overrides=None):
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        with open(path, "rb") as fh:
            cfg = merge(cfg, tomllib.load(fh))
    if overrides:
        cfg = merge(cfg, overrides)
    return validate(cfg)


def digest(cfg, sections=None):
    part = {k: cfg[k] for k in (sections or sorted(cfg)) if k in cfg}
    blob = json.dumps(part, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def stage_seed(root, stage):
    """Seed for one stage, derived from the root seed and the stage name."""
    h = hashlib.sha256(f"{root}/{stage}".encode("utf-8")).digest()
    return int.from_bytes(h[:4], "little")


def diff(old, new, prefix=""):
    """Human-readable list of differing keys between two config fragments."""
    out = []
    for key in sorted(set(old) | set(new)):
        a, b = old.get(key), new.get(key)
        name = f"{prefix}{key}"
        if isinstance(a, dict) and isinstance(b, dict):
            out.extend(diff(a, b, name + "."))
        elif a != b:
            out.append(f"{name}: {a!r} -> {b!r}")
    return out


def mil_config(cfg):
    s, v, c, m = cfg["svm"], cfg["vbgmm"], cfg["cknn"], cfg["mil"]
    return MILConfig(
        kernel=s["kernel"], c_grid=tuple(s["c_grid"]),
        gamma_grid=tuple(s["gamma_grid"]) or None, inner_folds=s["inner_folds"],
        svm_tol=s["tol"], k_init=v["k_init"], prune_threshold=v["prune_threshold"],
        vb_tol=v["tol"], vb_max_iter=v["max_iter"],
        vb_delete_moves=v["delete_moves"], cknn_refs=tuple(c["refs"]),
        cknn_citers=tuple(c["citers"]), cknn_tie_positive=c["tie_positive"],
        max_alternations=m["max_alternations"], seed=stage_seed(cfg["seed"], "train"),
    )


def eval_config(cfg):
    return EvalConfig(folds=cfg["eval"]["folds"], pca_variance=cfg["reduce"]["pca_variance"],
                      standardize=cfg["reduce"]["standardize"], stratify=cfg["eval"]["stratify"],
                      mil=mil_config(cfg))

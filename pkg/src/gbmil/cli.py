"""Command-line entry point.

Commands: extract-patches, featurize, reduce, train, evaluate, synth, report.
Every command writes a ``stage.json`` next to its outputs, recording the
config sections it used, the seed and SHA-256 digests of inputs and outputs.
Downstream commands check those records and refuse to run on stale inputs.

Exit codes: 0 success, 2 validation error, 3 data error. Logs go to stderr.
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import config as cfgmod
from . import evalharness, milmethods, patchex, reduce, serialize
from .bagcore import (NEGATIVE, POSITIVE, Bag, Dataset, DatasetError, read_dataset,
                      write_dataset)
from .featex import FEATURE_LENGTH, extract_all, feature_layout
from .patchex import QuantizedPatch
from .synth import SyntheticSpec, generate_synthetic

log = logging.getLogger("gbmil")

EXIT_VALIDATION = 2
EXIT_DATA = 3
STAGE_FILE = "stage.json"
STAGE_VERSION = 1


class ValidationError(Exception):
    pass


class DataError(Exception):
    pass


# -- stage records ----------------------------------------------------------

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_stage(out_dir, stage, cfg, seed, outputs, inputs=(), extra=None):
    sections = cfgmod.STAGE_SECTIONS.get(stage, ())
    used = {k: cfg[k] for k in sections if k in cfg}
    record = {
        "version": STAGE_VERSION,
        "stage": stage,
        "seed": seed,
        "config": used,
        "config_digest": cfgmod.digest(used),
        "inputs": {os.path.basename(p): _sha256(p) for p in inputs},
        "outputs": {os.path.basename(p): _sha256(p) for p in outputs},
    }
    if extra:
        record.update(extra)
    with open(os.path.join(out_dir, STAGE_FILE), "w", encoding="utf-8") as fh:
        json.dump(record, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return record


def check_stage(in_dir, cfg, required=False):
    """Verify an upstream stage record against files on disk and ``cfg``."""
    path = os.path.join(in_dir, STAGE_FILE)
    if not os.path.exists(path):
        if required:
            raise DataError(f"{in_dir}: missing {STAGE_FILE}")
        log.warning("%s: no %s; skipping provenance checks", in_dir, STAGE_FILE)
        return None
    with open(path, encoding="utf-8") as fh:
        record = json.load(fh)
    if record.get("version") != STAGE_VERSION:
        raise DataError(f"{path}: unsupported stage record version {record.get('version')}")
    for name, digest in record["outputs"].items():
        f = os.path.join(in_dir, name)
        if not os.path.exists(f):
            raise DataError(f"{in_dir}: output {name} recorded in {STAGE_FILE} is missing")
        if _sha256(f) != digest:
            raise DataError(f"{in_dir}: {name} changed since stage {record['stage']!r} wrote it")
    shared = {k: cfg[k] for k in record["config"] if k in cfg}
    if shared and cfgmod.digest(shared) != cfgmod.digest(record["config"]):
        lines = cfgmod.diff(record["config"], shared)
        raise ValidationError(f"config differs from the one that produced {in_dir} "
                              f"(stage {record['stage']!r}):\n  " + "\n  ".join(lines))
    return record


# -- config -----------------------------------------------------------------

def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _overrides(args):
    o = {}

    def put(section, key, value):
        if value is not None:
            o.setdefault(section, {})[key] = value

    if getattr(args, "seed", None) is not None:
        o["seed"] = args.seed
    put("patch", "size", getattr(args, "patch_size", None))
    put("patch", "overlap", getattr(args, "overlap", None))
    put("patch", "min_inside_fraction", getattr(args, "min_inside_fraction", None))
    put("patch", "n_colors", getattr(args, "n_colors", None))
    put("patch", "quantize", getattr(args, "quantize", None))
    put("reduce", "pca_variance", getattr(args, "pca_variance", None))
    put("vbgmm", "k_init", getattr(args, "k_init", None))
    put("vbgmm", "prune_threshold", getattr(args, "prune_threshold", None))
    put("vbgmm", "tol", getattr(args, "vb_tol", None))
    put("vbgmm", "max_iter", getattr(args, "vb_max_iter", None))
    if getattr(args, "no_delete_moves", False):
        put("vbgmm", "delete_moves", False)
    put("svm", "kernel", getattr(args, "kernel", None))
    if getattr(args, "svm_c_grid", None):
        put("svm", "c_grid", _floats(args.svm_c_grid))
    if getattr(args, "svm_gamma_grid", None):
        put("svm", "gamma_grid", _floats(args.svm_gamma_grid))
    put("svm", "inner_folds", getattr(args, "inner_folds", None))
    put("mil", "method", getattr(args, "method", None))
    put("eval", "folds", getattr(args, "folds", None))
    put("eval", "task", getattr(args, "task", None))
    return o


def _load_config(args):
    try:
        return cfgmod.load(args.config, _overrides(args))
    except cfgmod.ConfigError as e:
        raise ValidationError(str(e)) from None
    except (OSError, ValueError) as e:
        raise ValidationError(f"cannot read config: {e}") from None


# -- commands ---------------------------------------------------------------

def _read_index(path):
    """Image index CSV: image_id,video_id,label,image_file,mask_file."""
    root = os.path.dirname(os.path.abspath(path))
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            label = row["label"].strip().upper()
            if label not in ("L", "H", "?"):
                raise DataError(f"{path}: bad label {row['label']!r}")
            rows.append({
                "image_id": row["image_id"].strip(), "video_id": row["video_id"].strip(),
                "label": label,
                "image": os.path.join(root, row["image_file"].strip()),
                "mask": os.path.join(root, row["mask_file"].strip()),
            })
    if not rows:
        raise DataError(f"{path}: no images listed")
    return rows


def cmd_extract_patches(args, cfg):
    p = cfg["patch"]
    seed = cfgmod.stage_seed(cfg["seed"], "extract-patches")
    rows = _read_index(args.index)
    os.makedirs(args.out, exist_ok=True)
    pixels, origins, owner, qidx, palettes, psizes = [], [], [], [], [], []
    kept = []
    for row in rows:
        for f in (row["image"], row["mask"]):
            if not os.path.exists(f):
                raise DataError(f"missing file {f}")
        image = patchex.load_image(row["image"])
        mask = patchex.load_mask(row["mask"])
        if mask.shape != image.shape[:2]:
            raise DataError(f"{row['image_id']}: mask size {mask.shape} != image size {image.shape[:2]}")
        patches = patchex.extract_patches(image, mask, p["size"], p["overlap"],
                                          p["min_inside_fraction"])
        if not patches:
            log.warning("%s: no patch fits inside the ROI; skipping", row["image_id"])
            continue
        b = len(kept)
        kept.append((row, len(patches)))
        if p["quantize"] == "roi":
            raster, palette = patchex.quantize_image_roi(image, mask, p["n_colors"], seed)
            pal = np.zeros((32, 3))
            pal[:len(palette)] = palette
            palettes.append(pal)
            psizes.append(len(palette))
        for patch in patches:
            pixels.append(patch.pixels)
            origins.append(patch.origin)
            owner.append(b)
            if p["quantize"] == "roi":
                r, c = patch.origin
                qidx.append(raster[r:r + p["size"], c:c + p["size"]])
    if not kept:
        raise DataError("no patches extracted from any image")
    arrays = {"pixels": np.array(pixels, dtype=np.uint8), "origins": np.array(origins),
              "owner": np.array(owner)}
    if p["quantize"] == "roi":
        arrays.update(qindex=np.array(qidx), palettes=np.array(palettes),
                      palette_sizes=np.array(psizes))
    patch_file = os.path.join(args.out, "patches.bin")
    serialize.save(patch_file, "patches", arrays, {"patch_size": p["size"]})
    bags_file = os.path.join(args.out, "bags.csv")
    with open(bags_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bag_id", "video_id", "label", "n_patches"])
        for row, n in kept:
            w.writerow([row["image_id"], row["video_id"], row["label"], n])
    summary = _ingest_summary(kept)
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    log.info("ingest: %d bags, %d instances", summary["bags"], summary["instances"])
    write_stage(args.out, "extract-patches", cfg, seed, [patch_file, bags_file],
                [args.index])
    return 0


def _ingest_summary(kept):
    out = {"bags": len(kept), "instances": int(sum(n for _, n in kept)), "per_class": {}}
    for label in ("L", "H", "?"):
        counts = [n for row, n in kept if row["label"] == label]
        if counts:
            out["per_class"][label] = {"bags": len(counts), "min": int(min(counts)),
                                       "max": int(max(counts)),
                                       "median": float(np.median(counts)),
                                       "total": int(sum(counts))}
    return out


def _featurize_one(job):
    pixels, qindex, palette, n_colors, seed = job
    qpatch = QuantizedPatch(qindex, palette) if qindex is not None else None
    return extract_all(pixels, n_colors=n_colors, seed=seed, qpatch=qpatch).values


def cmd_featurize(args, cfg):
    check_stage(args.patches, cfg, required=True)
    seed = cfgmod.stage_seed(cfg["seed"], "featurize")
    arrays, _ = serialize.load(os.path.join(args.patches, "patches.bin"), "patches")
    with open(os.path.join(args.patches, "bags.csv"), newline="", encoding="utf-8") as fh:
        bag_rows = list(csv.DictReader(fh))
    n = arrays["pixels"].shape[0]
    jobs = []
    for i in range(n):
        if "qindex" in arrays:
            b = arrays["owner"][i]
            size = int(arrays["palette_sizes"][b])
            jobs.append((arrays["pixels"][i], arrays["qindex"][i], arrays["palettes"][b][:size],
                         cfg["patch"]["n_colors"], seed))
        else:
            jobs.append((arrays["pixels"][i], None, None, cfg["patch"]["n_colors"], seed))
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            feats = list(pool.map(_featurize_one, jobs, chunksize=16))
    else:
        feats = [_featurize_one(j) for j in jobs]
    feats = np.array(feats)
    bags = []
    for b, row in enumerate(bag_rows):
        label = {"H": POSITIVE, "L": NEGATIVE, "?": None}[row["label"]]
        bags.append(Bag(row["bag_id"], row["video_id"], feats[arrays["owner"] == b], label))
    os.makedirs(args.out, exist_ok=True)
    manifest = os.path.join(args.out, "manifest.csv")
    write_dataset(Dataset(tuple(bags)), manifest)
    layout_file = os.path.join(args.out, "layout.json")
    with open(layout_file, "w", encoding="utf-8") as fh:
        json.dump({"length": FEATURE_LENGTH,
                   "segments": [{"name": s, "offset": o, "length": k}
                                for s, o, k in feature_layout()]}, fh, indent=2)
        fh.write("\n")
    write_stage(args.out, "featurize", cfg, seed,
                [manifest, os.path.join(args.out, "features.bin"), layout_file],
                [os.path.join(args.patches, "patches.bin")])
    log.info("featurized %d patches into %d bags", n, len(bags))
    print(manifest)
    return 0


def _dataset_arg(args):
    path = args.dataset
    if not path:
        if sys.stdin is None or sys.stdin.isatty():
            raise ValidationError("no --dataset given and nothing on stdin")
        lines = sys.stdin.read().strip().splitlines()
        if not lines:
            raise ValidationError("no dataset manifest path on stdin")
        path = lines[-1].strip()
    if not os.path.exists(path):
        raise DataError(f"dataset manifest {path} does not exist")
    return path


def _load_dataset(path, cfg):
    check_stage(os.path.dirname(os.path.abspath(path)), cfg)
    try:
        return read_dataset(path)
    except (DatasetError, OSError) as e:
        raise DataError(str(e)) from None


def cmd_reduce(args, cfg):
    path = _dataset_arg(args)
    ds = _load_dataset(path, cfg)
    x, _ = ds.stacked_instances()
    red = reduce.fit_reducer(x, cfg["reduce"]["pca_variance"], cfg["reduce"]["standardize"])
    os.makedirs(args.out, exist_ok=True)
    sidecar = os.path.join(args.out, "reducer.bin")
    with open(sidecar, "wb") as fh:
        fh.write(red.dumps())
    manifest = os.path.join(args.out, "manifest.csv")
    write_dataset(ds.map_instances(red), manifest)
    write_stage(args.out, "reduce", cfg, cfgmod.stage_seed(cfg["seed"], "reduce"),
                [sidecar, manifest, os.path.join(args.out, "features.bin")], [path],
                {"d_in": red.pca.d_in, "d_out": red.pca.d_out,
                 "variance_kept": red.pca.variance_kept})
    log.info("PCA: %d -> %d dims (%.4f variance)", red.pca.d_in, red.pca.d_out,
             red.pca.variance_kept)
    print(manifest)
    return 0


def cmd_train(args, cfg):
    path = _dataset_arg(args)
    ds = _load_dataset(path, cfg)
    ecfg = cfgmod.eval_config(cfg)
    try:
        red = evalharness.fit_fold_reducer(ds, ecfg)
        clf = milmethods.train_method(cfg["mil"]["method"], ds.map_instances(red), ecfg.mil)
    except (DatasetError, ValueError) as e:
        raise DataError(str(e)) from None
    os.makedirs(args.out, exist_ok=True)
    model_file = os.path.join(args.out, "model.bin")
    serialize.save(model_file, "pipeline",
                   {"reducer": serialize.blob(red.dumps()), "classifier": serialize.blob(clf.dumps())},
                   {"method": cfg["mil"]["method"]})
    write_stage(args.out, "train", cfg, ecfg.mil.seed, [model_file], [path])
    log.info("trained %s on %d bags", cfg["mil"]["method"], len(ds))
    return 0


def cmd_evaluate(args, cfg):
    path = _dataset_arg(args)
    ds = _load_dataset(path, cfg)
    ecfg = cfgmod.eval_config(cfg)
    seed = cfgmod.stage_seed(cfg["seed"], "evaluate")
    method = cfg["mil"]["method"]
    try:
        records, infos = evalharness.run_cv(ds, method, ecfg, seed=seed, details=True)
        report = evalharness.build_report(records, ds, method, ecfg, cfg["seed"], infos,
                                          cfg["eval"]["task"])
    except (DatasetError, ValueError) as e:
        raise DataError(str(e)) from None
    os.makedirs(args.out, exist_ok=True)
    out = os.path.join(args.out, "report.json")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(evalharness.dumps_report(report))
    write_stage(args.out, "evaluate", cfg, seed, [out], [path])
    sys.stderr.write(evalharness.render_text(report))
    print(out)
    return 0


def cmd_synth(args, cfg):
    spec = SyntheticSpec(
        n_videos=args.n_videos, bags_per_video=args.bags_per_video,
        instances_min=args.instances_min, instances_max=args.instances_max, dim=args.dim,
        witness_rate=args.witness_rate, label_noise=args.label_noise,
        seed=cfgmod.stage_seed(cfg["seed"], "synth"))
    try:
        ds = generate_synthetic(spec)
    except ValueError as e:
        raise ValidationError(str(e)) from None
    os.makedirs(args.out, exist_ok=True)
    manifest = os.path.join(args.out, "manifest.csv")
    write_dataset(ds, manifest)
    cfg = dict(cfg, synth=spec.as_dict())
    write_stage(args.out, "synth", cfg, spec.seed,
                [manifest, os.path.join(args.out, "features.bin")])
    log.info("synthetic dataset: %d bags, %d videos", len(ds), len(ds.video_ids))
    print(manifest)
    return 0


def cmd_report(args, cfg):
    try:
        with open(args.report, encoding="utf-8") as fh:
            report = json.load(fh)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read report: {e}") from None
    sys.stdout.write(evalharness.render_text(report))
    return 0


# -- parser -----------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="gbmil", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--seed", type=int, help="root seed")
        return p

    def reduce_flags(p):
        p.add_argument("--pca-variance", type=float)

    def mil_flags(p):
        p.add_argument("--method", choices=milmethods.METHODS)
        p.add_argument("--kernel", choices=("linear", "rbf"))
        p.add_argument("--k-init", type=int)
        p.add_argument("--prune-threshold", type=float)
        p.add_argument("--vb-tol", type=float)
        p.add_argument("--vb-max-iter", type=int)
        p.add_argument("--no-delete-moves", action="store_true",
                       help="plain coordinate ascent without component deletion retries")
        p.add_argument("--svm-c-grid", help="comma-separated C values")
        p.add_argument("--svm-gamma-grid", help="comma-separated RBF gamma values")
        p.add_argument("--inner-folds", type=int)

    p = common(sub.add_parser("extract-patches", help="cut ROI patches from images"))
    p.add_argument("--index", required=True,
                   help="CSV with image_id,video_id,label,image_file,mask_file")
    p.add_argument("--out", required=True)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--overlap", type=float)
    p.add_argument("--min-inside-fraction", type=float)
    p.add_argument("--n-colors", type=int)
    p.add_argument("--quantize", choices=("patch", "roi"))
    p.set_defaults(func=cmd_extract_patches)

    p = common(sub.add_parser("featurize", help="compute patch feature vectors"))
    p.add_argument("--patches", required=True, help="output directory of extract-patches")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--n-colors", type=int)
    p.add_argument("--quantize", choices=("patch", "roi"))
    p.set_defaults(func=cmd_featurize)

    p = common(sub.add_parser("reduce", help="standardize + PCA a whole dataset"))
    p.add_argument("--dataset")
    p.add_argument("--out", required=True)
    reduce_flags(p)
    p.set_defaults(func=cmd_reduce)

    p = common(sub.add_parser("train", help="train one MIL method on all bags"))
    p.add_argument("--dataset")
    p.add_argument("--out", required=True)
    reduce_flags(p)
    mil_flags(p)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("evaluate", help="run the by-video cross-validation"))
    p.add_argument("--dataset", help="manifest path (read from stdin when omitted)")
    p.add_argument("--out", default=".")
    p.add_argument("--task", choices=("image", "video", "both"))
    p.add_argument("--folds", type=int)
    reduce_flags(p)
    mil_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("synth", help="write a synthetic MIL dataset"))
    p.add_argument("--out", required=True)
    d = SyntheticSpec()
    p.add_argument("--n-videos", type=int, default=d.n_videos)
    p.add_argument("--bags-per-video", type=int, default=d.bags_per_video)
    p.add_argument("--instances-min", type=int, default=d.instances_min)
    p.add_argument("--instances-max", type=int, default=d.instances_max)
    p.add_argument("--dim", type=int, default=d.dim)
    p.add_argument("--witness-rate", type=float, default=d.witness_rate)
    p.add_argument("--label-noise", type=float, default=d.label_noise)
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("report", help="print a report.json as a table"))
    p.add_argument("report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _load_config(args)
        return args.func(args, cfg)
    except ValidationError as e:
        log.error("%s", e)
        return EXIT_VALIDATION
    except DataError as e:
        log.error("%s", e)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

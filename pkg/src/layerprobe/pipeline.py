"""End-to-end runs: data preparation, training, feature extraction, probing, boundary analysis.

These functions back the CLI subcommands and can be driven directly from
Python with a :class:`~layerprobe.config.RunConfig`.
"""

from dataclasses import replace
import logging
from pathlib import Path

import numpy as np

from . import boundary, network
from .checkpoint import save_checkpoint
from .datasets import load_cifar10, synthetic_dataset, zca_apply, zca_fit
from .errors import DataNotFoundError, InvalidArgumentError, TrainingDivergedError
from .featurestore import read_feature_store, write_feature_store
from .probes import (
    intraclass_mean_distance,
    knn_classify,
    pca_class_spectrum,
    standardize,
    svm_predict,
    svm_train,
)
from .reports import EXTENSIONS, write_report

log = logging.getLogger(__name__)

TRAIN_LOG_COLUMNS = ("iteration", "lr", "loss", "batch_accuracy")


def load_datasets(cfg):
    """Train and test splits, ZCA-whitened with training statistics when enabled."""
    data = cfg.data
    if data.source == "synthetic":
        spec = data.synthetic
        train = synthetic_dataset(spec, data.seed, "train")
        test = synthetic_dataset(replace(spec, samples=data.test_samples), data.seed, "test")
    else:
        train, test = load_cifar10(data.cifar10_dir)
    train, test = train.subset(data.max_train), test.subset(data.max_test)
    if data.whitening:
        t = zca_fit(train, data.zca_epsilon)
        train, test = zca_apply(train, t), zca_apply(test, t)
    if train.images.shape[3] != cfg.net.input_channels:
        raise InvalidArgumentError(
            f"data has {train.images.shape[3]} channels, net.input_channels is {cfg.net.input_channels}"
        )
    if train.class_count > cfg.net.classes:
        raise InvalidArgumentError(f"data has {train.class_count} classes, net.classes is {cfg.net.classes}")
    return train, test


def feature_path(directory, split, depth):
    return Path(directory) / f"features_{split}_d{depth}.bpfs"


def report_path(directory, name, fmt):
    return Path(directory) / f"{name}{EXTENSIONS[fmt]}"


def run_train(cfg, out_dir, train_set=None):
    """Train from scratch; writes periodic and final checkpoints and the training log.

    Returns ``(params, log_rows)``.  On divergence the log so far is written
    before :class:`TrainingDivergedError` propagates.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if train_set is None:
        train_set, _ = load_datasets(cfg)
    params = network.build(cfg.net)
    rows = []
    every = cfg.output.checkpoint_every

    def on_step(it, result):
        done = it + 1
        if it % cfg.output.log_every == 0 or done == cfg.train.total_iterations:
            rows.append({"iteration": it, "lr": result.lr, "loss": result.loss, "batch_accuracy": result.accuracy})
        if every and done % every == 0 and done != cfg.train.total_iterations:
            save_checkpoint(out_dir / f"checkpoint_{done:06d}.bpnc", result.params, cfg.net)

    log_file = report_path(out_dir, "train_log", cfg.output.report_format)
    try:
        params = network.train(params, cfg.net, cfg.train, train_set.images, train_set.labels, on_step)
    except TrainingDivergedError:
        write_report(rows, log_file, cfg.output.report_format, TRAIN_LOG_COLUMNS)
        raise
    write_report(rows, log_file, cfg.output.report_format, TRAIN_LOG_COLUMNS)
    save_checkpoint(out_dir / "checkpoint.bpnc", params, cfg.net)
    return params, rows


def extract_all(cfg, params, depths, datasets=None):
    """{split: {depth: FeatureSet}} for the train and test splits."""
    train, test = load_datasets(cfg) if datasets is None else datasets
    return {
        split: network.extract_features(params, cfg.net, ds.images, ds.labels, depths)
        for split, ds in (("train", train), ("test", test))
    }


def run_extract(cfg, params, out_dir, depths, datasets=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for split, sets in extract_all(cfg, params, depths, datasets).items():
        for depth, fs in sets.items():
            path = feature_path(out_dir, split, depth)
            write_feature_store(fs, path)
            written.append(path)
    return written


def load_feature_sets(feature_dir, depths, splits=("train", "test")):
    """Read stores for every (split, depth); raises listing all missing files."""
    paths = {(s, d): feature_path(feature_dir, s, d) for s in splits for d in depths}
    missing = [str(p) for p in paths.values() if not p.is_file()]
    if missing:
        raise DataNotFoundError("missing feature stores: " + ", ".join(missing))
    out = {s: {} for s in splits}
    for (s, d), p in paths.items():
        out[s][d] = read_feature_store(p)
    return out


def probe_records(train_sets, test_sets, probes):
    """Accuracy, PCA-spectrum and intra-class-distance records for each depth."""
    accuracy, spectra, distances = [], [], []
    for depth in sorted(train_sets):
        tr, te = standardize(train_sets[depth], test_sets[depth])
        _, knn_acc = knn_classify(tr, te, probes.knn_k)
        rows = [{"depth": depth, "classifier": f"{probes.knn_k}-nn", "accuracy": knn_acc}]
        if probes.svm:
            model = svm_train(tr, probes.svm_C, probes.svm_bandwidth)
            _, svm_acc = svm_predict(model, te)
            rows.append({"depth": depth, "classifier": "gaussian-svm", "accuracy": svm_acc})
        accuracy.extend(rows)
        classes = probes.pca_classes if probes.pca_classes is not None else np.unique(tr.labels).tolist()
        for c in classes:
            curve = pca_class_spectrum(tr, c)
            for i, v in enumerate(curve, start=1):
                spectra.append({"depth": depth, "class": c, "component": i, "cumulative_variance": v})
            distances.append({"depth": depth, "class": c, "distance": intraclass_mean_distance(tr, c)})
        log.info("depth %d: %s", depth, ", ".join(f"{r['classifier']}={r['accuracy']:.4f}" for r in rows))
    return accuracy, spectra, distances


def run_probe(cfg, feature_dir, out_dir, depths):
    sets = load_feature_sets(feature_dir, depths)
    accuracy, spectra, distances = probe_records(sets["train"], sets["test"], cfg.probes)
    fmt = cfg.output.report_format
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [
        write_report(accuracy, report_path(out_dir, "accuracy_per_depth", fmt), fmt, ("depth", "classifier", "accuracy")),
        write_report(spectra, report_path(out_dir, "pca_spectra", fmt), fmt,
                     ("depth", "class", "component", "cumulative_variance")),
        write_report(distances, report_path(out_dir, "intraclass_distances", fmt), fmt, ("depth", "class", "distance")),
    ]


def boundary_records(train_sets, k_max):
    reports = boundary.boundary_report([train_sets[d] for d in sorted(train_sets)], k_max)
    gamma, margins, curves = [], [], []
    for r in reports:
        for k, size in enumerate(r.gamma_sizes, start=1):
            gamma.append({"depth": r.depth, "k": k, "cardinality": int(size)})
        margins.append({
            "depth": r.depth,
            "margin": r.margin.margin,
            "support_vectors": len(r.support),
            "points": r.points,
        })
        for name, curve in (("A", r.curve_same_class), ("B", r.curve_support)):
            if curve is None:
                continue
            for t, v in zip(curve.thresholds, curve.values):
                curves.append({"depth": r.depth, "set": name, "threshold": t, "value": v})
    return reports, gamma, margins, curves


def run_boundary(cfg, feature_dir, out_dir, depths):
    sets = load_feature_sets(feature_dir, depths, splits=("train",))
    _, gamma, margins, curves = boundary_records(sets["train"], cfg.boundary.k_max)
    fmt = cfg.output.report_format
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [
        write_report(gamma, report_path(out_dir, "gamma_sizes", fmt), fmt, ("depth", "k", "cardinality")),
        write_report(margins, report_path(out_dir, "margins", fmt), fmt,
                     ("depth", "margin", "support_vectors", "points")),
        write_report(curves, report_path(out_dir, "cumulative_curves", fmt), fmt, ("depth", "set", "threshold", "value")),
    ]

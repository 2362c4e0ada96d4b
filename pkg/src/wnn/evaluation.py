"""Batch evaluation, error tables, overlap metric and the operation-count model.

Reports identify misclassified images by (true digit, 1-based enumeration
index within that digit), so error sets from runs with different training
sets remain comparable as long as the test set is the same.  The CSV
rendering is the stable machine-readable surface: one row per digit plus a
Total row; JSON mirrors the full report including timing.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dataset_io import N_CLASSES, LabeledSet, binarize
from .dwnn_hybrid import dwnn_classify_batch, hybrid_classify_batch
from .wnn_core import ClassifierConfig, classify_batch, classify_nn_batch

CLASSIFIER_KINDS = ("nn", "wnn", "dwnn", "hybrid")
CHECKPOINT_MAGIC = "# wnn-checkpoint"


@dataclass
class EvaluationReport:
    classifier: str
    column_label: str
    config: dict
    per_digit_errors: list
    total_errors: int
    error_rate: float
    misclassified: list          # [(digit, enumeration id)], sorted
    per_digit_counts: list
    test_digest: str
    wall_clock_s: float = 0.0


def test_set_digest(test: LabeledSet):
    """Stable identity of a test set: grid, per-digit ids."""
    h = hashlib.sha256()
    h.update(repr(test.grid_shape()).encode())
    for d in range(N_CLASSES):
        h.update(bytes([d]))
        h.update(np.ascontiguousarray(test.ids[d]).tobytes())
    return h.hexdigest()[:16]


def column_label(kind, config: ClassifierConfig, p=2.0):
    if kind == "nn":
        return "NN" if float(p) == 2.0 else f"NN_p{p:g}"
    base = {"wnn": "WNN", "dwnn": "DWNN", "hybrid": "HYBRID"}[kind]
    label = f"{base}{config.size}"
    if float(config.p) != 2.0:
        label += f"_p{config.p:g}"
    return label


def _flatten_test(test: LabeledSet):
    grid = test.grid_shape()
    images = np.concatenate([a.reshape(a.shape[0], -1) for a in test.images])
    labels, ids = test.flat_labels_and_ids()
    return images.reshape(-1, *grid), labels, ids


def _load_checkpoint(path, digest, label):
    done = {}
    if not os.path.exists(path) or os.path.getsize(path) == 0:
        return done
    with open(path) as f:
        header = f.readline().strip()
        expected = f"{CHECKPOINT_MAGIC} digest={digest} column={label}"
        if header != expected:
            raise ValueError(
                f"{path}: checkpoint header mismatch\n  have: {header}\n  want: {expected}"
            )
        for line in f:
            line = line.strip()
            if not line:
                continue
            d, i, pred = line.split(",")
            done[(int(d), int(i))] = int(pred)
    return done


def evaluate(kind, train: LabeledSet, test: LabeledSet,
             config: ClassifierConfig | None = None, *, p=2.0, dwnn_train=None,
             threads=0, checkpoint=None, block=512, progress=None,
             train_stream_factory=None, binarize_threshold=128,
             variants_fn=None):
    """Classify every test image and tally errors per true digit.

    ``kind`` selects the classifier.  For "hybrid", ``train`` is the
    augmented set feeding the windowed side and the tiebreak while
    ``dwnn_train`` is the unaugmented set feeding the extension-family
    side.  ``train_stream_factory`` (windowed classifier only) supplies a
    fresh (class, images) chunk iterator per test block for training sets
    too large to materialize.  With ``checkpoint``, per-image verdicts
    append to a resumable record file and finished images are skipped.
    """
    if kind not in CLASSIFIER_KINDS:
        raise ValueError(f"unknown classifier kind {kind!r}")
    if config is None:
        config = ClassifierConfig()
    kernels.set_threads(threads)

    if config.binarized:
        train = train.map_images(lambda a: binarize(a, binarize_threshold))
        test = test.map_images(lambda a: binarize(a, binarize_threshold))
        if dwnn_train is not None:
            dwnn_train = dwnn_train.map_images(lambda a: binarize(a, binarize_threshold))

    started = time.perf_counter()
    digest = test_set_digest(test)
    label = column_label(kind, config, p=p)
    images, labels, ids = _flatten_test(test)
    total = images.shape[0]

    verdicts = {}
    ckpt_file = None
    if checkpoint is not None:
        verdicts = _load_checkpoint(checkpoint, digest, label)
        fresh = not os.path.exists(checkpoint) or os.path.getsize(checkpoint) == 0
        ckpt_file = open(checkpoint, "a")
        if fresh:
            ckpt_file.write(f"{CHECKPOINT_MAGIC} digest={digest} column={label}\n")
            ckpt_file.flush()

    pending = np.array([k for k in range(total)
                        if (int(labels[k]), int(ids[k])) not in verdicts],
                       dtype=np.int64)
    done_count = total - pending.shape[0]
    try:
        for lo in range(0, pending.shape[0], block):
            idx = pending[lo:lo + block]
            batch = images[idx]
            if kind == "nn":
                digits, _ = classify_nn_batch(batch, train, p=p)
            elif kind == "wnn":
                stream = train_stream_factory() if train_stream_factory else None
                digits, _ = classify_batch(batch, train, config, train_stream=stream)
            elif kind == "dwnn":
                kw = {"variants_fn": variants_fn} if variants_fn else {}
                digits, _ = dwnn_classify_batch(batch, train, config.size, **kw)
            else:
                kw = {"variants_fn": variants_fn} if variants_fn else {}
                if dwnn_train is None:
                    raise ValueError("hybrid evaluation needs dwnn_train")
                _, _, digits, _ = hybrid_classify_batch(
                    batch, dwnn_train, train, config.size, **kw)
            for k, dig in zip(idx, digits):
                key = (int(labels[k]), int(ids[k]))
                verdicts[key] = int(dig)
                if ckpt_file is not None:
                    ckpt_file.write(f"{key[0]},{key[1]},{int(dig)}\n")
            if ckpt_file is not None:
                ckpt_file.flush()
            done_count += idx.shape[0]
            if progress:
                progress(done_count, total)
    finally:
        if ckpt_file is not None:
            ckpt_file.close()

    per_digit = [0] * N_CLASSES
    miscls = []
    for k in range(total):
        d, i = int(labels[k]), int(ids[k])
        if verdicts[(d, i)] != d:
            per_digit[d] += 1
            miscls.append((d, i))
    miscls.sort()
    cfg_echo = {
        "kind": kind, "size": config.size, "p": config.p,
        "excluded": sorted(config.excluded), "binarized": config.binarized,
        "train_counts": train.counts(),
    }
    return EvaluationReport(
        classifier=kind, column_label=label, config=cfg_echo,
        per_digit_errors=per_digit, total_errors=sum(per_digit),
        error_rate=sum(per_digit) / total, misclassified=miscls,
        per_digit_counts=test.counts(), test_digest=digest,
        wall_clock_s=time.perf_counter() - started,
    )


def sweep_window_sizes(train: LabeledSet, test: LabeledSet, sizes, p=2.0, *,
                       include_nn=False, threads=0, block=256, progress=None):
    """One report per window size, sharing the per-pair distance tables.

    Returns an ordered list of (column label, EvaluationReport); empty
    ``sizes`` with ``include_nn=False`` gives an empty table.
    """
    sizes = [int(s) for s in sizes]
    for s in sizes:
        if s < 1 or s % 2 == 0:
            raise ValueError(f"window sizes must be positive odd integers, got {s}")
    kernels.set_threads(threads)
    out = []
    if include_nn:
        out.append(("NN", evaluate("nn", train, test, p=p, threads=threads)))
    if not sizes:
        return out

    started = time.perf_counter()
    train.require_nonempty()
    grid = test.grid_shape()
    nw = grid[0] * grid[1]
    images, labels, ids = _flatten_test(test)
    flat = images.reshape(images.shape[0], -1)
    lut, _ = kernels.power_table(p)
    sizes_arr = np.asarray(sizes, dtype=np.int64)
    k = sizes_arr.shape[0]
    total = flat.shape[0]

    predictions = np.empty((total, k), dtype=np.int64)
    for lo in range(0, total, block):
        tb = flat[lo:lo + block]
        sums = np.empty((tb.shape[0], N_CLASSES, k),
                        dtype=np.int64 if lut.dtype == np.int64 else np.float64)
        mins = np.empty((tb.shape[0], k, nw), dtype=lut.dtype)
        for cls in range(N_CLASSES):
            mins[:] = kernels.min_sentinel(lut)
            kernels.update_window_mins_multi(
                tb, train.images[cls].reshape(-1, nw), grid, sizes_arr, lut, mins)
            sums[:, cls, :] = mins.sum(axis=2)
        predictions[lo:lo + tb.shape[0]] = np.argmin(sums, axis=1)
        if progress:
            progress(min(lo + block, total), total)
    elapsed = time.perf_counter() - started

    digest = test_set_digest(test)
    for j, s in enumerate(sizes):
        config = ClassifierConfig(size=s, p=p)
        per_digit = [0] * N_CLASSES
        miscls = []
        wrong = np.flatnonzero(predictions[:, j] != labels)
        for t in wrong:
            per_digit[int(labels[t])] += 1
            miscls.append((int(labels[t]), int(ids[t])))
        miscls.sort()
        out.append((column_label("wnn", config, p=p), EvaluationReport(
            classifier="wnn", column_label=column_label("wnn", config, p=p),
            config={"kind": "wnn", "size": s, "p": p, "excluded": [],
                    "binarized": False, "train_counts": train.counts()},
            per_digit_errors=per_digit, total_errors=len(miscls),
            error_rate=len(miscls) / total, misclassified=miscls,
            per_digit_counts=test.counts(), test_digest=digest,
            wall_clock_s=elapsed,
        )))
    return out


@dataclass
class OverlapResult:
    common: int
    union: int
    fraction: float


def error_overlap(a: EvaluationReport, b: EvaluationReport):
    """Size of intersection/union of the two misclassified-image sets."""
    if a.test_digest != b.test_digest or a.per_digit_counts != b.per_digit_counts:
        raise ValueError("reports cover different test sets")
    sa, sb = set(map(tuple, a.misclassified)), set(map(tuple, b.misclassified))
    common, union = len(sa & sb), len(sa | sb)
    return OverlapResult(common=common, union=union,
                         fraction=1.0 if union == 0 else common / union)


def op_count(algorithm, images_per_class, size=None):
    """Elementary-operation model of one naive classification.

    Counts differences, squarings, accumulations and comparisons for the
    straightforward implementation (not the summed-area kernel): the plain
    nearest neighbour needs 3 ops per pixel per training image plus one
    comparison per image; the windowed version repeats 3*S^2 + 1 ops for
    each of the 784 windows.
    """
    m = int(images_per_class)
    if m < 1:
        raise ValueError(f"images_per_class {m} must be >= 1")
    if algorithm == "nn":
        return 10 * m * (784 * 3 + 1)
    if algorithm == "wnn":
        s = int(size)
        if s < 1 or s % 2 == 0:
            raise ValueError(f"window size {s} must be a positive odd integer")
        return 10 * m * (784 * (3 * s * s + 1) + 1)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def report_csv_text(columns):
    """CSV for one or more reports over the same test set.

    ``columns``: list of (label, EvaluationReport).  Header
    ``digit,<label>...``, one row per digit, final Total row.
    """
    lines = ["digit," + ",".join(label for label, _ in columns)]
    for d in range(N_CLASSES):
        lines.append(f"{d}," + ",".join(str(r.per_digit_errors[d]) for _, r in columns))
    lines.append("Total," + ",".join(str(r.total_errors) for _, r in columns))
    return "\n".join(lines) + "\n"


def write_report_csv(columns, path):
    with open(path, "w") as f:
        f.write(report_csv_text(columns))


def report_json_dict(report: EvaluationReport):
    return {
        "classifier": report.classifier,
        "column_label": report.column_label,
        "config": report.config,
        "per_digit_errors": report.per_digit_errors,
        "total_errors": report.total_errors,
        "error_rate": report.error_rate,
        "misclassified": [list(m) for m in report.misclassified],
        "per_digit_counts": report.per_digit_counts,
        "test_digest": report.test_digest,
        "wall_clock_s": report.wall_clock_s,
    }


def write_report_json(report: EvaluationReport, path):
    with open(path, "w") as f:
        json.dump(report_json_dict(report), f, indent=2, sort_keys=True)
        f.write("\n")


def format_table(columns):
    """Aligned text table mirroring the CSV."""
    labels = [label for label, _ in columns]
    widths = [max(5, len(l)) for l in labels]
    lines = ["digit  " + "  ".join(l.rjust(w) for l, w in zip(labels, widths))]
    for d in range(N_CLASSES):
        cells = [str(r.per_digit_errors[d]).rjust(w)
                 for (_, r), w in zip(columns, widths)]
        lines.append(f"{d:<5}  " + "  ".join(cells))
    cells = [str(r.total_errors).rjust(w) for (_, r), w in zip(columns, widths)]
    lines.append("Total  " + "  ".join(cells))
    return "\n".join(lines)

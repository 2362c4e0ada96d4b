"""Command-line entry point.

Subcommands cover the full pipeline: ``prepare`` (load and split a
dataset), ``augment`` (materialize or count an expansion level),
``evaluate`` (one classifier, CSV/JSON reports, optional checkpointed
resume), ``sweep`` (error table over window sizes), ``prune`` (greedy
window exclusion with a validation split), ``opcount`` (cost model) and
``render`` (PGM/ASCII image dumps, useful for checking the EMNIST
orientation).  Identical inputs, seeds and thread counts give identical
output files; thread count never changes results.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import augmentation, evaluation, window_pruning
from .dataset_io import (DATA_DIR_ENV, GRID, LabeledSet, SplitSpec, binarize,
                         build_split, default_data_dir, load_dataset,
                         orient_emnist, write_labeled_set_idx)
from .wnn_core import ClassifierConfig


@dataclass
class RunConfig:
    """Resolved settings for one invocation; printed verbatim by --dry-run."""

    subcommand: str
    data_dir: str = ""
    dataset: str = "mnist"
    split: str = "balanced"
    train_range: tuple | None = None
    test_range: tuple | None = None
    classifier: str = "wnn"
    size: int = 11
    p: float = 2.0
    binarize: bool = False
    threshold: int = 128
    excluded_file: str | None = None
    aug_level: str | None = None
    rotate_order: str = "shift_then_rotate"
    stream: bool = False
    seed: int | None = None
    threads: int = 0
    output: str | None = None
    checkpoint: str | None = None
    extra: dict = field(default_factory=dict)

    def print(self, out=None):
        out = out or sys.stdout
        for key, value in sorted(asdict(self).items()):
            out.write(f"{key} = {value!r}\n")


def _parse_range(text):
    """'1:4000' -> (1, 4000); '4001:' -> (4001, None)."""
    lo, _, hi = text.partition(":")
    return int(lo), (int(hi) if hi else None)


def _split_spec(args):
    if args.split == "custom":
        if not (args.train_range and args.test_range):
            raise SystemExit("custom split requires --train-range and --test-range")
        return SplitSpec.custom(_parse_range(args.train_range),
                                _parse_range(args.test_range),
                                dataset=args.dataset)
    return SplitSpec(dataset=args.dataset, scheme=args.split)


def _add_data_args(p, with_split=True):
    p.add_argument("--data-dir", default=None,
                   help=f"dataset directory (default ${DATA_DIR_ENV} or ./data)")
    p.add_argument("--dataset", choices=["mnist", "emnist-digits"], default="mnist")
    if with_split:
        p.add_argument("--split", choices=["standard", "balanced", "custom"],
                       default="balanced")
        p.add_argument("--train-range", help="custom split: 1-based 'LO:HI'")
        p.add_argument("--test-range", help="custom split: 'LO:HI' or 'LO:' for the rest")


def _add_common(p):
    p.add_argument("--threads", type=int, default=0,
                   help="kernel threads, 0 = all cores (results identical for any value)")
    p.add_argument("--dry-run", action="store_true",
                   help="print the resolved configuration and exit")


def _read_excluded(path):
    """Excluded-window file: either a prune trace or one 1-based index per line."""
    with open(path) as f:
        first = f.readline().strip()
        if first == "step,excluded_window,errors":
            f.seek(0)
    if first == "step,excluded_window,errors":
        return frozenset(window_pruning.read_trace(path).excluded)
    out = set()
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith("#"):
                out.add(int(line))
    return frozenset(out)


def _progress_printer(label):
    def cb(done, total, *rest):
        sys.stderr.write(f"\r{label}: {done}/{total}")
        if done >= total:
            sys.stderr.write("\n")
        sys.stderr.flush()
    return cb


def _load_split_sets(args):
    data_dir = args.data_dir or default_data_dir()
    spec = _split_spec(args)
    train_file, test_file = load_dataset(data_dir, spec.dataset)
    return build_split(spec, train_file, test_file), spec


def cmd_prepare(args):
    run = RunConfig(subcommand="prepare", data_dir=args.data_dir or default_data_dir(),
                    dataset=args.dataset, split=args.split,
                    output=args.output, threads=args.threads)
    if args.dry_run:
        run.print()
        return 0
    (train, test), spec = _load_split_sets(args)
    print(f"{spec.dataset} / {spec.scheme}")
    print("digit  train   test")
    for d in range(10):
        print(f"{d:<5}  {train.counts()[d]:<6}  {test.counts()[d]}")
    print(f"Total  {train.total():<6}  {test.total()}")
    if args.output:
        for name, lset in (("train", train), ("test", test)):
            write_labeled_set_idx(
                lset,
                f"{args.output}-{name}-images-idx3-ubyte",
                f"{args.output}-{name}-labels-idx1-ubyte",
                f"{args.output}-{name}-manifest.json",
                extra_manifest={"dataset": spec.dataset, "scheme": spec.scheme},
            )
        print(f"wrote IDX files with prefix {args.output}")
    return 0


def cmd_augment(args):
    dataset_key = "mnist" if args.dataset == "mnist" else "emnist"
    run = RunConfig(subcommand="augment", data_dir=args.data_dir or default_data_dir(),
                    dataset=args.dataset, split=args.split, aug_level=args.level,
                    rotate_order=args.rotate_order, output=args.output,
                    threads=args.threads, extra={"count_only": args.count_only})
    if args.dry_run:
        run.print()
        return 0
    spec = augmentation.AugmentLevel(dataset=dataset_key, level=args.level)
    (train, _), _ = _load_split_sets(args)
    manifest = augmentation.level_manifest(train, spec)
    if args.count_only:
        print(json.dumps(manifest, indent=2, sort_keys=True))
        return 0
    if not args.output:
        raise SystemExit("augment needs --output PREFIX (or --count-only)")
    level = augmentation.build_level(train, spec, rotate_order=args.rotate_order)
    write_labeled_set_idx(
        level,
        f"{args.output}-images-idx3-ubyte",
        f"{args.output}-labels-idx1-ubyte",
        f"{args.output}-manifest.json",
        extra_manifest={"dataset": spec.dataset, "level": spec.level,
                        "rotate_order": args.rotate_order},
    )
    print(f"wrote {manifest['total']} images with prefix {args.output}")
    return 0


def cmd_evaluate(args):
    run = RunConfig(
        subcommand="evaluate", data_dir=args.data_dir or default_data_dir(),
        dataset=args.dataset, split=args.split, train_range=args.train_range,
        test_range=args.test_range, classifier=args.classifier, size=args.size,
        p=args.p, binarize=args.binarize, threshold=args.threshold,
        excluded_file=args.excluded_file, aug_level=args.aug_level,
        rotate_order=args.rotate_order, stream=args.stream, threads=args.threads,
        output=args.output, checkpoint=args.checkpoint,
    )
    if args.dry_run:
        run.print()
        return 0
    (train, test), _ = _load_split_sets(args)
    excluded = _read_excluded(args.excluded_file) if args.excluded_file else frozenset()
    config = ClassifierConfig(size=args.size, p=args.p, excluded=excluded,
                              binarized=args.binarize)

    dwnn_train = None
    stream_factory = None
    if args.classifier == "hybrid":
        dwnn_train = train
    if args.aug_level:
        dataset_key = "mnist" if args.dataset == "mnist" else "emnist"
        spec = augmentation.AugmentLevel(dataset=dataset_key, level=args.aug_level)
        if args.stream:
            base = train
            stream_factory = lambda: augmentation.iter_level(
                base, spec, rotate_order=args.rotate_order)
        else:
            train = augmentation.build_level(train, spec,
                                             rotate_order=args.rotate_order)

    report = evaluation.evaluate(
        args.classifier, train, test, config, p=args.p, dwnn_train=dwnn_train,
        threads=args.threads, checkpoint=args.checkpoint,
        binarize_threshold=args.threshold,
        train_stream_factory=stream_factory,
        progress=_progress_printer(args.classifier) if not args.quiet else None,
    )
    columns = [(report.column_label, report)]
    print(evaluation.format_table(columns))
    print(f"error rate {report.error_rate:.4%}  wall clock {report.wall_clock_s:.1f}s")
    if args.expect_total is not None and report.total_errors != args.expect_total:
        tol = args.expect_tolerance or 0
        if abs(report.total_errors - args.expect_total) > tol:
            print(f"FAIL: expected total {args.expect_total} (+-{tol}), "
                  f"got {report.total_errors}", file=sys.stderr)
            return 1
    if args.output:
        evaluation.write_report_csv(columns, args.output + ".csv")
        evaluation.write_report_json(report, args.output + ".json")
        print(f"wrote {args.output}.csv and {args.output}.json")
    return 0


def cmd_sweep(args):
    run = RunConfig(subcommand="sweep", data_dir=args.data_dir or default_data_dir(),
                    dataset=args.dataset, split=args.split,
                    train_range=args.train_range, test_range=args.test_range,
                    p=args.p, threads=args.threads, output=args.output,
                    extra={"sizes": args.sizes, "with_nn": args.with_nn})
    if args.dry_run:
        run.print()
        return 0
    (train, test), _ = _load_split_sets(args)
    columns = evaluation.sweep_window_sizes(
        train, test, args.sizes, p=args.p, include_nn=args.with_nn,
        threads=args.threads,
        progress=_progress_printer("sweep") if not args.quiet else None)
    print(evaluation.format_table(columns))
    if args.output:
        evaluation.write_report_csv(columns, args.output)
        print(f"wrote {args.output}")
    return 0


def cmd_prune(args):
    run = RunConfig(subcommand="prune", data_dir=args.data_dir or default_data_dir(),
                    dataset=args.dataset, split=args.split,
                    train_range=args.train_range, test_range=args.test_range,
                    size=args.size, p=args.p, seed=args.seed, threads=args.threads,
                    output=args.output,
                    extra={"max_exclusions": args.max_exclusions,
                           "validation_per_digit": args.validation_per_digit,
                           "scoring": args.scoring})
    if args.dry_run:
        run.print()
        return 0
    (train, test), _ = _load_split_sets(args)
    config = ClassifierConfig(size=args.size, p=args.p)
    if args.validation_per_digit:
        validation, holdout = window_pruning.split_validation(
            test, args.validation_per_digit, args.seed)
    else:
        validation, holdout = test, None
    trace = window_pruning.prune(
        train, validation, config, args.max_exclusions, scoring=args.scoring,
        seed=args.seed,
        progress=(lambda k, n, w, e:
                  sys.stderr.write(f"\rprune {k}/{n} window {w} errors {e}   "))
        if not args.quiet else None)
    if not args.quiet:
        sys.stderr.write("\n")
    print(f"baseline errors {trace.baseline_errors}; "
          f"after {len(trace.steps)} exclusions: "
          f"{trace.steps[-1][1] if trace.steps else trace.baseline_errors}")
    if args.output:
        window_pruning.write_trace(trace, args.output)
        print(f"wrote {args.output}")
    if holdout is not None and args.report_holdout:
        excl_config = ClassifierConfig(size=args.size, p=args.p,
                                       excluded=frozenset(trace.excluded))
        report = evaluation.evaluate("wnn", train, holdout, excl_config,
                                     threads=args.threads)
        print(f"holdout errors with {len(trace.excluded)} windows excluded: "
              f"{report.total_errors}")
    return 0


def cmd_opcount(args):
    count = evaluation.op_count(args.alg, args.images_per_class, args.size)
    print(count)
    return 0


PGM_ASCII = " .:-=+*#%@"


def _ascii_preview(image):
    rows = []
    for r in range(image.shape[0]):
        rows.append("".join(PGM_ASCII[min(int(v) * len(PGM_ASCII) // 256,
                                          len(PGM_ASCII) - 1)]
                            for v in image[r]))
    return "\n".join(rows)


def _write_pgm(image, path):
    with open(path, "wb") as f:
        f.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode())
        f.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def cmd_render(args):
    run = RunConfig(subcommand="render", data_dir=args.data_dir or default_data_dir(),
                    dataset=args.dataset, split=args.split, output=args.output,
                    extra={"which": args.which, "digit": args.digit,
                           "index": args.index,
                           "both_orientations": args.both_orientations})
    if args.dry_run:
        run.print()
        return 0
    if not 0 <= args.digit <= 9:
        raise SystemExit(f"digit {args.digit} outside 0..9")
    (train, test), _ = _load_split_sets(args)
    lset = train if args.which == "train" else test
    n = lset.images[args.digit].shape[0]
    if not 1 <= args.index <= n:
        raise SystemExit(f"index {args.index} outside 1..{n} for digit {args.digit}")
    image = lset.images[args.digit][args.index - 1]
    out = args.output or f"{args.dataset}-{args.which}-{args.digit}-{args.index}.pgm"
    _write_pgm(image, out)
    print(f"wrote {out}")
    print(_ascii_preview(image))
    if args.both_orientations:
        alt = orient_emnist(image)
        alt_path = out.replace(".pgm", "-transposed.pgm")
        _write_pgm(alt, alt_path)
        print(f"wrote {alt_path} (transposed)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wnn",
        description="Windowed nearest-neighbour digit classification toolkit")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("prepare", help="load a dataset, apply a split, report counts")
    _add_data_args(p)
    p.add_argument("--output", "-o", help="write split IDX files with this prefix")
    _add_common(p)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("augment", help="materialize or count an augmentation level")
    _add_data_args(p)
    p.add_argument("--level", required=True,
                   choices=list(augmentation.LEVELS))
    p.add_argument("--rotate-order", choices=list(augmentation.ROTATE_ORDERS),
                   default="shift_then_rotate")
    p.add_argument("--count-only", action="store_true",
                   help="print the level manifest without generating images")
    p.add_argument("--output", "-o", help="output IDX prefix")
    _add_common(p)
    p.set_defaults(fn=cmd_augment)

    p = sub.add_parser("evaluate", help="classify a test set and report errors")
    _add_data_args(p)
    p.add_argument("--classifier", choices=list(evaluation.CLASSIFIER_KINDS),
                   default="wnn")
    p.add_argument("-S", "--size", type=int, default=11, help="window size (default 11)")
    p.add_argument("-p", type=float, default=2.0, help="distance exponent (default 2)")
    p.add_argument("--binarize", action="store_true")
    p.add_argument("--threshold", type=int, default=128, help="binarization threshold")
    p.add_argument("--excluded-file", help="prune trace or list of window indices")
    p.add_argument("--aug-level", choices=list(augmentation.LEVELS),
                   help="augment the training split to this level first")
    p.add_argument("--rotate-order", choices=list(augmentation.ROTATE_ORDERS),
                   default="shift_then_rotate")
    p.add_argument("--stream", action="store_true",
                   help="stream the augmented level instead of materializing it")
    p.add_argument("--checkpoint", help="resumable per-image verdict file")
    p.add_argument("--expect-total", type=int, help="fail unless total errors match")
    p.add_argument("--expect-tolerance", type=int, default=0)
    p.add_argument("--output", "-o", help="report path prefix (.csv/.json)")
    p.add_argument("--quiet", action="store_true")
    _add_common(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("sweep", help="error table over several window sizes")
    _add_data_args(p)
    p.add_argument("--sizes", type=int, nargs="+", required=True)
    p.add_argument("--with-nn", action="store_true",
                   help="include a plain nearest-neighbour column")
    p.add_argument("-p", type=float, default=2.0)
    p.add_argument("--output", "-o", help="CSV output path")
    p.add_argument("--quiet", action="store_true")
    _add_common(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("prune", help="greedy window exclusion on a validation split")
    _add_data_args(p)
    p.add_argument("-S", "--size", type=int, default=11)
    p.add_argument("-p", type=float, default=2.0)
    p.add_argument("--max-exclusions", "-K", type=int, required=True)
    p.add_argument("--validation-per-digit", type=int, default=0,
                   help="per-digit validation size; 0 = use the whole test set")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scoring", choices=["cumulative", "single"], default="cumulative")
    p.add_argument("--report-holdout", action="store_true",
                   help="also evaluate the holdout set with the final exclusions")
    p.add_argument("--output", "-o", help="trace CSV path (doubles as plot data)")
    p.add_argument("--quiet", action="store_true")
    _add_common(p)
    p.set_defaults(fn=cmd_prune)

    p = sub.add_parser("opcount", help="operation-count model of one classification")
    p.add_argument("--alg", choices=["nn", "wnn"], required=True)
    p.add_argument("-M", "--images-per-class", type=int, required=True)
    p.add_argument("-S", "--size", type=int)
    p.set_defaults(fn=cmd_opcount, dry_run=False)

    p = sub.add_parser("render", help="dump an image as PGM plus ASCII preview")
    _add_data_args(p)
    p.add_argument("--which", choices=["train", "test"], default="test")
    p.add_argument("--digit", type=int, required=True)
    p.add_argument("--index", type=int, required=True,
                   help="1-based index within the digit's split")
    p.add_argument("--both-orientations", action="store_true",
                   help="also write the transposed image (EMNIST orientation check)")
    p.add_argument("--output", "-o", help="PGM output path")
    _add_common(p)
    p.set_defaults(fn=cmd_render)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

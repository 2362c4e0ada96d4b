"""Greedy backward elimination of windows.

Each step scores every remaining window by the evaluation-set error count
with that window (and all previously excluded ones) removed, keeps the
windows attaining the smallest count, and among those excludes the one
with the largest summed distance gap between each image's true class and
the winning class.  The gap is zero exactly when every evaluation image
is predicted correctly (up to exact ties), so the rule removes the window
whose absence hurts least while widening margins most.

All error counts derive from one cached tensor of per-window per-class
minima, so a step costs one subtraction and argmin sweep per candidate
instead of a full re-classification; integer arithmetic keeps the cached
path bit-identical to recomputing from scratch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dataset_io import N_CLASSES, LabeledSet
from .wnn_core import ClassifierConfig, all_class_window_minima, _flat


@dataclass
class PruneCache:
    """Per-window per-class minima for the evaluation set, plus labels."""

    minima: np.ndarray        # (T, 10, H*W)
    labels: np.ndarray        # (T,)
    grid: tuple
    p: float
    size: int


@dataclass
class PruneTrace:
    """Exclusion order with the error curve, plus enough context to rerun."""

    baseline_errors: int
    steps: list = field(default_factory=list)  # [(window_index, errors_after)]
    seed: int | None = None
    eval_counts: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def excluded(self):
        return [w for w, _ in self.steps]

    def error_curve(self):
        return [self.baseline_errors] + [e for _, e in self.steps]


def build_prune_cache(eval_set: LabeledSet, train: LabeledSet,
                      config: ClassifierConfig, block=512):
    """Compute the cached minima tensor for a whole evaluation set."""
    eval_set.require_nonempty()
    grid = eval_set.grid_shape()
    tests = np.concatenate([a.reshape(a.shape[0], -1) for a in eval_set.images])
    labels, _ = eval_set.flat_labels_and_ids()
    parts = []
    for lo in range(0, tests.shape[0], block):
        parts.append(all_class_window_minima(
            tests[lo:lo + block].reshape(-1, *grid), train, config.size, config.p))
    return PruneCache(minima=np.concatenate(parts), labels=labels, grid=grid,
                      p=config.p, size=config.size)


def _sums_excluding(cache: PruneCache, excluded):
    mask = ClassifierConfig(size=cache.size, p=cache.p,
                            excluded=frozenset(excluded)).window_mask(cache.grid)
    if mask.all():
        return cache.minima.sum(axis=2)
    return cache.minima[:, :, mask].sum(axis=2)


def _errors_from_sums(sums, labels):
    return int(np.count_nonzero(np.argmin(sums, axis=1) != labels))


def _gap_from_sums(sums, labels, p):
    dists = np.power(sums.astype(np.float64), 1.0 / p)
    per_image = dists[np.arange(labels.shape[0]), labels] - dists.min(axis=1)
    return float(per_image.sum())


def errors_excluding(candidate, current_excluded, eval_set: LabeledSet,
                     train: LabeledSet, config: ClassifierConfig, cache=None):
    """Evaluation-set error count with ``current_excluded + {candidate}`` removed."""
    candidate = int(candidate)
    if candidate in current_excluded:
        raise ValueError(f"window {candidate} is already excluded")
    if cache is None:
        cache = build_prune_cache(eval_set, train, config)
    sums = _sums_excluding(cache, set(current_excluded) | {candidate})
    return _errors_from_sums(sums, cache.labels)


def gap(candidate, current_excluded, eval_set: LabeledSet, train: LabeledSet,
        config: ClassifierConfig, cache=None):
    """Summed true-class-minus-winner distance gap under the exclusion.

    Nonnegative; zero when every evaluation image is classified correctly
    (an exact tie also contributes zero).
    """
    candidate = int(candidate)
    if candidate in current_excluded:
        raise ValueError(f"window {candidate} is already excluded")
    if cache is None:
        cache = build_prune_cache(eval_set, train, config)
    sums = _sums_excluding(cache, set(current_excluded) | {candidate})
    return _gap_from_sums(sums, cache.labels, cache.p)


def prune(train: LabeledSet, eval_set: LabeledSet, config: ClassifierConfig,
          max_exclusions, *, scoring="cumulative", cache=None, seed=None,
          progress=None, candidate_block=64):
    """Greedily exclude up to ``max_exclusions`` windows.

    ``scoring`` selects what the per-candidate error count is measured
    against: "cumulative" (default) scores each candidate together with
    everything already excluded, which is what makes iterating meaningful;
    "single" scores each candidate alone against the full window set.
    Chosen windows accumulate in both modes.
    """
    if scoring not in ("cumulative", "single"):
        raise ValueError(f"unknown scoring {scoring!r}")
    grid = eval_set.grid_shape()
    n_windows = grid[0] * grid[1]
    if not 0 <= max_exclusions <= n_windows - 1:
        raise ValueError(f"max_exclusions {max_exclusions} outside 0..{n_windows - 1}")
    if cache is None:
        cache = build_prune_cache(eval_set, train, config)
    labels = cache.labels

    excluded = list(config.excluded)
    base_sums = _sums_excluding(cache, excluded)
    full_sums = cache.minima.sum(axis=2)
    trace = PruneTrace(
        baseline_errors=_errors_from_sums(base_sums, labels),
        seed=seed,
        eval_counts=eval_set.counts(),
        config={"size": config.size, "p": config.p, "scoring": scoring,
                "initial_excluded": sorted(config.excluded)},
    )

    remaining = np.array([w for w in range(1, n_windows + 1) if w not in excluded],
                         dtype=np.int64)
    for step in range(max_exclusions):
        score_base = base_sums if scoring == "cumulative" else full_sums
        ne = np.empty(remaining.shape[0], dtype=np.int64)
        for lo in range(0, remaining.shape[0], candidate_block):
            cand = remaining[lo:lo + candidate_block]
            cand_sums = score_base[:, :, None] - cache.minima[:, :, cand - 1]
            preds = np.argmin(cand_sums, axis=1)
            ne[lo:lo + cand.shape[0]] = np.count_nonzero(
                preds != labels[:, None], axis=0)
        tie_set = remaining[ne == ne.min()]
        best_w, best_gap = None, -1.0
        for w in tie_set:  # ascending index, so ties keep the lowest window
            g = _gap_from_sums(score_base[:, :] - cache.minima[:, :, w - 1],
                               labels, cache.p)
            if g > best_gap:
                best_w, best_gap = int(w), g
        base_sums = base_sums - cache.minima[:, :, best_w - 1]
        excluded.append(best_w)
        remaining = remaining[remaining != best_w]
        errors_now = _errors_from_sums(base_sums, labels)
        trace.steps.append((best_w, errors_now))
        if progress:
            progress(step + 1, max_exclusions, best_w, errors_now)
    return trace


def split_validation(test: LabeledSet, per_digit_validation, seed):
    """Seeded uniform per-digit split of a test set into (validation, holdout)."""
    rng = np.random.default_rng(seed)
    val_imgs, val_ids, hold_imgs, hold_ids = [], [], [], []
    for d in range(N_CLASSES):
        n = test.images[d].shape[0]
        if per_digit_validation >= n:
            raise ValueError(
                f"digit {d}: validation size {per_digit_validation} must be < {n}"
            )
        perm = rng.permutation(n)
        take = np.sort(perm[:per_digit_validation])
        keep = np.sort(perm[per_digit_validation:])
        val_imgs.append(test.images[d][take])
        val_ids.append(test.ids[d][take])
        hold_imgs.append(test.images[d][keep])
        hold_ids.append(test.ids[d][keep])
    return (LabeledSet.from_arrays(val_imgs, val_ids),
            LabeledSet.from_arrays(hold_imgs, hold_ids))


def write_trace(trace: PruneTrace, path):
    """Line-oriented record: step, excluded window, error count."""
    with open(path, "w") as f:
        f.write("step,excluded_window,errors\n")
        f.write(f"0,,{trace.baseline_errors}\n")
        for i, (w, e) in enumerate(trace.steps, start=1):
            f.write(f"{i},{w},{e}\n")


def read_trace(path):
    with open(path) as f:
        header = f.readline().strip()
        if header != "step,excluded_window,errors":
            raise ValueError(f"{path}: unexpected header {header!r}")
        _, _, base = f.readline().strip().split(",")
        trace = PruneTrace(baseline_errors=int(base))
        for line in f:
            _, w, e = line.strip().split(",")
            trace.steps.append((int(w), int(e)))
    return trace

"""Windowed nearest-neighbour classification.

For every pixel of the grid there is a window: the S x S block centered on
that pixel, with out-of-grid positions reading as intensity 0.  The local
distance from a test image to a class is the minimum over the class's
images of the windowed L^p difference; the global distance combines the
local distances of all (non-excluded) windows in the same p-norm.  The
predicted digit minimizes the global distance, ties going to the lowest
class index.  With S >= 55 every window covers the whole 28x28 grid and
the classifier reduces to plain nearest neighbour up to a constant factor.

Classification compares exact integer power sums whenever p is 1, 2 or 3
(see kernels module), so results are bit-exact regardless of evaluation
order or thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dataset_io import N_CLASSES, LabeledSet


@dataclass(frozen=True)
class WindowSpec:
    """One window: 1-based center-pixel index in row-major order, plus size."""

    index: int
    size: int

    def __post_init__(self):
        if self.size < 3 or self.size % 2 == 0:
            raise ValueError(f"window size {self.size} must be an odd integer >= 3")
        if self.index < 1:
            raise ValueError(f"window index {self.index} must be >= 1")

    def center(self, grid):
        h, w = grid
        if self.index > h * w:
            raise ValueError(f"window index {self.index} outside 1..{h * w}")
        return divmod(self.index - 1, w)


@dataclass(frozen=True)
class ClassifierConfig:
    """Window size, distance exponent, excluded windows, binarization flag."""

    size: int = 11
    p: float = 2.0
    excluded: frozenset = field(default_factory=frozenset)
    binarized: bool = False

    def __post_init__(self):
        if self.size < 1 or self.size % 2 == 0:
            raise ValueError(f"window size {self.size} must be a positive odd integer")
        if self.p < 1:
            raise ValueError(f"exponent p={self.p} must be >= 1")
        excluded = frozenset(int(i) for i in self.excluded)
        if any(i < 1 for i in excluded):
            raise ValueError("excluded window indices are 1-based and must be >= 1")
        object.__setattr__(self, "excluded", excluded)

    def window_mask(self, grid):
        """Boolean keep-mask over row-major window indices for this grid."""
        h, w = grid
        n = h * w
        bad = [i for i in self.excluded if i > n]
        if bad:
            raise ValueError(f"excluded window indices {sorted(bad)} outside 1..{n}")
        mask = np.ones(n, dtype=bool)
        if self.excluded:
            mask[np.fromiter(self.excluded, dtype=np.int64) - 1] = False
        if not mask.any():
            raise ValueError("all windows excluded; at least one must remain")
        return mask


@dataclass
class DistanceProfile:
    """Global distance to each of the ten classes, plus the exact sums."""

    distances: np.ndarray
    power_sums: np.ndarray


def _flat(images):
    a = np.ascontiguousarray(images, dtype=np.uint8)
    if a.ndim == 2:
        a = a[None]
    h, w = a.shape[-2:]
    return a.reshape(a.shape[0], h * w), (h, w)


def local_distance(test_image, class_images, window: WindowSpec, p=2.0):
    """Minimum windowed L^p distance from one image to a class on one window."""
    imgs, grid = _flat(class_images)
    if imgs.shape[0] == 0:
        raise ValueError("class has no images")
    b, bgrid = _flat(test_image)
    if bgrid != grid:
        raise ValueError(f"grid mismatch {bgrid} vs {grid}")
    h, w = grid
    r, c = window.center(grid)
    half = (window.size - 1) // 2
    rows = slice(max(0, r - half), min(h, r + half + 1))
    cols = slice(max(0, c - half), min(w, c + half + 1))
    lut, _ = kernels.power_table(p)
    block_b = b.reshape(h, w)[rows, cols].astype(np.int64)
    block_a = imgs.reshape(-1, h, w)[:, rows, cols].astype(np.int64)
    sums = lut[np.abs(block_a - block_b[None])].reshape(imgs.shape[0], -1).sum(axis=1)
    return float(sums.min()) ** (1.0 / p)


def class_window_minima(test_images, class_images, size, p=2.0):
    """(T, H*W) per-window minimum power sums against one image collection."""
    imgs, grid = _flat(class_images)
    if imgs.shape[0] == 0:
        raise ValueError("class has no images")
    tests, tgrid = _flat(test_images)
    if tgrid != grid:
        raise ValueError(f"grid mismatch {tgrid} vs {grid}")
    lut, _ = kernels.power_table(p)
    mins = np.full((tests.shape[0], grid[0] * grid[1]), kernels.min_sentinel(lut),
                   dtype=lut.dtype)
    kernels.update_window_mins(tests, imgs, grid, size, lut, mins)
    return mins


def global_power_sum(test_image, class_images, config: ClassifierConfig):
    """Exact sum over kept windows of local distance p-th powers."""
    mins = class_window_minima(test_image, class_images, config.size, config.p)
    _, grid = _flat(class_images)
    mask = config.window_mask(grid)
    return mins[0, mask].sum()


def global_distance(test_image, class_images, config: ClassifierConfig):
    """Combined distance over all non-excluded windows: (sum of powers)^(1/p)."""
    return float(global_power_sum(test_image, class_images, config)) ** (1.0 / config.p)


def all_class_window_minima(test_images, train: LabeledSet, size, p=2.0,
                            train_stream=None):
    """(T, 10, H*W) per-window minimum power sums against every class.

    ``train_stream`` optionally replaces the materialized class stacks with
    an iterable of (class_index, images) chunks; the running minima make
    the result independent of chunking, so streamed augmentation levels
    classify identically to materialized ones.
    """
    tests, grid = _flat(test_images)
    lut, _ = kernels.power_table(p)
    mins = np.full((tests.shape[0], N_CLASSES, grid[0] * grid[1]),
                   kernels.min_sentinel(lut), dtype=lut.dtype)
    if train_stream is None:
        train.require_nonempty()
        if train.grid_shape() != grid:
            raise ValueError(f"grid mismatch {train.grid_shape()} vs {grid}")
        train_stream = ((cls, train.images[cls]) for cls in range(N_CLASSES))
    seen = np.zeros(N_CLASSES, dtype=bool)
    for cls, chunk in train_stream:
        imgs, cgrid = _flat(chunk)
        if cgrid != grid:
            raise ValueError(f"grid mismatch {cgrid} vs {grid}")
        if imgs.shape[0] == 0:
            continue
        seen[cls] = True
        kernels.update_window_mins(tests, imgs, grid, size, lut,
                                   mins[:, cls])
    if not seen.all():
        raise ValueError(f"classes {np.flatnonzero(~seen).tolist()} received no images")
    return mins


def batch_power_sums(test_images, train: LabeledSet, config: ClassifierConfig,
                     train_stream=None):
    """(T, 10) exact global power sums for a block of test images."""
    tests, grid = _flat(test_images)
    mins = all_class_window_minima(tests.reshape(-1, *grid), train, config.size,
                                   config.p, train_stream=train_stream)
    mask = config.window_mask(grid)
    if mask.all():
        return mins.sum(axis=2)
    return mins[:, :, mask].sum(axis=2)


def classify_batch(test_images, train: LabeledSet, config: ClassifierConfig,
                   train_stream=None):
    """Digits and global power sums for a block of test images."""
    sums = batch_power_sums(test_images, train, config, train_stream=train_stream)
    return np.argmin(sums, axis=1).astype(np.int64), sums


def classify(test_image, train: LabeledSet, config: ClassifierConfig):
    """Classify one image; returns (digit, DistanceProfile).

    The digit is the lowest class index attaining the minimal global
    distance; comparisons use the exact power sums.
    """
    digits, sums = classify_batch(np.asarray(test_image)[None], train, config)
    distances = np.power(sums[0].astype(np.float64), 1.0 / config.p)
    return int(digits[0]), DistanceProfile(distances=distances, power_sums=sums[0])


def nn_power_sums(test_images, train: LabeledSet, p=2.0):
    """(T, 10) per-class minima of full-image L^p power sums."""
    train.require_nonempty()
    tests, grid = _flat(test_images)
    if train.grid_shape() != grid:
        raise ValueError(f"grid mismatch {train.grid_shape()} vs {grid}")
    imgs, starts = train.stacked()
    if float(p) == 2.0:
        return kernels.nn_sq_dist_class_mins(tests, imgs, starts)
    lut, _ = kernels.power_table(p)
    mins = np.full((tests.shape[0], N_CLASSES), kernels.min_sentinel(lut),
                   dtype=lut.dtype)
    return kernels.update_full_image_mins(tests, imgs, starts, lut, mins)


def classify_nn_batch(test_images, train: LabeledSet, p=2.0):
    sums = nn_power_sums(test_images, train, p)
    return np.argmin(sums, axis=1).astype(np.int64), sums


def classify_nn(test_image, train: LabeledSet, p=2.0):
    """Plain nearest neighbour under the full-image L^p distance."""
    digits, _ = classify_nn_batch(np.asarray(test_image)[None], train, p)
    return int(digits[0])


def likelihood_score(test_image, class_images, size, sigma):
    """Log-likelihood of the class under the noisy-window model, up to a constant.

    Equals -(global distance)^2 / (2 sigma^2) with p = 2; maximizing this
    over classes is the same as minimizing the global distance.
    """
    if sigma <= 0:
        raise ValueError(f"sigma {sigma} must be positive")
    config = ClassifierConfig(size=size, p=2.0)
    d2 = float(global_power_sum(test_image, class_images, config))
    return -d2 / (2.0 * sigma * sigma)

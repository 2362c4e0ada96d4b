"""Per-training-image extension distances and the two-predictor hybrid.

Instead of pooling all of a class's images per window, the distance
variant here scores each training image A through its 125-variant
extension family: per window, the minimum over the family; summed over
windows; then the class distance is the minimum of those per-image
scores.  The hybrid resolver runs both predictors and, when they
disagree, lets a plain nearest-neighbour vote restricted to the two
candidate classes' augmented images decide.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .augmentation import ExtendedImage, ext_variants_batch
from .dataset_io import N_CLASSES, LabeledSet
from .wnn_core import ClassifierConfig, classify_batch, global_power_sum, _flat


@dataclass(frozen=True)
class HybridVerdict:
    wnn_digit: int
    dwnn_digit: int
    final_digit: int
    resolved_by: str  # "agreement" | "nn_tiebreak"

    def __post_init__(self):
        if self.final_digit not in (self.wnn_digit, self.dwnn_digit):
            raise ValueError("final digit must be one of the two predictions")
        agrees = self.wnn_digit == self.dwnn_digit
        if agrees != (self.resolved_by == "agreement"):
            raise ValueError("resolved_by inconsistent with the two predictions")


def dwnn_image_distance(test_image, ext: ExtendedImage, size):
    """Windowed distance from a test image to one 125-variant family."""
    config = ClassifierConfig(size=size, p=2.0)
    return float(global_power_sum(test_image, ext.variants, config)) ** 0.5


def dwnn_power_sums(test_images, set0_train: LabeledSet, size, *,
                    variants_fn=ext_variants_batch, train_chunk=64):
    """(T, 10) squared class distances: min over images of the family score.

    Training images stream through ``variants_fn`` (images -> per-image
    variant stacks) in chunks, so the 125x expansion never materializes.
    """
    set0_train.require_nonempty()
    tests, grid = _flat(test_images)
    if set0_train.grid_shape() != grid:
        raise ValueError(f"grid mismatch {set0_train.grid_shape()} vs {grid}")
    lut, _ = kernels.power_table(2.0)
    best = np.full((tests.shape[0], N_CLASSES), kernels.min_sentinel(lut),
                   dtype=lut.dtype)
    for cls in range(N_CLASSES):
        cls_images = set0_train.images[cls]
        for lo in range(0, cls_images.shape[0], train_chunk):
            stacks = variants_fn(cls_images[lo:lo + train_chunk])
            group = stacks.shape[1]
            var_flat = stacks.reshape(-1, grid[0] * grid[1])
            kernels.update_grouped_best(tests, var_flat, group, grid, size, lut,
                                        best[:, cls])
    return best


def dwnn_classify_batch(test_images, set0_train: LabeledSet, size, **kw):
    sums = dwnn_power_sums(test_images, set0_train, size, **kw)
    return np.argmin(sums, axis=1).astype(np.int64), sums


def dwnn_classify(test_image, set0_train: LabeledSet, size, **kw):
    """Digit whose class minimizes the extension-family distance."""
    digits, _ = dwnn_classify_batch(np.asarray(test_image)[None], set0_train, size, **kw)
    return int(digits[0])


def nn_two_class_digit(test_image, train: LabeledSet, cls_a, cls_b, p=2.0):
    """Nearest-neighbour vote restricted to two classes; lower index on ties."""
    a, b = sorted((int(cls_a), int(cls_b)))
    tests, grid = _flat(test_image)
    lut, _ = kernels.power_table(p)
    best = np.full((tests.shape[0], 2), kernels.min_sentinel(lut), dtype=lut.dtype)
    imgs = np.concatenate([train.images[a].reshape(-1, grid[0] * grid[1]),
                           train.images[b].reshape(-1, grid[0] * grid[1])])
    starts = np.array([0, train.images[a].shape[0], imgs.shape[0]], dtype=np.int64)
    kernels.update_full_image_mins(tests, imgs, starts, lut, best)
    return a if best[0, 0] <= best[0, 1] else b


def hybrid_classify_batch(test_images, set0_train: LabeledSet,
                          set4_train: LabeledSet, size, *,
                          variants_fn=ext_variants_batch, set4_stream=None):
    """HybridVerdict fields as arrays for a block of test images.

    ``set4_train`` feeds both the windowed prediction and the
    nearest-neighbour tiebreak; ``set0_train`` feeds the extension-family
    prediction.  Returns (wnn_digits, dwnn_digits, final_digits, tiebroken)
    where ``tiebroken`` marks images the two predictors disagreed on.
    """
    config = ClassifierConfig(size=size, p=2.0)
    wnn_digits, _ = classify_batch(test_images, set4_train, config,
                                   train_stream=set4_stream)
    dwnn_digits, _ = dwnn_classify_batch(test_images, set0_train, size,
                                         variants_fn=variants_fn)
    final = wnn_digits.copy()
    tiebroken = wnn_digits != dwnn_digits
    tests = np.asarray(test_images)
    for t in np.flatnonzero(tiebroken):
        final[t] = nn_two_class_digit(tests[t], set4_train,
                                      wnn_digits[t], dwnn_digits[t])
    return wnn_digits, dwnn_digits, final, tiebroken


def hybrid_classify(test_image, set0_train: LabeledSet, set4_train: LabeledSet,
                    size, **kw):
    """Run both predictors on one image and resolve disagreement."""
    w, d, f, tb = hybrid_classify_batch(np.asarray(test_image)[None], set0_train,
                                        set4_train, size, **kw)
    return HybridVerdict(
        wnn_digit=int(w[0]), dwnn_digit=int(d[0]), final_digit=int(f[0]),
        resolved_by="nn_tiebreak" if tb[0] else "agreement",
    )

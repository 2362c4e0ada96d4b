"""Deterministic training-set expansion: shifts, rotations, center rescaling.

Expansion levels ("Set 0" through "Set 4") compose a base training set with
small geometric perturbations of each image.  The level semantics differ
between MNIST and EMNIST: MNIST levels 3/4 rescale the central 20x20 digit
block, EMNIST levels 3/4 widen the shift radius to two pixels.  Every
variant is described by a short op sequence so that counting, materializing
and lazily streaming a level all derive from one plan and stay bit-identical.

Interpolation choices (the level definitions leave them open) are pinned
for determinism: bilinear sampling, rotation about the grid center
(13.5, 13.5), round-half-up to integers, clamp to [0, 255].  Rescaling uses
corner-aligned sampling of the central block so a uniform block stays
uniform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset_io import GRID, N_CLASSES, LabeledSet

ROTATION_DEGREES = (-25.0, -5.0, 5.0, 25.0)
RESCALE_TARGETS = ((18, 20), (22, 20), (20, 18), (20, 22))
ROTATE_ORDERS = ("shift_then_rotate", "rotate_then_shift")

# Identity first so the first variant of any level is the base image.
SHIFTS_R1 = ((0, 0),) + tuple(
    (dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dx, dy) != (0, 0)
)
SHIFTS_R2 = ((0, 0),) + tuple(
    (dx, dy) for dy in (-2, -1, 0, 1, 2) for dx in (-2, -1, 0, 1, 2) if (dx, dy) != (0, 0)
)

LEVELS = ("set0", "set1", "set2", "set3", "set4")


@dataclass(frozen=True)
class AugmentLevel:
    dataset: str
    level: str

    def __post_init__(self):
        if self.dataset not in ("mnist", "emnist"):
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.level not in LEVELS:
            raise ValueError(f"unknown level {self.level!r}")


@dataclass(frozen=True)
class ExtendedImage:
    """One image together with its 125 shift/rotation variants."""

    base: np.ndarray
    variants: np.ndarray

    def __post_init__(self):
        if self.variants.shape[0] != 125:
            raise ValueError(f"expected 125 variants, got {self.variants.shape[0]}")
        if not np.array_equal(self.variants[0], self.base):
            raise ValueError("first variant must equal the base image")


def shift(image, dx, dy):
    """Translate pixel content by (dx, dy) = (columns right, rows down).

    Source coordinates outside the grid fill with 0.  Exact: no resampling.
    """
    if abs(dx) > 2 or abs(dy) > 2:
        raise ValueError(f"shift ({dx}, {dy}) exceeds the supported radius 2")
    batch = np.asarray(image)
    single = batch.ndim == 2
    if single:
        batch = batch[None]
    out = np.zeros_like(batch)
    h, w = batch.shape[-2:]
    rs, re = max(0, dy), min(h, h + dy)
    cs, ce = max(0, dx), min(w, w + dx)
    out[:, rs:re, cs:ce] = batch[:, rs - dy:re - dy, cs - dx:ce - dx]
    return out[0] if single else out


class _BilinearMap:
    """Precomputed bilinear resampling of a fixed coordinate mapping.

    Holds, for every output pixel, the four source-neighbour flat indices
    and weights; neighbours outside the allowed source region contribute 0.
    Applying the map to a batch is four gathers and a weighted sum, then
    round-half-up and clamp to [0, 255].
    """

    def __init__(self, src_rows, src_cols, region, out_shape):
        r_lo, r_hi, c_lo, c_hi = region  # half-open valid source rectangle
        i0 = np.floor(src_rows).astype(np.int64)
        j0 = np.floor(src_cols).astype(np.int64)
        fy = src_rows - i0
        fx = src_cols - j0
        self.out_shape = out_shape
        self.idx = np.empty((4, src_rows.size), dtype=np.int64)
        self.w = np.empty((4, src_rows.size), dtype=np.float64)
        corners = ((i0, j0, (1 - fy) * (1 - fx)), (i0, j0 + 1, (1 - fy) * fx),
                   (i0 + 1, j0, fy * (1 - fx)), (i0 + 1, j0 + 1, fy * fx))
        for k, (ri, ci, wk) in enumerate(corners):
            valid = (ri >= r_lo) & (ri < r_hi) & (ci >= c_lo) & (ci < c_hi)
            self.idx[k] = np.where(valid, ri * GRID + ci, 0)
            self.w[k] = np.where(valid, wk, 0.0)

    def apply(self, images):
        batch = np.asarray(images)
        single = batch.ndim == 2
        if single:
            batch = batch[None]
        flat = batch.reshape(batch.shape[0], -1).astype(np.float64)
        acc = flat[:, self.idx[0]] * self.w[0]
        for k in range(1, 4):
            acc += flat[:, self.idx[k]] * self.w[k]
        out = np.clip(np.floor(acc + 0.5), 0, 255).astype(np.uint8)
        out = out.reshape(batch.shape[0], *self.out_shape)
        return out[0] if single else out


_ROTATE_MAPS = {}
_RESCALE_MAPS = {}


def _rotate_map(degrees):
    key = float(degrees)
    if key not in _ROTATE_MAPS:
        center = (GRID - 1) / 2.0  # 13.5: geometric center of the grid
        rad = math.radians(key)
        cos, sin = math.cos(rad), math.sin(rad)
        rr, cc = np.meshgrid(np.arange(GRID), np.arange(GRID), indexing="ij")
        y = rr.ravel() - center
        x = cc.ravel() - center
        src_cols = center + cos * x + sin * y   # inverse rotation of output coords
        src_rows = center + -sin * x + cos * y
        _ROTATE_MAPS[key] = _BilinearMap(src_rows, src_cols, (0, GRID, 0, GRID),
                                         (GRID, GRID))
    return _ROTATE_MAPS[key]


def _rescale_map(new_width, new_height):
    """Resample the central 20x20 block to new_width x new_height, re-embedded centered."""
    key = (int(new_width), int(new_height))
    if key not in _RESCALE_MAPS:
        w, h = key
        block, lo = 20, 4  # central block rows/cols 4..23
        # Corner-aligned sampling keeps all source points inside the block,
        # so no zero background bleeds into the rescaled digit.
        rows = np.arange(h) * (block - 1) / (h - 1) + lo
        cols = np.arange(w) * (block - 1) / (w - 1) + lo
        src_rows = np.repeat(rows, w)
        src_cols = np.tile(cols, h)
        _RESCALE_MAPS[key] = _BilinearMap(src_rows, src_cols,
                                          (lo, lo + block, lo, lo + block), (h, w))
    return _RESCALE_MAPS[key]


def rotate(image, degrees):
    """Rotate pixel content about the grid center by ``degrees`` (bilinear)."""
    if not -45.0 <= degrees <= 45.0:
        raise ValueError(f"rotation {degrees} outside [-45, 45] degrees")
    return _rotate_map(degrees).apply(image)


def rescale_center(image, new_width, new_height):
    """Resize the central 20x20 block and re-embed it centered in a zero grid."""
    if (new_width, new_height) not in RESCALE_TARGETS:
        raise ValueError(
            f"unsupported target size {(new_width, new_height)}, "
            f"expected one of {RESCALE_TARGETS}"
        )
    sampled = _rescale_map(new_width, new_height).apply(image)
    batch = sampled if sampled.ndim == 3 else sampled[None]
    out = np.zeros((batch.shape[0], GRID, GRID), dtype=np.uint8)
    r0 = (GRID - new_height) // 2
    c0 = (GRID - new_width) // 2
    out[:, r0:r0 + new_height, c0:c0 + new_width] = batch
    return out if sampled.ndim == 3 else out[0]


def _apply_ops(images, ops):
    out = images
    for op in ops:
        if op[0] == "shift":
            out = shift(out, op[1], op[2])
        elif op[0] == "rotate":
            out = rotate(out, op[1])
        elif op[0] == "rescale":
            out = rescale_center(out, op[1], op[2])
        else:
            raise ValueError(f"unknown op {op!r}")
    return out


def apply_variant(images, ops):
    """Apply one variant op sequence to an image or image stack."""
    return _apply_ops(np.asarray(images), ops)


def _with_rotation(base_ops, degrees, rotate_order):
    rot = ("rotate", degrees)
    if rotate_order == "rotate_then_shift":
        return (rot,) + base_ops
    return base_ops + (rot,)


def variant_plan(spec: AugmentLevel, rotate_order="shift_then_rotate"):
    """Ordered op sequences defining every variant of one level.

    The first entry is always the identity, so the base image leads each
    image's variant family.  ``rotate_order`` selects whether rotations
    compose before or after the shift of already-shifted variants; the
    level definitions fix only that shifted images get rotated, not the
    composition order, so both are available for sensitivity runs.
    """
    if rotate_order not in ROTATE_ORDERS:
        raise ValueError(f"rotate_order must be one of {ROTATE_ORDERS}")
    shifts1 = [() if s == (0, 0) else (("shift",) + s,) for s in SHIFTS_R1]
    shifts2 = [() if s == (0, 0) else (("shift",) + s,) for s in SHIFTS_R2]

    level = spec.level
    if level == "set0":
        return [()]
    if spec.dataset == "mnist":
        if level == "set1":
            return list(shifts1)
        if level == "set2":
            return list(shifts1) + [
                _with_rotation(v, deg, rotate_order)
                for v in shifts1 for deg in ROTATION_DEGREES
            ]
        if level == "set3":
            return list(shifts1) + [
                v + (("rescale",) + t,) for v in shifts1 for t in RESCALE_TARGETS
            ]
        # set4: union of set2 and set3 with the shared set1 counted once
        return list(shifts1) + [
            _with_rotation(v, deg, rotate_order)
            for v in shifts1 for deg in ROTATION_DEGREES
        ] + [
            v + (("rescale",) + t,) for v in shifts1 for t in RESCALE_TARGETS
        ]
    # emnist
    if level == "set1":
        return list(shifts1)
    if level == "set2":
        return list(shifts1) + [
            _with_rotation(v, deg, rotate_order)
            for v in shifts1 for deg in ROTATION_DEGREES
        ]
    if level == "set3":
        return list(shifts2)
    return list(shifts2) + [
        _with_rotation(v, deg, rotate_order)
        for v in shifts2 for deg in ROTATION_DEGREES
    ]


def variants_per_image(spec: AugmentLevel):
    return len(variant_plan(spec))


def level_cardinality(n_base, spec: AugmentLevel):
    """Number of images the level produces from ``n_base`` base images."""
    return n_base * variants_per_image(spec)


def build_level(base_train: LabeledSet, spec: AugmentLevel,
                rotate_order="shift_then_rotate"):
    """Materialize a full augmentation level as a new LabeledSet.

    Output order within each class is (base index, variant index)
    lexicographic, independent of how the work is batched.  Augmented
    images get id 0: enumeration ids identify dataset images, and only
    unaugmented images carry one.
    """
    plan = variant_plan(spec, rotate_order)
    if spec.level == "set0":
        return base_train
    out_images = []
    out_ids = []
    for cls_images in base_train.images:
        n = cls_images.shape[0]
        stack = np.empty((n, len(plan), GRID, GRID), dtype=np.uint8)
        for vi, ops in enumerate(plan):
            stack[:, vi] = apply_variant(cls_images, ops)
        out_images.append(stack.reshape(n * len(plan), GRID, GRID))
        out_ids.append(np.zeros(n * len(plan), dtype=np.int64))
    return LabeledSet.from_arrays(out_images, out_ids)


def iter_level(base_train: LabeledSet, spec: AugmentLevel,
               rotate_order="shift_then_rotate", base_chunk=512):
    """Stream a level as (class_index, images) chunks without materializing it.

    Within each class, chunks follow (base index, variant index) order.
    Classifying against the streamed chunks and against the materialized
    set give identical results: per-window minima do not depend on order.
    """
    plan = variant_plan(spec, rotate_order)
    for cls, cls_images in enumerate(base_train.images):
        n = cls_images.shape[0]
        for lo in range(0, n, base_chunk):
            part = cls_images[lo:lo + base_chunk]
            m = part.shape[0]
            stack = np.empty((m, len(plan), GRID, GRID), dtype=np.uint8)
            for vi, ops in enumerate(plan):
                stack[:, vi] = apply_variant(part, ops)
            yield cls, stack.reshape(m * len(plan), GRID, GRID)


def ext_variant_plan(rotate_order="rotate_then_shift"):
    """The 125 op sequences (5 rotations x 25 shifts) extending one image.

    By default the rotation is applied to the base image and the result
    shifted, mirroring how the per-image extension family is defined.
    """
    if rotate_order not in ROTATE_ORDERS:
        raise ValueError(f"rotate_order must be one of {ROTATE_ORDERS}")
    plan = []
    for deg in (None,) + ROTATION_DEGREES:
        for s in SHIFTS_R2:
            ops = ()
            if s != (0, 0):
                ops = (("shift",) + s,)
            if deg is not None:
                ops = _with_rotation(ops, deg, rotate_order)
            plan.append(ops)
    return plan


def build_ext(image, rotate_order="rotate_then_shift"):
    """Build the 125-variant extension family of a single image."""
    base = np.asarray(image, dtype=np.uint8)
    plan = ext_variant_plan(rotate_order)
    variants = np.empty((len(plan), GRID, GRID), dtype=np.uint8)
    for vi, ops in enumerate(plan):
        variants[vi] = apply_variant(base, ops)
    return ExtendedImage(base=base, variants=variants)


def ext_variants_batch(images, rotate_order="rotate_then_shift"):
    """Variant stacks for many images at once: (n, 125, 28, 28)."""
    batch = np.asarray(images, dtype=np.uint8)
    plan = ext_variant_plan(rotate_order)
    out = np.empty((batch.shape[0], len(plan), GRID, GRID), dtype=np.uint8)
    for vi, ops in enumerate(plan):
        out[:, vi] = apply_variant(batch, ops)
    return out


def level_manifest(base_train: LabeledSet, spec: AugmentLevel):
    """Integrity sidecar for a materialized level."""
    per_digit = [level_cardinality(n, spec) for n in base_train.counts()]
    return {
        "dataset": spec.dataset,
        "level": spec.level,
        "variants_per_image": variants_per_image(spec),
        "counts_per_digit": per_digit,
        "total": sum(per_digit),
    }

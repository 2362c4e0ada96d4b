"""IDX dataset loading, train/test splits and binarization.

Images are 28x28 grids of uint8 intensities stored row-major; any
coordinate outside the grid reads as intensity 0 by convention, which the
distance kernels implement via zero padding.  A ``LabeledSet`` groups
images into the ten digit classes and keeps, for each image, its 1-based
position in the per-digit enumeration of the dataset (training file first,
then test file).  Those positions are what evaluation reports use to
identify misclassified images across runs.
"""

from __future__ import annotations

import gzip
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

GRID = 28
N_CLASSES = 10

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

# Canonical file names inside a data directory.
DATASET_FILES = {
    "mnist": (
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ),
    "emnist-digits": (
        "emnist-digits-train-images-idx3-ubyte",
        "emnist-digits-train-labels-idx1-ubyte",
        "emnist-digits-test-images-idx3-ubyte",
        "emnist-digits-test-labels-idx1-ubyte",
    ),
}

DATA_DIR_ENV = "WNN_DATA_DIR"


class IdxFormatError(ValueError):
    """Raised when an IDX file violates the format contract."""


class SplitError(ValueError):
    """Raised when a split specification does not fit the dataset."""


def _open_maybe_gzip(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(f, n, path, what):
    buf = f.read(n)
    if len(buf) != n:
        raise IdxFormatError(
            f"{path}: truncated file, expected {n} more bytes for {what}, got {len(buf)}"
        )
    return buf


def load_idx(images_path, labels_path):
    """Load an IDX image/label file pair.

    Returns ``(images, labels)`` with ``images`` of shape (n, 28, 28) uint8
    and ``labels`` of shape (n,) uint8, in file order.  Both plain and
    gzip-compressed files are accepted.  All header integers are big-endian.
    """
    with _open_maybe_gzip(labels_path) as f:
        magic, n_labels = struct.unpack(">II", _read_exact(f, 8, labels_path, "label header"))
        if magic != LABEL_MAGIC:
            raise IdxFormatError(
                f"{labels_path}: bad label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}"
            )
        labels = np.frombuffer(_read_exact(f, n_labels, labels_path, "labels"), dtype=np.uint8)

    with _open_maybe_gzip(images_path) as f:
        header = _read_exact(f, 16, images_path, "image header")
        magic, n_images, rows, cols = struct.unpack(">IIII", header)
        if magic != IMAGE_MAGIC:
            raise IdxFormatError(
                f"{images_path}: bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}"
            )
        if rows != GRID or cols != GRID:
            raise IdxFormatError(
                f"{images_path}: image dimensions {rows}x{cols}, expected {GRID}x{GRID}"
            )
        if n_images != n_labels:
            raise IdxFormatError(
                f"count mismatch: {images_path} has {n_images} images but "
                f"{labels_path} has {n_labels} labels"
            )
        raw = _read_exact(f, n_images * rows * cols, images_path, "pixel data")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(n_images, rows, cols)

    return images, labels


def save_idx(images, labels, images_path, labels_path):
    """Write images/labels back to IDX files (round-trip inverse of load_idx)."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(f"{images.shape[0]} images vs {labels.shape[0]} labels")
    with _open_maybe_gzip_write(images_path) as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, images.shape[0], GRID, GRID))
        f.write(images.tobytes())
    with _open_maybe_gzip_write(labels_path) as f:
        f.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def _open_maybe_gzip_write(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "wb")
    return open(path, "wb")


def orient_emnist(image):
    """Transpose the pixel grid (EMNIST files store images transposed).

    Works on a single (28, 28) image or a stack (n, 28, 28); an involution.
    """
    a = np.asarray(image)
    return np.swapaxes(a, -1, -2).copy()


def binarize(image, threshold=128):
    """Map pixels below ``threshold`` to 0 and the rest to 255.

    Keeping the two-valued range at {0, 255} rather than {0, 1} lets
    binarized images flow through every pipeline unchanged; class argmins
    are invariant to the common scale factor.  Idempotent for any
    threshold in [1, 255].
    """
    if not 1 <= threshold <= 255:
        raise ValueError(f"threshold {threshold} outside [1, 255]")
    a = np.asarray(image)
    return np.where(a >= threshold, 255, 0).astype(np.uint8)


@dataclass(frozen=True)
class SplitSpec:
    """Which dataset and which per-digit train/test index ranges to use.

    Ranges are 1-based and inclusive, indexing the per-digit enumeration
    (training file first, then test file).  ``test_range`` end of None
    means "through the last image of the digit".
    """

    dataset: str = "mnist"
    scheme: str = "balanced"
    train_range: tuple | None = None
    test_range: tuple | None = None

    def __post_init__(self):
        if self.dataset not in ("mnist", "emnist-digits"):
            raise SplitError(f"unknown dataset {self.dataset!r}")
        if self.scheme not in ("standard", "balanced", "custom"):
            raise SplitError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "custom":
            if self.train_range is None or self.test_range is None:
                raise SplitError("custom scheme requires train_range and test_range")
            a, b = self.train_range
            c, d = self.test_range
            if not (1 <= a <= b):
                raise SplitError(f"bad train range {self.train_range}")
            if d is not None and not (1 <= c <= d):
                raise SplitError(f"bad test range {self.test_range}")
            if d is not None and not (b < c or d < a):
                raise SplitError(
                    f"train range {self.train_range} overlaps test range {self.test_range}"
                )
            if d is None and c <= b:
                raise SplitError(
                    f"train range {self.train_range} overlaps test range {self.test_range}"
                )

    @classmethod
    def mnist_standard(cls):
        return cls(dataset="mnist", scheme="standard")

    @classmethod
    def mnist_balanced(cls):
        return cls(dataset="mnist", scheme="balanced")

    @classmethod
    def emnist_digits(cls):
        return cls(dataset="emnist-digits", scheme="balanced")

    @classmethod
    def custom(cls, train_range, test_range, dataset="mnist"):
        return cls(dataset=dataset, scheme="custom",
                   train_range=tuple(train_range), test_range=tuple(test_range))


@dataclass
class LabeledSet:
    """Per-class image collections with their enumeration ids.

    ``images[i]`` is an (n_i, H, W) uint8 array for digit ``i``;
    ``ids[i]`` holds the matching 1-based enumeration positions.  Arrays
    are marked read-only; the set is safe for concurrent readers.
    """

    images: tuple
    ids: tuple

    def __post_init__(self):
        if len(self.images) != N_CLASSES or len(self.ids) != N_CLASSES:
            raise ValueError(f"expected {N_CLASSES} classes")
        imgs = []
        idarrs = []
        for i, (a, v) in enumerate(zip(self.images, self.ids)):
            a = np.ascontiguousarray(a, dtype=np.uint8)
            v = np.ascontiguousarray(v, dtype=np.int64)
            if a.shape[0] != v.shape[0]:
                raise ValueError(f"class {i}: {a.shape[0]} images vs {v.shape[0]} ids")
            a.flags.writeable = False
            v.flags.writeable = False
            imgs.append(a)
            idarrs.append(v)
        object.__setattr__(self, "images", tuple(imgs))
        object.__setattr__(self, "ids", tuple(idarrs))

    @classmethod
    def from_arrays(cls, per_class_images, per_class_ids=None):
        if per_class_ids is None:
            per_class_ids = [np.arange(1, len(a) + 1) for a in per_class_images]
        return cls(images=tuple(per_class_images), ids=tuple(per_class_ids))

    def counts(self):
        return [a.shape[0] for a in self.images]

    def total(self):
        return sum(self.counts())

    def grid_shape(self):
        return self.images[0].shape[1:]

    def require_nonempty(self):
        for i, a in enumerate(self.images):
            if a.shape[0] == 0:
                raise ValueError(f"class {i} is empty")

    def stacked(self):
        """All images concatenated in class order, plus class start offsets.

        Returns ``(flat, starts)`` where ``flat`` is (N, H*W) uint8 and
        ``starts`` has 11 entries with class i occupying
        ``flat[starts[i]:starts[i+1]]``.
        """
        n = self.total()
        h, w = self.grid_shape()
        flat = np.empty((n, h * w), dtype=np.uint8)
        starts = np.zeros(N_CLASSES + 1, dtype=np.int64)
        pos = 0
        for i, a in enumerate(self.images):
            k = a.shape[0]
            flat[pos:pos + k] = a.reshape(k, h * w)
            pos += k
            starts[i + 1] = pos
        return flat, starts

    def map_images(self, fn):
        """New LabeledSet with ``fn`` applied to each class's image stack."""
        return LabeledSet(images=tuple(fn(a) for a in self.images), ids=self.ids)

    def flat_labels_and_ids(self):
        """(labels, ids) over all images in class-major order."""
        labels = np.concatenate([
            np.full(a.shape[0], i, dtype=np.int64) for i, a in enumerate(self.images)
        ])
        ids = np.concatenate(self.ids)
        return labels, ids


def _enumerate_per_digit(train_file, test_file):
    """Concatenate train-file then test-file images per digit, in file order."""
    tr_images, tr_labels = train_file
    te_images, te_labels = test_file
    per_digit = []
    for d in range(N_CLASSES):
        parts = [tr_images[tr_labels == d], te_images[te_labels == d]]
        per_digit.append(np.concatenate(parts, axis=0))
    return per_digit


def build_split(spec: SplitSpec, train_file, test_file):
    """Construct (train, test) LabeledSets from raw file pairs.

    ``train_file`` and ``test_file`` are (images, labels) pairs as returned
    by :func:`load_idx`.  Scheme semantics:

    * ``standard``: per digit, training = all training-file images, test =
      all test-file images (ranges expressed in the joint enumeration).
    * ``balanced``: per digit, training = enumeration 1:6000 for MNIST
      (1:24000 for EMNIST digits), test = the remainder.
    * ``custom``: explicit 1-based inclusive ranges from the spec.
    """
    per_digit = _enumerate_per_digit(train_file, test_file)
    tr_labels = train_file[1]

    train_imgs, train_ids, test_imgs, test_ids = [], [], [], []
    for d in range(N_CLASSES):
        avail = per_digit[d].shape[0]
        if spec.scheme == "standard":
            boundary = int(np.count_nonzero(tr_labels == d))
            tr_lo, tr_hi, te_lo, te_hi = 1, boundary, boundary + 1, avail
        elif spec.scheme == "balanced":
            boundary = 6000 if spec.dataset == "mnist" else 24000
            tr_lo, tr_hi, te_lo, te_hi = 1, boundary, boundary + 1, avail
        else:
            tr_lo, tr_hi = spec.train_range
            te_lo, te_hi = spec.test_range
            if te_hi is None:
                te_hi = avail
        for name, lo, hi in (("train", tr_lo, tr_hi), ("test", te_lo, te_hi)):
            if hi > avail:
                raise SplitError(
                    f"digit {d}: {name} range {lo}:{hi} exceeds {avail} available images"
                )
        train_imgs.append(per_digit[d][tr_lo - 1:tr_hi])
        train_ids.append(np.arange(tr_lo, tr_hi + 1, dtype=np.int64))
        test_imgs.append(per_digit[d][te_lo - 1:te_hi])
        test_ids.append(np.arange(te_lo, te_hi + 1, dtype=np.int64))

    return (LabeledSet.from_arrays(train_imgs, train_ids),
            LabeledSet.from_arrays(test_imgs, test_ids))


def default_data_dir():
    return os.environ.get(DATA_DIR_ENV, "data")


def dataset_paths(data_dir, dataset):
    """Resolve the four IDX files for a dataset, preferring .gz when present."""
    if dataset not in DATASET_FILES:
        raise SplitError(f"unknown dataset {dataset!r}")
    subdir = os.path.join(data_dir, "mnist" if dataset == "mnist" else "emnist")
    base = subdir if os.path.isdir(subdir) else data_dir
    out = []
    for name in DATASET_FILES[dataset]:
        plain = os.path.join(base, name)
        gz = plain + ".gz"
        out.append(gz if os.path.exists(gz) else plain)
    return tuple(out)


def load_dataset(data_dir, dataset, orient=True):
    """Load and orient a full dataset; returns (train_file, test_file) pairs.

    EMNIST images are transposed to display orientation at load time so
    downstream code never distinguishes datasets; pass ``orient=False`` to
    inspect the raw storage orientation.
    """
    tri, trl, tei, tel = dataset_paths(data_dir, dataset)
    for p in (tri, trl, tei, tel):
        if not os.path.exists(p):
            raise FileNotFoundError(
                f"{p} not found; set ${DATA_DIR_ENV} or pass --data-dir "
                f"(see README for download instructions)"
            )
    train_file = load_idx(tri, trl)
    test_file = load_idx(tei, tel)
    if dataset == "emnist-digits" and orient:
        train_file = (orient_emnist(train_file[0]), train_file[1])
        test_file = (orient_emnist(test_file[0]), test_file[1])
    return train_file, test_file


def load_split(data_dir, spec: SplitSpec):
    """Convenience: load the dataset named by ``spec`` and split it."""
    train_file, test_file = load_dataset(data_dir, spec.dataset)
    return build_split(spec, train_file, test_file)


def write_labeled_set_idx(lset: LabeledSet, images_path, labels_path, manifest_path=None,
                          extra_manifest=None):
    """Materialize a LabeledSet to IDX files plus an optional JSON manifest."""
    h, w = lset.grid_shape()
    if (h, w) != (GRID, GRID):
        raise ValueError(f"IDX export requires {GRID}x{GRID} images, got {h}x{w}")
    flat, starts = lset.stacked()
    labels = np.repeat(np.arange(N_CLASSES, dtype=np.uint8), np.diff(starts))
    save_idx(flat.reshape(-1, GRID, GRID), labels, images_path, labels_path)
    if manifest_path is not None:
        manifest = {"counts_per_digit": lset.counts(), "total": lset.total()}
        if extra_manifest:
            manifest.update(extra_manifest)
        with open(manifest_path, "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")

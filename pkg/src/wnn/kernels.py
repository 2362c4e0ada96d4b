"""Exact sliding-window distance kernels.

The classifier needs, for a test image B and a class of training images,
the minimum over the class of the windowed difference-power sum at every
window center.  The naive cost per image pair is (number of windows) * S^2;
these kernels instead build one summed-area table per pair over a
zero-padded grid and read each window sum in O(1), making full-dataset runs
feasible on a desktop.

Arithmetic contract: per-pixel difference powers come from a 256-entry
lookup table.  For integer exponents p in {1, 2, 3} the table is int64 and
every accumulation is exact integer arithmetic, so comparisons and argmins
are bit-exact and platform-independent (largest possible table value
255^3 ~ 1.7e7; a full-image sum stays below 2^34).  Other exponents use a
float64 table; sums of table entries are deterministic for a fixed
summation order, which the kernels fix, but cross-platform bit-exactness is
not guaranteed.

Parallelism is over test images only: each worker writes a disjoint output
slice, so results are identical for any thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

import numba

INT_SENTINEL = np.int64(1) << 62


def set_threads(n):
    """Limit kernel worker threads; 0 restores the hardware default."""
    numba.set_num_threads(numba.config.NUMBA_NUM_THREADS if n == 0 else n)


def power_table(p):
    """(lookup, exact): per-|difference| p-th powers for all 256 values.

    ``exact`` is True when the table is integer (p in {1, 2, 3}) and all
    downstream arithmetic is exact.
    """
    deltas = np.arange(256)
    if float(p) in (1.0, 2.0, 3.0):
        return (deltas.astype(np.int64) ** int(p)).astype(np.int64), True
    return np.power(deltas.astype(np.float64), float(p)), False


def min_sentinel(lut):
    return INT_SENTINEL if lut.dtype == np.int64 else np.inf


@njit(cache=True, parallel=True)
def _update_window_mins(tests, imgs, height, width, size, lut, mins):
    """Accumulate per-window minima of windowed power sums into ``mins``.

    tests: (T, H*W) uint8, imgs: (N, H*W) uint8, mins: (T, H*W) of
    lut.dtype, already initialized (sentinel or previous chunk state).
    Window ``w = r*W + c`` is the size x size block centered on pixel
    (r, c); pixels outside the grid contribute lut[0].
    """
    half = (size - 1) // 2
    ph = height + 2 * half
    pw = width + 2 * half
    for t in prange(tests.shape[0]):
        sq = np.zeros((ph, pw), lut.dtype)
        sat = np.zeros((ph + 1, pw + 1), lut.dtype)
        b = tests[t]
        tm = mins[t]
        for j in range(imgs.shape[0]):
            a = imgs[j]
            for r in range(height):
                base = r * width
                for c in range(width):
                    sq[r + half, c + half] = lut[np.abs(
                        np.int64(b[base + c]) - np.int64(a[base + c]))]
            for r in range(ph):
                acc = sq[r, 0] - sq[r, 0]  # typed zero
                for c in range(pw):
                    acc += sq[r, c]
                    sat[r + 1, c + 1] = acc + sat[r, c + 1]
            for r in range(height):
                top = sat[r]
                bot = sat[r + size]
                base = r * width
                for c in range(width):
                    ws = bot[c + size] - top[c + size] - bot[c] + top[c]
                    if ws < tm[base + c]:
                        tm[base + c] = ws
    return mins


@njit(cache=True, parallel=True)
def _update_window_mins_multi(tests, imgs, height, width, sizes, lut, mins):
    """Multi-window-size variant sharing one summed-area table per pair.

    mins: (T, len(sizes), H*W).  Identical results to calling the
    single-size kernel once per size, at a fraction of the cost.
    """
    hmax = 0
    for k in range(sizes.shape[0]):
        h = (sizes[k] - 1) // 2
        if h > hmax:
            hmax = h
    ph = height + 2 * hmax
    pw = width + 2 * hmax
    for t in prange(tests.shape[0]):
        sq = np.zeros((ph, pw), lut.dtype)
        sat = np.zeros((ph + 1, pw + 1), lut.dtype)
        b = tests[t]
        for j in range(imgs.shape[0]):
            a = imgs[j]
            for r in range(height):
                base = r * width
                for c in range(width):
                    sq[r + hmax, c + hmax] = lut[np.abs(
                        np.int64(b[base + c]) - np.int64(a[base + c]))]
            for r in range(ph):
                acc = sq[r, 0] - sq[r, 0]
                for c in range(pw):
                    acc += sq[r, c]
                    sat[r + 1, c + 1] = acc + sat[r, c + 1]
            for k in range(sizes.shape[0]):
                size = sizes[k]
                off = hmax - (size - 1) // 2
                tm = mins[t, k]
                for r in range(height):
                    top = sat[r + off]
                    bot = sat[r + off + size]
                    base = r * width
                    for c in range(width):
                        ws = (bot[c + off + size] - top[c + off + size]
                              - bot[c + off] + top[c + off])
                        if ws < tm[base + c]:
                            tm[base + c] = ws
    return mins


@njit(cache=True, parallel=True)
def _update_full_image_mins(tests, imgs, starts, lut, mins):
    """Per-class minima of full-image power sums (plain nearest neighbour).

    mins: (T, n_classes) of lut.dtype, already initialized; imgs grouped so
    class i occupies rows starts[i]:starts[i+1].
    """
    npix = tests.shape[1]
    for t in prange(tests.shape[0]):
        b = tests[t]
        for i in range(starts.shape[0] - 1):
            best = mins[t, i]
            for j in range(starts[i], starts[i + 1]):
                a = imgs[j]
                s = lut[0] - lut[0]
                for k in range(npix):
                    s += lut[np.abs(np.int64(b[k]) - np.int64(a[k]))]
                if s < best:
                    best = s
            mins[t, i] = best
    return mins


@njit(cache=True, parallel=True)
def _update_grouped_best(tests, var_flat, group, height, width, size, lut, best, sentinel):
    """Minimum over image groups of the summed per-window group minima.

    ``var_flat`` holds M groups of ``group`` variant images each, flattened
    to (M*group, H*W).  For each test image and each group: take the
    per-window minimum over the group's variants, sum those minima over all
    windows, and fold the total into ``best`` (T,) with a running minimum.
    This is the distance-to-extension-family computation streamed over
    training images.
    """
    half = (size - 1) // 2
    ph = height + 2 * half
    pw = width + 2 * half
    nw = height * width
    m = var_flat.shape[0] // group
    for t in prange(tests.shape[0]):
        sq = np.zeros((ph, pw), lut.dtype)
        sat = np.zeros((ph + 1, pw + 1), lut.dtype)
        gmins = np.empty(nw, lut.dtype)
        b = tests[t]
        for g in range(m):
            for w in range(nw):
                gmins[w] = sentinel
            for j in range(g * group, (g + 1) * group):
                a = var_flat[j]
                for r in range(height):
                    base = r * width
                    for c in range(width):
                        sq[r + half, c + half] = lut[np.abs(
                            np.int64(b[base + c]) - np.int64(a[base + c]))]
                for r in range(ph):
                    acc = sq[r, 0] - sq[r, 0]
                    for c in range(pw):
                        acc += sq[r, c]
                        sat[r + 1, c + 1] = acc + sat[r, c + 1]
                for r in range(height):
                    top = sat[r]
                    bot = sat[r + size]
                    base = r * width
                    for c in range(width):
                        ws = bot[c + size] - top[c + size] - bot[c] + top[c]
                        if ws < gmins[base + c]:
                            gmins[base + c] = ws
            total = gmins[0] - gmins[0]
            for w in range(nw):
                total += gmins[w]
            if total < best[t]:
                best[t] = total
    return best


def update_window_mins(tests, imgs, grid, size, lut, mins):
    h, w = grid
    return _update_window_mins(tests, imgs, h, w, size, lut, mins)


def update_window_mins_multi(tests, imgs, grid, sizes, lut, mins):
    h, w = grid
    sizes = np.asarray(sizes, dtype=np.int64)
    return _update_window_mins_multi(tests, imgs, h, w, sizes, lut, mins)


def update_full_image_mins(tests, imgs, starts, lut, mins):
    return _update_full_image_mins(tests, imgs, starts, lut, mins)


def update_grouped_best(tests, var_flat, group, grid, size, lut, best):
    h, w = grid
    sentinel = lut.dtype.type(min_sentinel(lut))
    return _update_grouped_best(tests, var_flat, group, h, w, size, lut, best, sentinel)


def nn_sq_dist_class_mins(tests, imgs, starts):
    """Exact per-class minimum squared Euclidean distances via BLAS.

    All quantities are integers below 2^53, so the float64 matrix products
    are exact; the result is returned as int64.  Far faster than the
    generic kernel for the plain nearest-neighbour (p = 2) case.
    """
    t64 = tests.astype(np.float64)
    i64 = imgs.astype(np.float64)
    t_sq = np.einsum("ij,ij->i", t64, t64)
    i_sq = np.einsum("ij,ij->i", i64, i64)
    out = np.empty((tests.shape[0], starts.shape[0] - 1), dtype=np.int64)
    block = max(1, int(2e8) // max(1, imgs.shape[0]))  # ~1.6 GB of float64 per block
    for lo in range(0, tests.shape[0], block):
        hi = min(lo + block, tests.shape[0])
        d2 = t_sq[lo:hi, None] + i_sq[None, :] - 2.0 * (t64[lo:hi] @ i64.T)
        for i in range(starts.shape[0] - 1):
            out[lo:hi, i] = d2[:, starts[i]:starts[i + 1]].min(axis=1)
    return out

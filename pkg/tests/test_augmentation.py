import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wnn.augmentation import (AugmentLevel, ExtendedImage, build_ext, build_level,
                              ext_variant_plan, iter_level, level_cardinality,
                              level_manifest, rescale_center, rotate, shift,
                              variant_plan, variants_per_image)
from wnn.dataset_io import GRID, LabeledSet


def tiny_set(rng, per_class=2):
    return LabeledSet.from_arrays(
        [rng.integers(0, 256, size=(per_class, GRID, GRID), dtype=np.uint8)
         for _ in range(10)])


class TestShift:
    def test_all_zero_stays_zero(self):
        img = np.zeros((GRID, GRID), dtype=np.uint8)
        for dx, dy in ((1, 0), (-2, 2), (0, 0)):
            assert shift(img, dx, dy).sum() == 0

    def test_single_pixel_moves(self):
        img = np.zeros((GRID, GRID), dtype=np.uint8)
        img[5, 5] = 99
        out = shift(img, 1, 0)
        assert out[5, 6] == 99 and out.sum() == 99

    def test_identity(self, rng):
        img = rng.integers(0, 256, size=(GRID, GRID), dtype=np.uint8)
        assert np.array_equal(shift(img, 0, 0), img)

    def test_magnitude_limit(self):
        with pytest.raises(ValueError):
            shift(np.zeros((GRID, GRID), dtype=np.uint8), 3, 0)

    @given(seed=st.integers(0, 2**31), dx=st.integers(-2, 2), dy=st.integers(-2, 2))
    @settings(max_examples=40, deadline=None)
    def test_shift_then_unshift_on_sparse_images(self, seed, dx, dy):
        r = np.random.default_rng(seed)
        img = np.zeros((GRID, GRID), dtype=np.uint8)
        # keep content away from the border so nothing is pushed off-grid
        img[4:-4, 4:-4] = r.integers(0, 256, size=(GRID - 8, GRID - 8))
        assert np.array_equal(shift(shift(img, dx, dy), -dx, -dy), img)

    def test_content_pushed_off_grid_is_lost(self):
        img = np.zeros((GRID, GRID), dtype=np.uint8)
        img[0, 27] = 50
        assert shift(img, 1, 0).sum() == 0


class TestRotate:
    def test_all_zero_stays_zero(self):
        img = np.zeros((GRID, GRID), dtype=np.uint8)
        for deg in (-25, -5, 5, 25, 13.7):
            assert rotate(img, deg).sum() == 0

    def test_zero_degrees_is_identity(self, rng):
        img = rng.integers(0, 256, size=(GRID, GRID), dtype=np.uint8)
        assert np.array_equal(rotate(img, 0.0), img)

    def test_uniform_interior_preserved(self):
        img = np.full((GRID, GRID), 200, dtype=np.uint8)
        out = rotate(img, 25.0)
        assert np.all(out[7:21, 7:21] == 200)

    def test_angle_bounds(self):
        with pytest.raises(ValueError):
            rotate(np.zeros((GRID, GRID), dtype=np.uint8), 46.0)

    def test_batch_matches_singles(self, rng):
        imgs = rng.integers(0, 256, size=(3, GRID, GRID), dtype=np.uint8)
        batch = rotate(imgs, 5.0)
        for k in range(3):
            assert np.array_equal(batch[k], rotate(imgs[k], 5.0))


class TestRescaleCenter:
    def test_all_zero(self):
        img = np.zeros((GRID, GRID), dtype=np.uint8)
        assert rescale_center(img, 22, 20).sum() == 0

    def test_uniform_center_block(self):
        img = np.zeros((GRID, GRID), dtype=np.uint8)
        img[4:24, 4:24] = 100
        out = rescale_center(img, 22, 20)
        # 22 wide x 20 high, centered: cols 3..24, rows 4..23
        assert np.all(out[4:24, 3:25] == 100)
        assert out.sum() == 100 * 22 * 20

    def test_nothing_outside_embedded_block(self, rng):
        img = rng.integers(0, 256, size=(GRID, GRID), dtype=np.uint8)
        for w, h in ((18, 20), (22, 20), (20, 18), (20, 22)):
            out = rescale_center(img, w, h)
            r0, c0 = (GRID - h) // 2, (GRID - w) // 2
            mask = np.ones((GRID, GRID), dtype=bool)
            mask[r0:r0 + h, c0:c0 + w] = False
            assert out[mask].sum() == 0

    def test_unsupported_size(self):
        with pytest.raises(ValueError):
            rescale_center(np.zeros((GRID, GRID), dtype=np.uint8), 24, 20)


class TestBuildExt:
    def test_125_variants_base_first(self, rng):
        img = rng.integers(0, 256, size=(GRID, GRID), dtype=np.uint8)
        ext = build_ext(img)
        assert ext.variants.shape == (125, GRID, GRID)
        assert np.array_equal(ext.variants[0], img)

    def test_all_zero_base(self):
        ext = build_ext(np.zeros((GRID, GRID), dtype=np.uint8))
        assert ext.variants.sum() == 0

    def test_plan_has_identity_first(self):
        plan = ext_variant_plan()
        assert plan[0] == ()
        assert len(plan) == 125

    def test_wrong_variant_count_rejected(self, rng):
        img = rng.integers(0, 256, size=(GRID, GRID), dtype=np.uint8)
        with pytest.raises(ValueError, match="125"):
            ExtendedImage(base=img, variants=np.stack([img] * 7))

    def test_rotate_orders_differ(self, rng):
        img = rng.integers(0, 256, size=(GRID, GRID), dtype=np.uint8)
        a = build_ext(img, rotate_order="rotate_then_shift")
        b = build_ext(img, rotate_order="shift_then_rotate")
        assert np.array_equal(a.variants[0], b.variants[0])
        assert not np.array_equal(a.variants, b.variants)


EXPECTED_VARIANTS = {
    ("mnist", "set0"): 1, ("mnist", "set1"): 9, ("mnist", "set2"): 45,
    ("mnist", "set3"): 45, ("mnist", "set4"): 81,
    ("emnist", "set0"): 1, ("emnist", "set1"): 9, ("emnist", "set2"): 45,
    ("emnist", "set3"): 25, ("emnist", "set4"): 125,
}


class TestLevels:
    @pytest.mark.parametrize("dataset,level", sorted(EXPECTED_VARIANTS))
    def test_cardinality_formula(self, dataset, level):
        spec = AugmentLevel(dataset, level)
        assert variants_per_image(spec) == EXPECTED_VARIANTS[(dataset, level)]
        base = 60000 if dataset == "mnist" else 240000
        assert level_cardinality(base, spec) == base * EXPECTED_VARIANTS[(dataset, level)]

    def test_published_totals(self):
        mnist = [level_cardinality(60000, AugmentLevel("mnist", f"set{k}"))
                 for k in range(5)]
        emnist = [level_cardinality(240000, AugmentLevel("emnist", f"set{k}"))
                  for k in range(5)]
        assert mnist == [60000, 540000, 2700000, 2700000, 4860000]
        assert emnist == [240000, 2160000, 10800000, 6000000, 30000000]

    @pytest.mark.parametrize("dataset,level", sorted(EXPECTED_VARIANTS))
    def test_generated_count_matches_formula(self, rng, dataset, level):
        spec = AugmentLevel(dataset, level)
        base = tiny_set(rng)
        out = build_level(base, spec)
        assert out.counts() == [level_cardinality(n, spec) for n in base.counts()]

    def test_set0_returns_base(self, rng):
        base = tiny_set(rng)
        assert build_level(base, AugmentLevel("mnist", "set0")) is base

    def test_variant_plans_are_unique(self):
        for dataset, level in sorted(EXPECTED_VARIANTS):
            plan = variant_plan(AugmentLevel(dataset, level))
            assert len(plan) == len(set(plan)), (dataset, level)

    def test_set4_contains_each_set1_descriptor_once(self):
        set1 = variant_plan(AugmentLevel("mnist", "set1"))
        set4 = variant_plan(AugmentLevel("mnist", "set4"))
        for v in set1:
            assert set4.count(v) == 1

    def test_determinism(self, rng):
        base = tiny_set(rng)
        spec = AugmentLevel("mnist", "set2")
        a = build_level(base, spec)
        b = build_level(base, spec)
        for d in range(10):
            assert np.array_equal(a.images[d], b.images[d])

    def test_values_stay_in_range(self, rng):
        base = tiny_set(rng)
        out = build_level(base, AugmentLevel("mnist", "set4"))
        for d in range(10):
            assert out.images[d].dtype == np.uint8

    def test_streamed_equals_materialized(self, rng):
        base = tiny_set(rng, per_class=3)
        spec = AugmentLevel("emnist", "set2")
        built = build_level(base, spec)
        streamed = {d: [] for d in range(10)}
        for cls, chunk in iter_level(base, spec, base_chunk=2):
            streamed[cls].append(chunk)
        for d in range(10):
            assert np.array_equal(np.concatenate(streamed[d]), built.images[d])

    def test_base_major_ordering(self, rng):
        base = tiny_set(rng, per_class=2)
        spec = AugmentLevel("mnist", "set1")
        out = build_level(base, spec)
        # first variant family belongs to base image 0, led by the base itself
        assert np.array_equal(out.images[0][0], base.images[0][0])
        assert np.array_equal(out.images[0][9], base.images[0][1])

    def test_manifest(self, rng):
        base = tiny_set(rng)
        m = level_manifest(base, AugmentLevel("mnist", "set3"))
        assert m["total"] == sum(m["counts_per_digit"])
        assert m["variants_per_image"] == 45

    def test_level_dataset_validation(self):
        with pytest.raises(ValueError):
            AugmentLevel("mnist", "set9")
        with pytest.raises(ValueError):
            AugmentLevel("fashion", "set1")

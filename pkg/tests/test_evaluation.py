import json

import numpy as np
import pytest

from conftest import small_labeled_set
from wnn.dataset_io import LabeledSet
from wnn.evaluation import (error_overlap, evaluate, format_table, op_count,
                            report_csv_text, report_json_dict, sweep_window_sizes,
                            write_report_csv, write_report_json)
from wnn.wnn_core import ClassifierConfig


def disjoint_problem(rng, grid=(6, 6), per_class=3, test_per_class=2):
    train = small_labeled_set(rng, per_class=per_class, grid=grid)
    test_imgs = [rng.integers(0, 256, size=(test_per_class, *grid), dtype=np.uint8)
                 for _ in range(10)]
    return train, LabeledSet.from_arrays(test_imgs)


def toy_variants(images, k=3):
    """Grid-agnostic variant builder for toy-scale extension families."""
    images = np.asarray(images)
    out = np.empty((images.shape[0], k, *images.shape[1:]), dtype=np.uint8)
    for j in range(k):
        out[:, j] = np.roll(images, shift=j, axis=2)
    return out


class TestEvaluate:
    def test_zero_errors_when_test_subset_of_train(self, rng):
        train = small_labeled_set(rng, per_class=4)
        test = LabeledSet.from_arrays([a[:2] for a in train.images])
        report = evaluate("wnn", train, test, ClassifierConfig(size=3))
        assert report.total_errors == 0
        assert report.per_digit_errors == [0] * 10
        assert report.misclassified == []
        assert report.error_rate == 0.0

    def test_report_invariants(self, rng):
        train, test = disjoint_problem(rng)
        report = evaluate("wnn", train, test, ClassifierConfig(size=3))
        assert report.total_errors == sum(report.per_digit_errors)
        assert len(report.misclassified) == report.total_errors
        assert report.error_rate == report.total_errors / test.total()
        assert report.per_digit_counts == test.counts()
        assert report.misclassified == sorted(report.misclassified)

    @pytest.mark.parametrize("kind", ["nn", "wnn", "dwnn"])
    def test_kinds_run(self, rng, kind):
        train, test = disjoint_problem(rng, per_class=2, test_per_class=1)
        report = evaluate(kind, train, test, ClassifierConfig(size=3),
                          variants_fn=toy_variants)
        assert 0 <= report.total_errors <= test.total()

    def test_hybrid_needs_dwnn_train(self, rng):
        train, test = disjoint_problem(rng, per_class=2, test_per_class=1)
        with pytest.raises(ValueError, match="dwnn_train"):
            evaluate("hybrid", train, test, ClassifierConfig(size=3),
                     variants_fn=toy_variants)
        report = evaluate("hybrid", train, test, ClassifierConfig(size=3),
                          dwnn_train=train, variants_fn=toy_variants)
        assert 0 <= report.total_errors <= test.total()

    def test_deterministic_across_runs_and_threads(self, rng):
        train, test = disjoint_problem(rng)
        cfg = ClassifierConfig(size=3)
        r1 = evaluate("wnn", train, test, cfg, threads=1)
        r2 = evaluate("wnn", train, test, cfg, threads=2)
        assert r1.per_digit_errors == r2.per_digit_errors
        assert r1.misclassified == r2.misclassified
        a, b = report_json_dict(r1), report_json_dict(r2)
        a.pop("wall_clock_s"), b.pop("wall_clock_s")
        assert a == b

    def test_binarized_flag_binarizes_both_sides(self, rng):
        train, test = disjoint_problem(rng)
        from wnn.dataset_io import binarize
        r_flag = evaluate("wnn", train, test, ClassifierConfig(size=3, binarized=True))
        r_manual = evaluate(
            "wnn",
            LabeledSet.from_arrays([binarize(a, 128) for a in train.images]),
            LabeledSet.from_arrays([binarize(a, 128) for a in test.images]),
            ClassifierConfig(size=3))
        assert r_flag.per_digit_errors == r_manual.per_digit_errors

    def test_unknown_kind_rejected(self, rng):
        train, test = disjoint_problem(rng)
        with pytest.raises(ValueError, match="unknown classifier"):
            evaluate("knn", train, test)


class TestCheckpoint:
    def test_resume_produces_identical_report(self, rng, tmp_path):
        train, test = disjoint_problem(rng, test_per_class=3)
        cfg = ClassifierConfig(size=3)
        ck = tmp_path / "run.ckpt"

        full = evaluate("wnn", train, test, cfg)
        once = evaluate("wnn", train, test, cfg, checkpoint=str(ck))
        assert once.per_digit_errors == full.per_digit_errors

        # truncate the record to simulate an interrupted run, then resume
        lines = ck.read_text().splitlines(keepends=True)
        assert len(lines) == 1 + test.total()
        (tmp_path / "partial.ckpt").write_text("".join(lines[:1 + 7]))
        resumed = evaluate("wnn", train, test, cfg,
                           checkpoint=str(tmp_path / "partial.ckpt"))
        csv_full = report_csv_text([(full.column_label, full)])
        csv_resumed = report_csv_text([(resumed.column_label, resumed)])
        assert csv_resumed == csv_full
        assert (tmp_path / "partial.ckpt").read_text() == ck.read_text()

    def test_mismatched_checkpoint_rejected(self, rng, tmp_path):
        train, test = disjoint_problem(rng)
        ck = tmp_path / "run.ckpt"
        evaluate("wnn", train, test, ClassifierConfig(size=3), checkpoint=str(ck))
        with pytest.raises(ValueError, match="header mismatch"):
            evaluate("wnn", train, test, ClassifierConfig(size=5),
                     checkpoint=str(ck))


class TestSweep:
    def test_covering_size_column_equals_nn_column(self, rng):
        train, test = disjoint_problem(rng, grid=(6, 6))
        columns = sweep_window_sizes(train, test, [11], include_nn=True)
        labels = [label for label, _ in columns]
        assert labels == ["NN", "WNN11"]
        assert columns[0][1].per_digit_errors == columns[1][1].per_digit_errors

    def test_multi_size_matches_individual_runs(self, rng):
        train, test = disjoint_problem(rng)
        columns = sweep_window_sizes(train, test, [3, 5])
        for label, report in columns:
            size = int(label.replace("WNN", ""))
            single = evaluate("wnn", train, test, ClassifierConfig(size=size))
            assert report.per_digit_errors == single.per_digit_errors
            assert report.misclassified == single.misclassified

    def test_empty_sizes_empty_table(self, rng):
        train, test = disjoint_problem(rng)
        assert sweep_window_sizes(train, test, []) == []

    def test_even_size_rejected(self, rng):
        train, test = disjoint_problem(rng)
        with pytest.raises(ValueError, match="odd"):
            sweep_window_sizes(train, test, [4])


class TestErrorOverlap:
    def test_identical_reports(self, rng):
        train, test = disjoint_problem(rng)
        r = evaluate("wnn", train, test, ClassifierConfig(size=3))
        ov = error_overlap(r, r)
        assert ov.fraction == 1.0
        assert ov.common == ov.union == r.total_errors

    def test_disjoint_error_sets(self, rng):
        train, test = disjoint_problem(rng)
        a = evaluate("wnn", train, test, ClassifierConfig(size=3))
        b = evaluate("wnn", train, test, ClassifierConfig(size=3))
        b.misclassified = [(d, i + 100000) for d, i in a.misclassified]
        if a.misclassified:
            assert error_overlap(a, b).fraction == 0.0

    def test_mismatched_test_sets_rejected(self, rng):
        train, test = disjoint_problem(rng)
        other = LabeledSet.from_arrays([a[:1] for a in test.images])
        ra = evaluate("wnn", train, test, ClassifierConfig(size=3))
        rb = evaluate("wnn", train, other, ClassifierConfig(size=3))
        with pytest.raises(ValueError, match="different test sets"):
            error_overlap(ra, rb)


class TestOpCount:
    def test_model_values(self):
        assert op_count("nn", 24000) == 10 * 24000 * (784 * 3 + 1)
        assert op_count("wnn", 24000, 11) == 10 * 24000 * (784 * (3 * 121 + 1) + 1)
        assert op_count("wnn", 1, 1) == 31370

    def test_rounds_to_published_magnitudes(self):
        nn = op_count("nn", 24000)
        wnn = op_count("wnn", 24000, 11)
        assert round(nn / 1e8, 1) == 5.6
        assert round(wnn / 1e10, 1) == 6.8

    def test_ratio_grows_quadratically(self):
        r11 = op_count("wnn", 100, 11) / op_count("nn", 100)
        r23 = op_count("wnn", 100, 23) / op_count("nn", 100)
        assert r23 / r11 == pytest.approx((23 / 11) ** 2, rel=0.02)

    def test_validation(self):
        with pytest.raises(ValueError):
            op_count("nn", 0)
        with pytest.raises(ValueError):
            op_count("wnn", 10, 4)
        with pytest.raises(ValueError):
            op_count("ann", 10)


class TestRendering:
    def test_csv_layout(self, rng):
        train, test = disjoint_problem(rng)
        r = evaluate("wnn", train, test, ClassifierConfig(size=3))
        text = report_csv_text([(r.column_label, r)])
        lines = text.strip().split("\n")
        assert lines[0] == f"digit,{r.column_label}"
        assert len(lines) == 12
        assert lines[-1] == f"Total,{r.total_errors}"

    def test_csv_and_json_files(self, rng, tmp_path):
        train, test = disjoint_problem(rng)
        r = evaluate("wnn", train, test, ClassifierConfig(size=3))
        write_report_csv([(r.column_label, r)], tmp_path / "r.csv")
        write_report_json(r, tmp_path / "r.json")
        data = json.loads((tmp_path / "r.json").read_text())
        assert data["total_errors"] == r.total_errors
        assert (tmp_path / "r.csv").read_text() == report_csv_text(
            [(r.column_label, r)])

    def test_text_table_mentions_every_digit(self, rng):
        train, test = disjoint_problem(rng)
        r = evaluate("nn", train, test)
        table = format_table([(r.column_label, r)])
        assert "Total" in table and table.count("\n") == 11

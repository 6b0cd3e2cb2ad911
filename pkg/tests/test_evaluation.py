import dataclasses

import numpy as np
import pytest

from faciesml import gbt
from faciesml.data_model import Dataset, split_blind
from faciesml.errors import DataError
from faciesml.evaluation import (
    confusion_matrix,
    config_digest,
    evaluate_blind,
    f1_scores,
    leave_one_well_out_cv,
    normalize_confusion,
    paired_cv,
    prediction_track,
    relative_improvement,
    seed_sweep,
)
from faciesml.features import AugmentationConfig
from faciesml.gbt import GBTConfig
from faciesml.synthetic import make_synthetic_dataset

FAST = GBTConfig(n_estimators=6, min_child_weight=1.0)


class TestConfusion:
    def test_tally(self):
        cm = confusion_matrix([1, 1, 2], [1, 2, 2])
        expected = np.zeros((9, 9), dtype=int)
        expected[0, 0] = expected[0, 1] = expected[1, 1] = 1
        np.testing.assert_array_equal(cm.counts, expected)
        assert cm.total == 3

    def test_errors(self):
        with pytest.raises(DataError):
            confusion_matrix([1, 2], [1])
        with pytest.raises(DataError):
            confusion_matrix([], [])
        with pytest.raises(DataError):
            confusion_matrix([1, 12], [1, 1])

    def test_perfect_is_identity_after_normalization(self):
        labels = np.arange(1, 10).repeat(3)
        norm = normalize_confusion(confusion_matrix(labels, labels))
        np.testing.assert_array_equal(norm.values, np.eye(9))
        assert norm.empty_rows == ()

    def test_normalize_row(self):
        cm = confusion_matrix([1, 1, 1, 1], [1, 1, 2, 2], class_order=(1, 2, 3))
        norm = normalize_confusion(cm)
        np.testing.assert_array_equal(norm.values[0], [0.5, 0.5, 0.0])
        np.testing.assert_array_equal(norm.values[1:], 0.0)
        assert norm.empty_rows == (2, 3)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        t, p = rng.integers(1, 10, 300), rng.integers(1, 10, 300)
        norm = normalize_confusion(confusion_matrix(t, p))
        sums = norm.values.sum(axis=1)
        assert np.all(np.abs(sums - 1.0) <= 1e-12)

    def test_csv_rows(self):
        rows = confusion_matrix([1, 2], [1, 2]).to_rows()
        assert rows[0][1:] == ["SS", "CSiS", "FSiS", "SiSh", "MS", "WS", "D", "PS", "BS"]
        assert len(rows) == 10


class TestF1:
    def test_three_sample_case(self):
        s = f1_scores([1, 1, 2], [1, 2, 2])
        assert s.per_class[1] == pytest.approx(2 / 3) and s.per_class[2] == pytest.approx(2 / 3)
        for avg in ("micro", "macro", "weighted"):
            assert s.average(avg) == pytest.approx(2 / 3, abs=1e-12)

    def test_perfect(self):
        y = [1, 3, 3, 9, 5]
        s = f1_scores(y, y)
        assert s.micro == s.macro == s.weighted == 1.0

    def test_single_class(self):
        s = f1_scores([4, 4, 4], [4, 4, 4])
        assert s.weighted == 1.0 and s.macro == 1.0

    def test_absent_classes_flagged_and_excluded_from_macro(self):
        s = f1_scores([1, 1, 2], [1, 1, 3])
        assert 5 in s.absent and 5 in s.absent_in_truth
        assert 3 in s.absent_in_truth and 3 not in s.absent
        assert s.per_class[5] == 0.0
        # macro over classes present in truth: class 1 = 1, class 2 = 0
        assert s.macro == pytest.approx(0.5)

    def test_hand_weighted(self):
        # class 1: P=2/3, R=1 -> 0.8; class 2: P=R=1/2 -> 0.5; class 3: 0
        t = [1, 1, 2, 2, 3]
        p = [1, 1, 1, 2, 2]
        s = f1_scores(t, p)
        assert s.per_class[1] == pytest.approx(0.8)
        assert s.per_class[2] == pytest.approx(0.5)
        assert s.per_class[3] == 0.0
        assert s.weighted == pytest.approx((2 * 0.8 + 2 * 0.5) / 5)
        assert s.macro == pytest.approx((0.8 + 0.5) / 3)
        assert s.micro == pytest.approx(3 / 5)

    def test_micro_equals_accuracy(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(1, 80))
            t, p = rng.integers(1, 10, n), rng.integers(1, 10, n)
            assert f1_scores(t, p).micro == pytest.approx(np.mean(t == p), abs=1e-12)

    def test_permutation_invariance_and_range(self):
        rng = np.random.default_rng(3)
        t, p = rng.integers(1, 10, 120), rng.integers(1, 10, 120)
        perm = rng.permutation(120)
        a, b = f1_scores(t, p), f1_scores(t[perm], p[perm])
        assert (a.micro, a.macro, a.weighted) == pytest.approx((b.micro, b.macro, b.weighted), abs=1e-15)
        assert a.per_class == pytest.approx(b.per_class)
        np.testing.assert_array_equal(confusion_matrix(t, p).counts, confusion_matrix(t[perm], p[perm]).counts)
        assert all(0.0 <= v <= 1.0 for v in [a.micro, a.macro, a.weighted, *a.per_class.values()])

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            f1_scores([1, 2], [1])

    def test_relative_improvement(self):
        assert relative_improvement(0.58, 0.61) == pytest.approx(0.0517241, abs=1e-6)
        assert np.isnan(relative_improvement(0.0, 0.5))


@pytest.fixture(scope="module")
def wells():
    return make_synthetic_dataset(n_wells=4, rows_per_well=(50, 70), seed=21)


class TestBlind:
    def test_report_contents(self, wells):
        train, blind = split_blind(wells, wells.wells[-1])
        rep = evaluate_blind(train, blind, AugmentationConfig.physics(), FAST, validation_fraction=0.1, split_seed=42)
        assert rep.n_samples == len(blind) == rep.confusion.total
        meta = rep.run_metadata
        assert meta["blind_wells"] == [wells.wells[-1]]
        assert meta["feature_config_digest"] == config_digest(AugmentationConfig.physics())
        assert meta["model_config_digest"] == config_digest(FAST)
        assert meta["seed"] == FAST.seed and meta["n_features"] == 57
        assert rep.validation_f1 is not None
        for v in (rep.f1_micro, rep.f1_macro, rep.f1_weighted):
            assert 0.0 <= v <= 1.0
        assert set(rep.to_dict()) >= {"f1_weighted", "f1_micro", "f1_macro", "confusion", "run_metadata"}

    def test_overlap_rejected(self, wells):
        train, _ = split_blind(wells, wells.wells[0])
        copy = train.select_wells([train.wells[0]])
        with pytest.raises(DataError, match="blind"):
            evaluate_blind(train, copy, AugmentationConfig.benchmark(), FAST)

    def test_blind_labels_never_reach_training(self, wells):
        train, blind = split_blind(wells, wells.wells[1])
        corrupted = Dataset(
            tuple(dataclasses.replace(r, facies=(r.facies % 9) + 1) for r in blind.records), blind.source_name
        )
        aug = AugmentationConfig.physics()
        a = evaluate_blind(train, blind, aug, FAST, validation_fraction=0.05, split_seed=42)
        b = evaluate_blind(train, corrupted, aug, FAST, validation_fraction=0.05, split_seed=42)
        assert gbt.dumps_model(a.model) == gbt.dumps_model(b.model)
        np.testing.assert_array_equal(a.predictions, b.predictions)

    def test_perfect_synthetic(self):
        # NM_M alone separates facies 2 from facies 8
        recs = []
        for w in ("A", "B", "C"):
            for i in range(40):
                facies = 2 if (i // 10) % 2 == 0 else 8
                recs.append(dataclasses.replace(
                    make_synthetic_dataset(1, 1, seed=i).records[0],
                    well=w, depth=float(i), facies=facies, nm_m=1 if facies == 2 else 2,
                ))
        ds = Dataset.from_records(recs)
        train, blind = split_blind(ds, "C")
        rep = evaluate_blind(train, blind, AugmentationConfig.raw(), GBTConfig(n_estimators=5, min_child_weight=1))
        assert rep.f1_weighted == 1.0
        norm = normalize_confusion(rep.confusion).values
        np.testing.assert_array_equal(norm[[1, 7]][:, [1, 7]], np.eye(2))

    def test_prediction_track(self, wells):
        train, blind = split_blind(wells, wells.wells[2])
        a = evaluate_blind(train, blind, AugmentationConfig.benchmark(), FAST)
        b = evaluate_blind(train, blind, AugmentationConfig.physics(), FAST)
        rows = prediction_track(a, {"benchmark": a, "physics": b})
        assert rows[0] == ["well", "depth", "true", "benchmark", "physics"]
        assert len(rows) == len(blind) + 1
        assert prediction_track(a)[0] == ["well", "depth", "true", "predicted"]


class TestCV:
    def test_fold_structure(self, wells):
        rep = leave_one_well_out_cv(wells, AugmentationConfig.raw(), FAST)
        held = [w for w, _ in rep.folds]
        assert held == list(wells.wells)
        for w, fold in rep.folds:
            assert fold.run_metadata["blind_wells"] == [w]
            assert fold.n_samples == len(wells.select_wells([w]))
        assert rep.mean == pytest.approx(np.mean(rep.scores))
        assert rep.std == pytest.approx(np.std(rep.scores))

    def test_two_well_toy(self):
        ds = make_synthetic_dataset(n_wells=2, rows_per_well=40, seed=4)
        rep = leave_one_well_out_cv(ds, AugmentationConfig.raw(), FAST)
        assert len(rep.folds) == 2 and {w for w, _ in rep.folds} == set(ds.wells)

    def test_needs_two_wells(self):
        ds = make_synthetic_dataset(n_wells=1, rows_per_well=30, seed=4)
        with pytest.raises(DataError):
            leave_one_well_out_cv(ds, AugmentationConfig.raw(), FAST)

    def test_subset_and_unknown(self, wells):
        rep = leave_one_well_out_cv(wells, AugmentationConfig.raw(), FAST, wells=wells.wells[:2])
        assert len(rep.folds) == 2
        with pytest.raises(DataError):
            leave_one_well_out_cv(wells, AugmentationConfig.raw(), FAST, wells=["NOPE"])

    def test_paired_deltas(self, wells):
        rep = paired_cv(wells, AugmentationConfig.benchmark(), AugmentationConfig.physics(), FAST, wells=wells.wells[:2])
        expected = [(b - a) / a for a, b in zip(rep.baseline.scores, rep.candidate.scores)]
        assert rep.fold_deltas == pytest.approx(expected)
        assert rep.mean_relative_delta == pytest.approx(np.mean(expected))
        assert "mean_relative_delta" in rep.to_dict()


class TestSweep:
    def test_identical_configs_give_zero(self, wells):
        train, blind = split_blind(wells, wells.wells[0])
        rep = seed_sweep(train, blind, AugmentationConfig.benchmark(), AugmentationConfig.benchmark(), FAST, [1, 2, 3])
        assert rep.deltas == [0.0, 0.0, 0.0]
        assert rep.median_relative_delta == 0.0

    def test_seed_changes_model(self, wells):
        train, blind = split_blind(wells, wells.wells[0])
        rep = seed_sweep(train, blind, AugmentationConfig.raw(), AugmentationConfig.physics(), FAST, [1, 2])
        assert [r.seed for r in rep.results] == [1, 2]
        assert rep.to_dict()["median_relative_delta"] == pytest.approx(np.median(rep.deltas))

    @pytest.mark.parametrize("seeds", [[], [7]])
    def test_needs_two_seeds(self, wells, seeds):
        train, blind = split_blind(wells, wells.wells[0])
        with pytest.raises(ValueError):
            seed_sweep(train, blind, AugmentationConfig.raw(), AugmentationConfig.raw(), FAST, seeds)

    def test_band(self, wells):
        train, blind = split_blind(wells, wells.wells[0])
        rep = seed_sweep(train, blind, AugmentationConfig.raw(), AugmentationConfig.raw(), FAST, [1, 2])
        assert rep.in_band(-0.01, 0.01) and not rep.in_band(0.02, 0.07)

import math

import numpy as np
import pytest

from oracles import auc_pair_counting, average_precision_enum, bce_dice_loss_direct
from prlkit.errors import InputError
from prlkit.metrics import (
    ConfusionCounts,
    cohens_kappa,
    confusion_metrics,
    detection_report,
    dice_bce_loss,
    dice_score,
    pr_curve_auc,
    roc_curve_auc,
)
from prlkit.volume import Spacing, Volume

SP = Spacing(1.0, 1.0, 1.0)


class TestDice:
    def test_identical_masks(self):
        m = np.zeros((4, 4, 4), bool)
        m[1:3, 1:3, 1:3] = True
        assert dice_score(m, m) == 1.0

    def test_disjoint_masks(self):
        a = np.zeros((4, 4, 4), bool)
        b = np.zeros((4, 4, 4), bool)
        a[0, 0, 0] = True
        b[3, 3, 3] = True
        assert dice_score(a, b) == 0.0

    def test_direct_formula(self):
        a = np.zeros((10, 1, 1), bool)
        b = np.zeros((10, 1, 1), bool)
        a[0:4] = True  # |A| = 4
        b[1:7] = True  # |B| = 6, overlap = 3
        assert dice_score(a, b) == pytest.approx(0.6)

    def test_symmetry_and_both_empty(self):
        rng = np.random.default_rng(0)
        a = rng.random((6, 6, 3)) < 0.4
        b = rng.random((6, 6, 3)) < 0.4
        assert dice_score(a, b) == dice_score(b, a)
        empty = np.zeros((3, 3, 3), bool)
        assert dice_score(empty, empty) == 1.0

    def test_accepts_volumes(self):
        a = Volume.binary(np.ones((2, 2, 2), np.uint8), SP)
        assert dice_score(a, a) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            dice_score(np.zeros((2, 2, 2), bool), np.zeros((3, 3, 3), bool))


class TestConfusion:
    def test_direct_formula(self):
        rates = confusion_metrics(ConfusionCounts(tp=9, fp=1, tn=89, fn=1))
        assert rates.sensitivity == pytest.approx(0.9)
        assert rates.specificity == pytest.approx(89 / 90)  # 0.99 at two decimals
        assert rates.ppv == pytest.approx(0.9)
        assert rates.accuracy == pytest.approx(0.98)

    def test_undefined_ppv_flagged(self):
        rates = confusion_metrics(ConfusionCounts(tp=0, fp=0, tn=5, fn=2))
        assert rates.ppv is None
        assert rates.specificity == 1.0

    def test_counts_addition(self):
        total = ConfusionCounts(1, 2, 3, 4) + ConfusionCounts(5, 6, 7, 8)
        assert (total.tp, total.fp, total.tn, total.fn) == (6, 8, 10, 12)

    def test_rates_in_unit_interval(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            counts = ConfusionCounts(*(int(v) for v in rng.integers(0, 40, 4)))
            if counts.total == 0:
                continue
            for rate in confusion_metrics(counts):
                assert rate is None or 0.0 <= rate <= 1.0


class TestRoc:
    def test_perfect_separation(self):
        scores = [(1.0, True)] * 5 + [(0.0, False)] * 5
        _, auc = roc_curve_auc(scores)
        assert auc == 1.0

    def test_all_ties_half(self):
        scores = [(0.5, True)] * 4 + [(0.5, False)] * 6
        _, auc = roc_curve_auc(scores)
        assert auc == pytest.approx(0.5)

    def test_matches_pair_counting_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = int(rng.integers(5, 80))
            values = np.round(rng.random(n), 2)  # force ties
            labels = rng.random(n) < 0.4
            if labels.all() or not labels.any():
                continue
            _, auc = roc_curve_auc(list(zip(values.tolist(), labels.tolist())))
            expected = auc_pair_counting(values.tolist(), labels.tolist())
            assert abs(auc - expected) <= 1e-12

    def test_curve_sorted_and_anchored(self):
        rng = np.random.default_rng(8)
        values = rng.random(30)
        labels = rng.random(30) < 0.5
        labels[0], labels[1] = True, False
        points, _ = roc_curve_auc(list(zip(values.tolist(), labels.tolist())))
        xs = [p.x for p in points]
        assert xs == sorted(xs)
        assert (points[0].x, points[0].y) == (0.0, 0.0)
        assert (points[-1].x, points[-1].y) == (1.0, 1.0)

    def test_single_class_rejected(self):
        with pytest.raises(InputError):
            roc_curve_auc([(0.4, True), (0.2, True)])


class TestPr:
    def test_perfect_separation(self):
        scores = [(1.0, True)] * 3 + [(0.0, False)] * 7
        _, auc = pr_curve_auc(scores)
        assert auc == 1.0

    def test_constant_scores_equal_prevalence(self):
        scores = [(0.7, True)] * 3 + [(0.7, False)] * 9
        _, auc = pr_curve_auc(scores)
        assert auc == pytest.approx(3 / 12)

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            n = int(rng.integers(4, 70))
            values = np.round(rng.random(n), 2)
            labels = rng.random(n) < 0.3
            if not labels.any():
                continue
            _, auc = pr_curve_auc(list(zip(values.tolist(), labels.tolist())))
            expected = average_precision_enum(values.tolist(), labels.tolist())
            assert abs(auc - expected) <= 1e-12

    def test_points_sorted_by_recall(self):
        rng = np.random.default_rng(10)
        values = rng.random(40)
        labels = rng.random(40) < 0.4
        labels[0] = True
        points, _ = pr_curve_auc(list(zip(values.tolist(), labels.tolist())))
        recalls = [p.x for p in points]
        assert recalls == sorted(recalls)

    def test_no_positives_rejected(self):
        with pytest.raises(InputError):
            pr_curve_auc([(0.4, False)])


class TestKappa:
    def test_perfect_agreement(self):
        assert cohens_kappa([[10, 0], [0, 30]]) == pytest.approx(1.0)

    def test_independent_readers_zero(self):
        # marginal-product table: rows 40/60, cols 20/80 of n=100
        table = [[8, 32], [12, 48]]
        assert cohens_kappa(table) == pytest.approx(0.0, abs=1e-12)

    def test_reader_agreement_from_reported_cohort(self):
        # 260 both-yes, 7543 both-no, 177 discordant split 89/88 of 7980
        table = [[260, 89], [88, 7543]]
        kappa = cohens_kappa(table)
        assert kappa == pytest.approx(0.734, abs=5e-4)
        assert abs(kappa - 0.73) <= 0.01

    def test_degenerate_table(self):
        assert cohens_kappa([[5, 0], [0, 0]]) == 1.0

    def test_range(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            table = rng.integers(0, 50, (2, 2))
            if table.sum() == 0:
                continue
            assert -1.0 <= cohens_kappa(table) <= 1.0


class TestDiceBceLoss:
    def test_perfect_prediction_small(self):
        rng = np.random.default_rng(12)
        truth = (rng.random((10, 10, 10)) < 0.1).astype(float)
        loss = dice_bce_loss(truth, truth.astype(bool), pos_weight=50.0, mix=0.5)
        assert loss < 1e-5

    def test_uniform_half_single_positive(self):
        truth = np.zeros((10, 10, 1), bool)
        truth[0, 0, 0] = True
        prob = np.full((10, 10, 1), 0.5)
        loss = dice_bce_loss(prob, truth, pos_weight=50.0, mix=0.0)
        assert loss == pytest.approx(math.log(2) * (50 * 1 + 99) / 100, rel=1e-12)

    def test_smoothing_convention_empty(self):
        prob = np.zeros((5, 5, 2))
        truth = np.zeros((5, 5, 2), bool)
        assert dice_bce_loss(prob, truth, pos_weight=50.0, mix=1.0) == 0.0

    def test_matches_direct_summation_oracle(self):
        rng = np.random.default_rng(13)
        for _ in range(30):
            shape = (int(rng.integers(3, 9)), int(rng.integers(3, 9)), int(rng.integers(2, 6)))
            prob = rng.random(shape)
            truth = rng.random(shape) < 0.3
            w = float(rng.uniform(1, 80))
            mix = float(rng.uniform(0, 1))
            mine = dice_bce_loss(prob, truth, pos_weight=w, mix=mix)
            ref = bce_dice_loss_direct(prob, truth, w, mix)
            assert mine == pytest.approx(ref, abs=1e-10)

    def test_moving_toward_truth_decreases_loss(self):
        rng = np.random.default_rng(14)
        for _ in range(20):
            truth = rng.random((6, 6, 4)) < 0.25
            prob = rng.uniform(0.05, 0.95, size=truth.shape)
            closer = prob + 0.05 * ((truth.astype(float)) - prob)
            before = dice_bce_loss(prob, truth, pos_weight=50.0, mix=0.5)
            after = dice_bce_loss(closer, truth, pos_weight=50.0, mix=0.5)
            assert after < before
            assert before >= 0.0

    def test_accepts_volumes(self):
        prob = Volume.probability(np.full((4, 4, 2), 0.5), SP)
        truth = Volume.binary(np.zeros((4, 4, 2), np.uint8), SP)
        assert dice_bce_loss(prob, truth) > 0

    def test_validation(self):
        with pytest.raises(InputError):
            dice_bce_loss(np.zeros((2, 2, 2)), np.zeros((2, 2, 2), bool), pos_weight=0.0)
        with pytest.raises(InputError):
            dice_bce_loss(np.zeros((2, 2, 2)), np.zeros((2, 2, 2), bool), mix=1.5)


class TestDetectionReport:
    def test_report_consistency(self):
        records = [
            (0.9, True, True),
            (0.8, True, False),
            (0.3, False, True),
            (0.2, False, False),
            (0.1, False, False),
        ]
        report, roc_points, pr_points = detection_report(records)
        assert report.counts.tp == 1 and report.counts.fp == 1
        assert report.counts.fn == 1 and report.counts.tn == 2
        assert report.sensitivity == pytest.approx(0.5)
        assert roc_points and pr_points
        assert report.roc_auc is not None and report.pr_auc is not None
        assert -1.0 <= report.kappa <= 1.0

    def test_single_class_cohort_flagged(self):
        records = [(0.9, True, True), (0.2, False, True)]
        report, roc_points, _ = detection_report(records)
        assert report.roc_auc is None
        assert any("ROC undefined" in w for w in report.warnings)
        assert roc_points == []

    def test_dice_statistics(self):
        records = [(0.9, True, True), (0.1, False, False)]
        report, _, _ = detection_report(records, dice_values=[0.5, 0.7])
        assert report.dice_mean == pytest.approx(0.6)
        assert report.dice_std == pytest.approx(0.1)

import json

import numpy as np
import pytest

from marc.core import CalibrationParams, LinearClassifierParams, compute_logits
from marc.data import FeatureDataset
from marc.errors import InvalidInputError, UndefinedCorrelationError
from marc.metrics import evaluate, group_of, margin_logit_profile, spearman


def make_eval(predictions, labels, counts_train, k=None):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    k = k or len(counts_train)
    n = len(labels)
    rng = np.random.default_rng(0)
    margins = rng.normal(size=(n, k))
    logits = margins * 2.0
    return evaluate(predictions, labels, counts_train, margins, logits)


class TestSpearman:
    def test_identical_vectors(self):
        assert spearman([1.0, 5.0, 3.0], [1.0, 5.0, 3.0]) == pytest.approx(1.0)

    def test_reversed_ranks(self):
        assert spearman([1, 2, 3], [9, 5, 1]) == pytest.approx(-1.0)

    def test_hand_value(self):
        assert spearman([1, 2, 3], [10, 30, 20]) == pytest.approx(0.5)

    def test_ties_use_average_ranks(self):
        # scipy cross-check with duplicated values
        from scipy.stats import spearmanr

        x = np.array([1.0, 2.0, 2.0, 4.0, 5.0])
        y = np.array([3.0, 3.0, 1.0, 8.0, 7.0])
        assert spearman(x, y) == pytest.approx(spearmanr(x, y).statistic)

    def test_constant_vector_rejected(self):
        with pytest.raises(UndefinedCorrelationError):
            spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            spearman([1.0], [1.0, 2.0])


class TestGroups:
    def test_thresholds(self):
        assert group_of(150) == "many"
        assert group_of(101) == "many"
        assert group_of(100) == "medium"
        assert group_of(20) == "medium"
        assert group_of(19) == "few"
        assert group_of(1) == "few"

    def test_group_assignment_partition(self):
        counts = [150, 60, 10]
        report = make_eval([0, 1, 2], [0, 1, 2], counts)
        assert report.group_acc == {"many": 1.0, "medium": 1.0, "few": 1.0}

    def test_empty_group_absent(self):
        counts = [150, 120]  # no medium or few classes
        report = make_eval([0, 1], [0, 1], counts)
        assert report.group_acc["medium"] is None
        assert report.group_acc["few"] is None


class TestEvaluate:
    def test_perfect_predictions(self):
        labels = np.repeat(np.arange(3), 4)
        report = make_eval(labels, labels, [200, 50, 5])
        assert report.overall_acc == 1.0
        assert report.balanced_acc == 1.0
        assert report.macro_f1 == 1.0
        np.testing.assert_array_equal(report.confusion, np.diag([4, 4, 4]))

    def test_all_predicted_class_zero(self):
        labels = np.array([0] * 5 + [1] * 5)
        report = make_eval(np.zeros(10, dtype=int), labels, [100, 100])
        assert report.overall_acc == 0.5
        assert report.balanced_acc == 0.5
        np.testing.assert_array_equal(report.per_class_acc, [1.0, 0.0])
        assert report.macro_f1 == pytest.approx(1.0 / 3.0)

    def test_confusion_row_sums(self):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 4, size=100)
        preds = rng.integers(0, 4, size=100)
        report = make_eval(preds, labels, [200, 150, 50, 10])
        np.testing.assert_array_equal(
            report.confusion.sum(axis=1), np.bincount(labels, minlength=4)
        )
        assert report.confusion.sum() == 100

    def test_balanced_acc_is_mean_of_per_class(self):
        rng = np.random.default_rng(2)
        labels = np.repeat(np.arange(5), 10)
        preds = rng.integers(0, 5, size=50)
        report = make_eval(preds, labels, [500, 200, 80, 30, 5])
        assert report.balanced_acc == pytest.approx(np.mean(report.per_class_acc))

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            make_eval([0, 1], [0, 1, 2], [10, 10, 10])

    def test_json_roundtrip_canonical(self):
        labels = np.repeat(np.arange(3), 4)
        report = make_eval(labels, labels, [200, 50, 5])
        payload = json.loads(report.to_json())
        assert payload["overall_acc"] == 1.0
        assert list(payload) == sorted(payload)

    def test_csv_has_class_rows_and_summary(self):
        labels = np.repeat(np.arange(3), 4)
        report = make_eval(labels, labels, [200, 50, 5])
        lines = report.to_csv().strip().splitlines()
        assert len(lines) == 1 + 3 + 1  # header + classes + summary
        assert lines[-1].startswith("summary")


class TestMarginLogitProfile:
    @staticmethod
    def small_dataset():
        rng = np.random.default_rng(3)
        features = rng.normal(size=(30, 4))
        labels = np.repeat(np.arange(3), 10)
        counts = np.bincount(labels)
        return FeatureDataset(features, labels, counts)

    def test_identity_calibration_matches_before(self):
        rng = np.random.default_rng(4)
        clf = LinearClassifierParams(rng.normal(size=(3, 4)), rng.normal(size=3))
        ds = self.small_dataset()
        profile = margin_logit_profile(clf, CalibrationParams.identity(3), ds)
        np.testing.assert_allclose(profile["margin_after"], profile["margin_before"])
        np.testing.assert_allclose(profile["logit_after"], profile["logit_before"])

    def test_no_calibration_omits_after(self):
        rng = np.random.default_rng(5)
        clf = LinearClassifierParams(rng.normal(size=(3, 4)), rng.normal(size=3))
        profile = margin_logit_profile(clf, None, self.small_dataset())
        assert "margin_after" not in profile

    def test_single_sample_class(self):
        rng = np.random.default_rng(6)
        clf = LinearClassifierParams(rng.normal(size=(2, 4)), rng.normal(size=2))
        features = rng.normal(size=(3, 4))
        ds = FeatureDataset(features, np.array([0, 0, 1]), np.array([2, 1]))
        profile = margin_logit_profile(clf, None, ds)
        expected = compute_logits(clf, features[2])[1]
        assert profile["logit_before"][1] == pytest.approx(expected)

    def test_mean_logit_over_norm_is_mean_margin(self):
        rng = np.random.default_rng(7)
        clf = LinearClassifierParams(rng.normal(size=(3, 4)), rng.normal(size=3))
        ds = self.small_dataset()
        profile = margin_logit_profile(clf, None, ds)
        norms = np.linalg.norm(clf.weights, axis=1)
        np.testing.assert_allclose(
            profile["logit_before"] / norms, profile["margin_before"], atol=1e-9
        )

"""Tests for calibration, disagreement, and corruption-accuracy metrics."""
from __future__ import annotations

import json

import numpy as np
import pytest

from minima_geom.data import PredictionRecord, records_from_arrays
from minima_geom.safety import (
    DEFAULT_BINS,
    EvaluationReport,
    accuracy,
    corruption_accuracy,
    evaluation_report,
    expected_calibration_error,
    prediction_disagreement,
)


def binary_records(labels, top_confidences):
    """Records predicting class 0 with the given top-1 confidence."""
    conf = np.array([[c, 1.0 - c] for c in top_confidences])
    return records_from_arrays(labels, conf)


class TestAccuracy:
    def test_all_correct(self):
        recs = binary_records([0, 0, 0], [0.9, 0.8, 0.7])
        assert accuracy(recs) == 1.0

    def test_half_correct(self):
        recs = binary_records([0, 1, 0, 1], [0.9, 0.9, 0.9, 0.9])
        assert accuracy(recs) == 0.5

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="empty"):
            accuracy([])


class TestExpectedCalibrationError:
    """Equal-width top-1 confidence bins, L1-weighted."""

    def test_confident_and_correct_is_zero(self):
        """All records confidence 1.0 and correct -> 0."""
        recs = binary_records([0, 0, 0, 0], [1.0, 1.0, 1.0, 1.0])
        assert expected_calibration_error(recs) == 0.0

    def test_single_bin_hand_case(self):
        """Two records at confidence 0.8, one correct -> |0.5 - 0.8| = 0.3."""
        recs = binary_records([0, 1], [0.8, 0.8])
        assert expected_calibration_error(recs) == pytest.approx(0.3, abs=1e-15)

    def test_one_bin_equals_accuracy_confidence_gap(self):
        """ECE(n_bins=1) = |overall accuracy - mean top-1 confidence| exactly."""
        rng = np.random.default_rng(0)
        n = 257
        confs = rng.uniform(0.5, 1.0, size=n)
        labels = rng.integers(0, 2, size=n)
        recs = binary_records(labels, confs)
        expected = abs(accuracy(recs) - float(np.mean(confs)))
        assert expected_calibration_error(recs, n_bins=1) == expected

    def test_two_bin_hand_case(self):
        # bin [0, 0.5): two records at 0.4, both wrong -> |0 - 0.4| = 0.4
        # bin [0.5, 1]: two records at 0.9, both right -> |1 - 0.9| = 0.1
        # ECE = 0.5 * 0.4 + 0.5 * 0.1 = 0.25
        recs = binary_records([1, 1, 0, 0], [0.4, 0.4, 0.9, 0.9])
        assert expected_calibration_error(recs, n_bins=2) == pytest.approx(
            0.25, abs=1e-15
        )

    def test_confidence_one_lands_in_last_bin(self):
        """The last bin is closed: confidence exactly 1.0 is included, not dropped."""
        recs = binary_records([0, 1], [1.0, 1.0])
        # single occupied bin: acc 0.5, conf 1.0
        assert expected_calibration_error(recs, n_bins=15) == pytest.approx(
            0.5, abs=1e-15
        )

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        confs = rng.uniform(0.34, 1.0, size=100)
        labels = rng.integers(0, 2, size=100)
        recs = binary_records(labels, confs)
        shuffled = [recs[i] for i in rng.permutation(100)]
        assert expected_calibration_error(recs) == expected_calibration_error(shuffled)

    def test_calibrated_population_small_ece(self):
        """Correctness drawn Bernoulli(confidence) over 1e5 records is calibrated."""
        rng = np.random.default_rng(2)
        n = 100_000
        confs = rng.uniform(0.5, 1.0, size=n)
        correct = rng.random(n) < confs
        labels = np.where(correct, 0, 1)
        recs = binary_records(labels, confs)
        assert expected_calibration_error(recs, n_bins=15) < 0.01

    def test_rejects_empty_and_bad_bins(self):
        with pytest.raises(ValueError, match="empty"):
            expected_calibration_error([])
        with pytest.raises(ValueError, match="n_bins"):
            expected_calibration_error(binary_records([0], [0.9]), n_bins=0)

    def test_default_bin_count(self):
        assert DEFAULT_BINS == 15


class TestPredictionDisagreement:
    """Fraction of aligned indices whose top-1 predictions differ."""

    def test_identical_lists_zero(self):
        recs = binary_records([0, 1, 0], [0.9, 0.8, 0.7])
        assert prediction_disagreement(recs, recs) == 0.0

    def test_complementary_binary_predictions_one(self):
        a = binary_records([0, 0], [0.9, 0.8])       # predicts class 0
        b = binary_records([0, 0], [0.1, 0.2])       # predicts class 1
        assert prediction_disagreement(a, b) == 1.0

    def test_half_differing_out_of_ten(self):
        a = binary_records([0] * 10, [0.9] * 10)
        b_conf = [0.9] * 5 + [0.1] * 5
        b = binary_records([0] * 10, b_conf)
        assert prediction_disagreement(a, b) == 0.5

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        a = binary_records(rng.integers(0, 2, 20), rng.uniform(0, 1, 20))
        b = binary_records(rng.integers(0, 2, 20), rng.uniform(0, 1, 20))
        assert prediction_disagreement(a, b) == prediction_disagreement(b, a)

    def test_triangle_bound(self):
        """d(a, c) <= d(a, b) + d(b, c): differing indices form a union bound."""
        rng = np.random.default_rng(4)
        lists = [
            binary_records(rng.integers(0, 2, 30), rng.uniform(0, 1, 30))
            for _ in range(3)
        ]
        a, b, c = lists
        assert prediction_disagreement(a, c) <= (
            prediction_disagreement(a, b) + prediction_disagreement(b, c) + 1e-15
        )

    def test_rejects_length_mismatch(self):
        a = binary_records([0], [0.9])
        b = binary_records([0, 1], [0.9, 0.8])
        with pytest.raises(ValueError, match="length"):
            prediction_disagreement(a, b)

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="empty"):
            prediction_disagreement([], [])


class TestCorruptionAccuracy:
    """Unweighted mean accuracy over (corruption, severity) sets."""

    def test_all_sets_perfect(self):
        clean = binary_records([0, 0], [0.9, 0.8])
        corrupted = {
            ("noise", 1): binary_records([0, 0], [0.7, 0.6]),
            ("blur", 2): binary_records([0], [0.9]),
        }
        assert corruption_accuracy(clean, corrupted) == 1.0

    def test_two_sets_mean(self):
        """Sets at accuracy 0.4 and 0.6 average to 0.5."""
        clean = binary_records([0], [1.0])
        corrupted = {
            ("noise", 1): binary_records([0, 0, 1, 1, 1], [0.9] * 5),  # 2/5
            ("noise", 2): binary_records([0, 0, 0, 1, 1], [0.9] * 5),  # 3/5
        }
        assert corruption_accuracy(clean, corrupted) == pytest.approx(0.5, abs=1e-15)

    def test_fifteen_set_hand_average(self):
        """3 corruptions x 5 severities: the mean of the 15 per-set accuracies."""
        rng = np.random.default_rng(5)
        clean = binary_records([0, 0], [0.9, 0.9])
        corrupted = {}
        per_set = []
        for c in ("noise", "blur", "fog"):
            for s in range(1, 6):
                n_correct = int(rng.integers(0, 11))
                labels = [0] * n_correct + [1] * (10 - n_correct)
                corrupted[(c, s)] = binary_records(labels, [0.9] * 10)
                per_set.append(n_correct / 10)
        expected = float(np.mean(per_set))
        assert corruption_accuracy(clean, corrupted) == pytest.approx(
            expected, abs=1e-15
        )

    def test_unweighted_by_set_size(self):
        """A tiny all-wrong set counts as much as a huge all-right set."""
        clean = binary_records([0], [1.0])
        corrupted = {
            ("noise", 1): binary_records([1], [0.9]),            # acc 0
            ("noise", 2): binary_records([0] * 100, [0.9] * 100),  # acc 1
        }
        assert corruption_accuracy(clean, corrupted) == 0.5

    def test_rejects_empty_map(self):
        with pytest.raises(ValueError, match="corrupted"):
            corruption_accuracy(binary_records([0], [1.0]), {})

    def test_rejects_empty_clean(self):
        with pytest.raises(ValueError, match="empty"):
            corruption_accuracy([], {("noise", 1): binary_records([0], [1.0])})


class TestEvaluationReport:
    """The bundled JSON report."""

    def test_basic_report(self):
        recs = binary_records([0, 1, 0, 0], [0.9, 0.8, 0.7, 0.6])
        rep = evaluation_report(recs, n_bins=10)
        assert rep.accuracy == 0.75
        assert rep.n_bins == 10
        assert rep.ece == expected_calibration_error(recs, n_bins=10)
        assert rep.disagreement is None
        assert rep.corruption_accuracy is None
        assert rep.record_counts == {"records": 4}

    def test_report_with_all_sections(self):
        recs = binary_records([0, 0], [0.9, 0.8])
        other = binary_records([0, 0], [0.1, 0.8])
        corrupted = {("noise", 1): binary_records([0], [0.9])}
        rep = evaluation_report(recs, n_bins=5, records_b=other, corrupted=corrupted)
        assert rep.disagreement == 0.5
        assert rep.corruption_accuracy == 1.0
        assert rep.record_counts["records_b"] == 2
        assert rep.record_counts["corrupted/noise/1"] == 1

    def test_rates_in_unit_interval(self):
        rng = np.random.default_rng(6)
        recs = binary_records(rng.integers(0, 2, 50), rng.uniform(0, 1, 50))
        rep = evaluation_report(recs)
        assert 0.0 <= rep.accuracy <= 1.0
        assert 0.0 <= rep.ece <= 1.0

    def test_json_roundtrip(self):
        recs = binary_records([0, 1], [0.9, 0.8])
        rep = evaluation_report(recs)
        payload = json.loads(rep.to_json())
        assert payload["accuracy"] == rep.accuracy
        assert payload["ece"] == rep.ece
        assert payload["n_bins"] == DEFAULT_BINS
        assert isinstance(rep, EvaluationReport)

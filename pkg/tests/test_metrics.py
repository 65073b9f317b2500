"""Tests for evaluation metrics and reports."""

import math

import numpy as np
import pandas as pd
import pytest

from src.softpose.losses import PoseSample
from src.softpose.metrics import (EvalRecord, angular_error_histogram, ensemble_predictions, error_by_distance,
                                  esa_score, evaluate_dataset, evaluate_pair, records_frame, report, write_table)
from src.softpose.rotcore import IDENTITY, axis_angle, sample_uniform


def make_record(sample_id, loc_err, ang_deg, gt_range):
    return EvalRecord(sample_id, loc_err, loc_err / gt_range, math.radians(ang_deg), gt_range)


class TestEvaluatePair:
    """Test per-sample errors."""

    def test_identity(self):
        pose = PoseSample(sample_uniform(np.random.default_rng(1)), [1.0, 2.0, 15.0])
        record = evaluate_pair(pose, pose, "a")
        assert record.loc_err_m == 0.0
        assert record.ang_err_rad == pytest.approx(0.0, abs=1e-7)

    def test_fixture_score(self):
        gt = PoseSample(IDENTITY, [0.0, 0.0, 10.0])
        pred = PoseSample(axis_angle([0.0, 1.0, 0.0], math.radians(10.0)), [0.0, 0.0, 10.5])
        record = evaluate_pair(pred, gt, "fixture")
        assert record.rel_loc_err == pytest.approx(0.05)
        assert esa_score([record]) == pytest.approx(0.22453, abs=1e-5)
        assert esa_score([record]) == pytest.approx(0.05 + math.radians(10.0), abs=1e-9)

    def test_zero_range(self):
        with pytest.raises(ValueError, match="undefined relative error"):
            evaluate_pair(PoseSample(IDENTITY, [1.0, 0.0, 0.0]), PoseSample(IDENTITY, [0.0, 0.0, 0.0]))

    def test_negative_record(self):
        with pytest.raises(ValueError):
            EvalRecord("x", -1.0, 0.0, 0.0, 10.0)


class TestESAScore:
    """Test the ESA score."""

    def test_exact_zero(self):
        assert esa_score([make_record("a", 0.0, 0.0, 10.0)]) == 0.0

    def test_permutation_invariant(self):
        rng = np.random.default_rng(3)
        records = [make_record(str(i), rng.uniform(0, 2), rng.uniform(0, 90), rng.uniform(10, 40)) for i in range(50)]
        shuffled = [records[i] for i in rng.permutation(50)]
        assert esa_score(records) == esa_score(shuffled)

    def test_empty(self):
        with pytest.raises(ValueError):
            esa_score([])


class TestErrorByDistance:
    """Test distance-binned reports."""

    def setup_method(self):
        self.records = [
            make_record("a", 0.5, 2.0, 12.0),
            make_record("b", 1.5, 4.0, 14.0),
            make_record("c", 2.0, 6.0, 27.0),
            make_record("d", 9.0, 8.0, 55.0),
        ]

    def test_bins(self):
        result = error_by_distance(self.records, [10.0, 20.0, 30.0])
        assert [entry["count"] for entry in result] == [2, 1, 1]
        assert result[0]["range_m"] == [10.0, 20.0]
        assert result[0]["mean_loc_err_m"] == pytest.approx(1.0)
        assert result[0]["mean_ang_err_deg"] == pytest.approx(3.0)
        assert result[-1]["range_m"] == "overflow"
        assert result[-1]["mean_loc_err_m"] == pytest.approx(9.0)

    def test_empty_bin(self):
        result = error_by_distance(self.records, [10.0, 15.0, 20.0, 30.0])
        assert result[1]["count"] == 0
        assert result[1]["mean_loc_err_m"] is None

    def test_single_bin_matches_global_mean(self):
        records = self.records[:3]
        result = error_by_distance(records, [0.0, 100.0])
        assert result[0]["count"] == 3
        assert result[0]["mean_loc_err_m"] == pytest.approx(np.mean([r.loc_err_m for r in records]))

    def test_invalid_edges(self):
        with pytest.raises(ValueError):
            error_by_distance(self.records, [20.0, 10.0])


class TestReports:
    """Test dataset evaluation, tables and ensembling."""

    def setup_method(self):
        rng = np.random.default_rng(5)
        self.gt = {f"{i:03d}": PoseSample(sample_uniform(rng), rng.uniform(-1, 1, 3) + [0, 0, 20]) for i in range(10)}

    def test_identical_predictions(self):
        records = evaluate_dataset(self.gt, self.gt)
        result = report(records)
        assert result["count"] == 10
        assert result["esa_score"] == pytest.approx(0.0, abs=1e-6)
        assert [r.sample_id for r in records] == sorted(self.gt)

    def test_missing_ids(self):
        predictions = dict(list(self.gt.items())[:-1])
        with pytest.raises(ValueError, match="do not match"):
            evaluate_dataset(predictions, self.gt)

    def test_write_csv_table(self, tmp_path):
        records = evaluate_dataset(self.gt, self.gt)
        frame = pd.read_csv(write_table(records, tmp_path / "errors.csv"), dtype={"sample_id": str})
        assert list(frame["sample_id"]) == sorted(self.gt)
        assert "ang_err_deg" in frame.columns

    def test_write_xlsx_table(self, tmp_path):
        records = evaluate_dataset(self.gt, self.gt)
        path = write_table(records, tmp_path / "errors.xlsx")
        frame = pd.read_excel(path, sheet_name="errors", engine="openpyxl")
        assert len(frame) == 10

    def test_records_frame_degrees(self):
        frame = records_frame([make_record("a", 1.0, 30.0, 10.0)])
        assert frame["ang_err_deg"].iloc[0] == pytest.approx(30.0)

    def test_histogram(self):
        result = angular_error_histogram([1.0, 5.0, 15.0, 179.0], 10.0)
        assert len(result["edges_deg"]) == 19
        assert sum(result["counts"]) == 4
        assert result["counts"][0] == 2

    def test_ensemble(self):
        rotated = {k: PoseSample(p.q, p.t + [0.0, 0.0, 2.0]) for k, p in self.gt.items()}
        combined = ensemble_predictions([self.gt, rotated])
        for sample_id, pose in combined.items():
            assert np.allclose(pose.t, self.gt[sample_id].t + [0.0, 0.0, 1.0])
            assert np.allclose(pose.q, self.gt[sample_id].q)

    def test_ensemble_mismatched_ids(self):
        partial = dict(list(self.gt.items())[:5])
        with pytest.raises(ValueError, match="different sample ids"):
            ensemble_predictions([self.gt, partial])

import json
import os

import numpy as np
import pytest
import torch

from boostcil.evaluation import (
    CONFUSION_NAME,
    CURVE_NAME,
    RESULTS_NAME,
    RunReport,
    SessionReport,
    average_incremental_accuracy,
    confusion_matrix,
    emit_reports,
    evaluate_session,
    regenerate_reports,
)
from boostcil.datasets import make_blobs
from boostcil.exceptions import InvalidProtocolError
from boostcil.models import SingleHeadModel
from boostcil.stream import Protocol, build_class_order, build_stream

ARCH = {"arch": "mlp", "input_shape": [4], "hidden_dims": [8], "feature_dim": 6}


class _FixedPredictor(torch.nn.Module):
    """Returns one-hot logits for a preset label sequence."""

    def __init__(self, labels, k):
        super().__init__()
        self.labels = list(labels)
        self.k = k
        self.cursor = 0
        self.dummy = torch.nn.Parameter(torch.zeros(1))

    def forward(self, x):
        take = self.labels[self.cursor : self.cursor + len(x)]
        self.cursor += len(x)
        out = torch.full((len(x), self.k), -10.0)
        out[torch.arange(len(x)), torch.tensor(take)] = 10.0
        return out + 0.0 * self.dummy


def _session(num_classes=4, step=2, t=1):
    ds = make_blobs(num_classes=num_classes, dim=4, train_per_class=10,
                    test_per_class=5, center_scale=1.5, seed=3)
    stream = build_stream(
        ds, Protocol(0, step, "fixed_total", 8), build_class_order(num_classes)
    )
    return stream.session(t)


class TestConfusionMatrix:
    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        k = 5
        true = rng.integers(0, k, 60)
        pred = rng.integers(0, k, 60)
        m = confusion_matrix(true, pred, k)
        brute = np.zeros((k, k), dtype=np.int64)
        for a, b in zip(true, pred):
            brute[a, b] += 1
        assert np.array_equal(m, brute)

    def test_row_sums_count_true_instances(self):
        true = np.array([0, 0, 1, 2, 2, 2])
        pred = np.array([0, 1, 1, 0, 2, 2])
        m = confusion_matrix(true, pred, 3)
        assert m.sum() == 6
        assert np.array_equal(m.sum(axis=1), [2, 1, 3])

    def test_perfect_predictions_are_diagonal(self):
        true = np.array([0, 1, 2, 1, 0])
        m = confusion_matrix(true, true, 3)
        assert np.array_equal(m, np.diag([2, 2, 1]))


class TestEvaluateSession:
    def test_perfect_predictor_scores_one(self):
        session = _session()
        model = _FixedPredictor(session.test_y, session.num_seen)
        report = evaluate_session(model, session)
        assert report.acc == 1.0
        assert report.acc_old == 1.0 and report.acc_new == 1.0
        assert np.array_equal(report.confusion,
                              np.diag(np.bincount(session.test_y)))

    def test_constant_predictor_scores_class_share(self):
        session = _session()
        model = _FixedPredictor([0] * len(session.test_y), session.num_seen)
        report = evaluate_session(model, session)
        share = float((session.test_y == 0).mean())
        assert report.acc == pytest.approx(share)
        assert report.acc_new == 0.0

    def test_total_accuracy_is_weighted_split_mean(self):
        session = _session()
        rng = np.random.default_rng(1)
        labels = rng.integers(0, session.num_seen, len(session.test_y))
        model = _FixedPredictor(labels, session.num_seen)
        report = evaluate_session(model, session)
        old = session.test_y < session.num_old
        n_old, n_new = int(old.sum()), int((~old).sum())
        mixed = (report.acc_old * n_old + report.acc_new * n_new) / (n_old + n_new)
        assert report.acc == pytest.approx(mixed, rel=1e-9)

    def test_base_session_has_no_old_block(self):
        session = _session(t=0)
        model = _FixedPredictor(session.test_y, session.num_seen)
        report = evaluate_session(model, session)
        assert report.acc_old is None
        assert report.acc_new == 1.0

    def test_gap_passthrough_and_param_counts(self):
        session = _session(t=0)
        model = SingleHeadModel(ARCH, session.num_seen, seed=0)
        report = evaluate_session(model, session, gap=0.01)
        assert report.gap == 0.01
        assert report.params_trainable == report.params_total > 0

    def test_empty_test_set_rejected(self):
        session = _session()
        object.__setattr__(session, "test_x", session.test_x[:0])
        object.__setattr__(session, "test_y", session.test_y[:0])
        with pytest.raises(InvalidProtocolError):
            evaluate_session(SingleHeadModel(ARCH, 4, seed=0), session)

    def test_out_of_range_labels_rejected(self):
        session = _session()
        bad = session.test_y.copy()
        bad[0] = session.num_seen
        object.__setattr__(session, "test_y", bad)
        with pytest.raises(InvalidProtocolError):
            evaluate_session(SingleHeadModel(ARCH, 4, seed=0), session)


class TestAverageIncrementalAccuracy:
    def _report(self, t, acc):
        return SessionReport(session=t, acc=acc, acc_old=None, acc_new=acc,
                             confusion=None)

    def test_arithmetic_mean(self):
        reports = [self._report(t, a) for t, a in enumerate([1.0, 0.5, 0.75])]
        assert average_incremental_accuracy(reports) == pytest.approx(0.75)

    def test_single_session(self):
        assert average_incremental_accuracy([self._report(0, 0.9)]) == pytest.approx(0.9)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            average_incremental_accuracy([])


def _toy_run(gap=None):
    sessions = [
        SessionReport(session=0, acc=0.95, acc_old=None, acc_new=0.95,
                      confusion=np.array([[9, 1], [0, 10]]), params_trainable=50,
                      params_total=50, gap=None),
        SessionReport(session=1, acc=0.80, acc_old=0.75, acc_new=0.85,
                      confusion=np.eye(4, dtype=np.int64) * 5, params_trainable=60,
                      params_total=110, gap=gap),
    ]
    return RunReport(sessions=sessions, avg_inc_acc=0.875,
                     config={"method": "foster", "seed": 0}, seed=0)


class TestRoundTrips:
    def test_session_report_dict_round_trip(self):
        run = _toy_run(gap=0.02)
        for report in run.sessions:
            back = SessionReport.from_dict(report.to_dict())
            assert back.to_dict() == report.to_dict()
            assert back.confusion is None

    def test_run_report_dict_round_trip(self):
        run = _toy_run(gap=0.02)
        back = RunReport.from_dict(run.to_dict())
        assert back.to_dict() == run.to_dict()

    def test_json_serializable(self):
        as_json = json.dumps(_toy_run().to_dict(), sort_keys=True)
        assert "avg_inc_acc" in as_json


class TestEmitReports:
    def test_byte_identical_re_emission(self, tmp_path):
        run = _toy_run(gap=0.01)
        emit_reports(run, str(tmp_path))
        first = (tmp_path / RESULTS_NAME).read_bytes()
        first_csv = (tmp_path / CURVE_NAME).read_bytes()
        emit_reports(run, str(tmp_path))
        assert (tmp_path / RESULTS_NAME).read_bytes() == first
        assert (tmp_path / CURVE_NAME).read_bytes() == first_csv

    def test_expected_files_written(self, tmp_path):
        written = emit_reports(_toy_run(), str(tmp_path))
        names = {os.path.basename(p) for p in written}
        assert {RESULTS_NAME, CURVE_NAME, CONFUSION_NAME,
                "curve.png", "confusion_0.png", "confusion_1.png"} <= names
        for p in written:
            assert os.path.exists(p)

    def test_csv_has_header_plus_one_row_per_session(self, tmp_path):
        emit_reports(_toy_run(), str(tmp_path))
        lines = (tmp_path / CURVE_NAME).read_text().strip().splitlines()
        assert lines[0] == "t,acc"
        assert len(lines) == 3
        assert lines[1] == "0,0.950000"

    def test_confusion_sidecar_preserves_counts(self, tmp_path):
        run = _toy_run()
        emit_reports(run, str(tmp_path))
        with np.load(tmp_path / CONFUSION_NAME) as data:
            assert np.array_equal(data["session_0"], run.sessions[0].confusion)
            assert np.array_equal(data["session_1"], run.sessions[1].confusion)

    def test_results_json_content(self, tmp_path):
        emit_reports(_toy_run(gap=0.01), str(tmp_path))
        payload = json.loads((tmp_path / RESULTS_NAME).read_text())
        assert payload["avg_inc_acc"] == 0.875
        assert payload["sessions"][1]["gap"] == 0.01
        assert payload["sessions"][0]["t"] == 0
        assert payload["config"]["method"] == "foster"


class TestRegenerateReports:
    def test_rebuilds_plots_from_artifacts(self, tmp_path):
        emit_reports(_toy_run(), str(tmp_path))
        for name in ("curve.png", "confusion_0.png", "confusion_1.png"):
            (tmp_path / name).unlink()
        written = regenerate_reports(str(tmp_path))
        assert {os.path.basename(p) for p in written} == {
            "curve.png", "confusion_0.png", "confusion_1.png"
        }
        for p in written:
            assert os.path.exists(p)

    def test_missing_results_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            regenerate_reports(str(tmp_path))

import numpy as np
import pytest

from motionwatch.scoring import (
    AnomalyTrace,
    CurveSummary,
    FrameRecord,
    Thresholds,
    auc_pr,
    auc_roc,
    compute_thresholds,
    fuse,
    metrics_report,
    pairwise_auc_oracle,
)


class TestThresholds:
    def test_maxima(self):
        th = compute_thresholds([0.1, 0.3, 0.2], [0.05, 0.01])
        assert th.e_c_thres == 0.3
        assert th.e_b_thres == 0.05

    def test_singletons(self):
        th = compute_thresholds([0.7], [0.2])
        assert (th.e_c_thres, th.e_b_thres) == (0.7, 0.2)

    def test_all_zero_training_errors(self):
        th = compute_thresholds([0.0, 0.0], [0.0])
        assert th.e_c_thres == 0.0
        # Documented consequence: any nonzero test error then saturates.
        assert fuse(0.001, 0.0, 0.5, th) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            compute_thresholds([], [0.1])


class TestFuse:
    TH = Thresholds(0.5, 0.6)

    def test_below_thresholds_passes_learned_error(self):
        assert fuse(0.1, 0.2, 0.03, self.TH) == 0.03

    def test_boundary_is_inclusive(self):
        assert fuse(0.5, 0.0, 0.03, self.TH) == 1.0

    def test_body_branch(self):
        assert fuse(0.0, 0.7, 0.9, self.TH) == 1.0

    def test_threshold_branch_invariant_to_eo_scale(self):
        assert fuse(0.9, 0.0, 1e9, self.TH) == fuse(0.9, 0.0, 1e-9, self.TH) == 1.0

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            fuse(float("nan"), 0.0, 0.0, self.TH)


class TestAucRoc:
    def test_perfect_separation(self):
        res = auc_roc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert res.auc == pytest.approx(1.0, abs=1e-12)

    def test_three_of_four_pairs(self):
        res = auc_roc([0.9, 0.8, 0.2, 0.1], [1, 0, 1, 0])
        assert res.auc == pytest.approx(0.75, abs=1e-12)

    def test_all_ties_half(self):
        res = auc_roc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0])
        assert res.auc == pytest.approx(0.5, abs=1e-12)

    def test_matches_pairwise_oracle_on_random_inputs(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(5, 400))
            # Quantized scores force plenty of ties.
            scores = np.round(rng.normal(size=n), 1)
            labels = rng.random(n) < rng.uniform(0.1, 0.9)
            if labels.all() or not labels.any():
                continue
            assert auc_roc(scores, labels).auc == pytest.approx(
                pairwise_auc_oracle(scores, labels), abs=1e-9
            )

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=200)
        labels = rng.random(200) < 0.3
        base = auc_roc(scores, labels).auc
        assert auc_roc(np.exp(scores), labels).auc == pytest.approx(base, abs=1e-12)
        assert auc_roc(3 * scores + 7, labels).auc == pytest.approx(base, abs=1e-12)

    def test_label_complement_flips_auc(self):
        rng = np.random.default_rng(2)
        scores = np.round(rng.normal(size=150), 1)
        labels = rng.random(150) < 0.4
        a = auc_roc(scores, labels).auc
        b = auc_roc(scores, ~labels).auc
        assert a + b == pytest.approx(1.0, abs=1e-9)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            auc_roc([0.1, 0.2], [1, 1])

    def test_roc_points_monotone_in_fpr(self):
        rng = np.random.default_rng(3)
        scores = np.round(rng.normal(size=50), 1)
        labels = rng.random(50) < 0.5
        pts = auc_roc(scores, labels).points
        fprs = [p[1] for p in pts]
        assert all(b >= a for a, b in zip(fprs, fprs[1:]))


class TestAucPr:
    def test_perfect_separation(self):
        assert auc_pr([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]).auc == pytest.approx(1.0)

    def test_hand_computed_average_precision(self):
        # Positives at ranks 1 and 3: AP = 1/2 * 1 + 1/2 * (2/3).
        res = auc_pr([0.9, 0.8, 0.2, 0.1], [1, 0, 1, 0])
        assert res.auc == pytest.approx(0.5 + 0.5 * (2.0 / 3.0), abs=1e-9)
        assert res.auc == pytest.approx(0.8333, abs=1e-4)

    def test_all_ties_equals_prevalence(self):
        res = auc_pr([0.4] * 10, [1, 1, 1, 0, 0, 0, 0, 0, 0, 0])
        assert res.auc == pytest.approx(0.3, abs=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            auc_pr([0.1, 0.2], [0, 0])


class TestTrace:
    def test_csv_roundtrip(self, tmp_path):
        trace = AnomalyTrace("exec_000")
        rng = np.random.default_rng(4)
        for t in range(1, 20):
            trace.append(
                FrameRecord(t, rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), t > 10)
            )
        path = tmp_path / "trace.csv"
        trace.write_csv(path)
        back = AnomalyTrace.read_csv(path, "exec_000")
        assert back.records == trace.records

    def test_frames_strictly_increasing(self):
        trace = AnomalyTrace("x")
        trace.append(FrameRecord(1, 0, 0, 0, 0, False))
        with pytest.raises(ValueError):
            trace.append(FrameRecord(1, 0, 0, 0, 0, False))

    def test_nonfinite_scores_rejected(self):
        trace = AnomalyTrace("x")
        with pytest.raises(ValueError):
            trace.append(FrameRecord(1, float("inf"), 0, 0, 0, False))


class TestReport:
    def test_metrics_report_fields(self):
        rng = np.random.default_rng(5)
        scores = rng.uniform(size=100)
        labels = rng.random(100) < 0.25
        report = metrics_report(scores, labels)
        assert set(report) >= {"auc_roc", "auc_pr", "counts", "score_saturated_fraction"}
        assert report["counts"]["frames"] == 100
        assert report["counts"]["anomalous"] + report["counts"]["nominal"] == 100

    def test_curve_summary_validation(self):
        with pytest.raises(ValueError):
            CurveSummary("nope", (), 0.5)
        with pytest.raises(ValueError):
            CurveSummary("roc", (), 1.5)

"""Metric identities, phasic extraction, thresholding, and the LOSO harness."""

import numpy as np
import pytest

from edakit import evaluate as ev
from edakit import signal_io as sio
from edakit.errors import ConfigError


def trapezoidal_auroc(pos, neg):
    """Independent oracle: integrate the ROC curve over all cut points."""
    scores = np.unique(np.concatenate([pos, neg]))
    cuts = np.concatenate([[-np.inf], scores, [np.inf]])
    points = []
    for t in cuts:
        tpr = np.mean(pos >= t)
        fpr = np.mean(neg >= t)
        points.append((fpr, tpr))
    points.sort()
    xs, ys = zip(*points)
    return float(np.trapezoid(ys, xs))


class TestReconMetrics:
    def test_estimate_equals_input_gives_zero_db(self):
        rng = np.random.default_rng(0)
        y = rng.standard_normal(512)
        x = y + rng.standard_normal(512) * 0.3
        m = ev.recon_metrics(x, y, x)
        assert m.snr_imp_db == 0.0

    def test_energy_ratio_100_to_1_is_20db(self):
        y = np.zeros(4)
        x = y + np.array([10.0, 0.0, 0.0, 0.0])  # residual energy 100
        est = y + np.array([1.0, 0.0, 0.0, 0.0])  # residual energy 1
        m = ev.recon_metrics(x, y, est)
        assert abs(m.snr_imp_db - 20.0) < 1e-12

    def test_antisymmetry_under_swap(self):
        rng = np.random.default_rng(1)
        y = rng.standard_normal(256)
        x = y + rng.standard_normal(256) * 0.5
        est = y + rng.standard_normal(256) * 0.1
        a = ev.recon_metrics(x, y, est).snr_imp_db
        b = ev.recon_metrics(est, y, x).snr_imp_db
        assert abs(a + b) < 1e-12

    def test_perfect_estimate_capped(self):
        rng = np.random.default_rng(2)
        y = rng.standard_normal(128)
        x = y + 0.5
        m = ev.recon_metrics(x, y, y.copy())
        assert m.snr_imp_db == ev.SNR_CAP_DB

    def test_pcc_self_is_one(self):
        rng = np.random.default_rng(3)
        y = rng.standard_normal(64)
        m = ev.recon_metrics(y + 1.0, y, y.copy())
        assert abs(m.pcc - 1.0) < 1e-12

    def test_mae_not_above_rmse(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            y = rng.standard_normal(100)
            x = y + rng.standard_normal(100)
            est = y + rng.standard_normal(100) * 0.7
            m = ev.recon_metrics(x, y, est)
            assert m.mae <= m.rmse + 1e-15

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        y = rng.standard_normal(200)
        x = y + rng.standard_normal(200) * 0.4
        est = y + rng.standard_normal(200) * 0.2
        m1 = ev.recon_metrics(x, y, est)
        m2 = ev.recon_metrics(x + 10.0, y + 10.0, est + 10.0)
        assert abs(m1.mae - m2.mae) < 1e-12
        assert abs(m1.rmse - m2.rmse) < 1e-12
        assert abs(m1.snr_imp_db - m2.snr_imp_db) < 1e-9


class TestExpFilter:
    def test_constant_fixed_point(self):
        x = np.full(64, 2.5)
        np.testing.assert_array_equal(ev.exp_filter(x), x)

    def test_impulse_geometric_decay(self):
        x = np.zeros(16)
        x[0] = 1.0
        y = ev.exp_filter(x, alpha=0.8)
        expected = 0.8 ** np.arange(16)
        np.testing.assert_allclose(y, expected, atol=1e-12)

    def test_step_convergence_closed_form(self):
        x = np.ones(64)
        x[0] = 0.0
        y = ev.exp_filter(x, alpha=0.8)
        # closed form: y[n] = 1 - 0.8^n for a step starting at n=1
        for n in (5, 10, 30, 63):
            assert abs(y[n] - (1.0 - 0.8**n)) < 1e-12
        assert abs(y[-1] - 1.0) < 0.01


class TestPhasic:
    def test_slow_ramp_has_tiny_phasic(self):
        t = np.arange(512) / 4.0
        ramp = 1.0 + 0.5 * t / 128.0  # one slow rise across 128 s
        phasic = ev.phasic_extract(ramp)
        assert phasic.max() < 0.02 * 0.5

    def test_single_scr_peak_location_and_height(self):
        # a brief SCR the 8 s median window can resolve
        kernel = sio.scr_kernel(0.4, 1.5)
        amp = 0.8
        x = np.full(512, 2.0)
        start = 150
        span = min(kernel.size, 512 - start)
        x[start : start + span] += amp * kernel[:span]
        phasic = ev.phasic_extract(x)
        peak_idx = int(np.argmax(phasic))
        true_peak = start + int(np.argmax(kernel[:span]))
        assert abs(peak_idx - true_peak) <= 2
        assert abs(phasic.max() - amp) / amp < 0.20

    def test_zero_segment_zero_phasic(self):
        np.testing.assert_array_equal(ev.phasic_extract(np.zeros(512)), 0.0)

    def test_score_flat_is_zero(self):
        seg = sio.Segment(samples=np.full(512, 3.0), subject_id="f")
        assert ev.score_segment(seg) == 0.0

    def test_score_tracks_larger_scr(self):
        kernel = sio.scr_kernel(0.4, 1.5)
        x = np.full(512, 2.0)
        x[40 : 40 + kernel.size] += 0.3 * kernel
        b = x.copy()
        b[300 : 300 + kernel.size] += 0.9 * kernel
        score_small = ev.score_segment(x)
        score_both = ev.score_segment(b)
        assert score_both > score_small
        assert abs(score_both - 0.9) / 0.9 < 0.25

    def test_score_scales_with_phasic(self):
        kernel = sio.scr_kernel(0.4, 1.5)
        base = np.full(512, 2.0)
        one = base.copy()
        one[100 : 100 + kernel.size] += 0.4 * kernel
        two = base.copy()
        two[100 : 100 + kernel.size] += 0.8 * kernel
        ratio = ev.score_segment(two) / ev.score_segment(one)
        assert abs(ratio - 2.0) < 0.5  # tonic estimator is mildly nonlinear


class TestThreshold:
    def test_small_enumeration(self):
        scores = np.arange(1.0, 11.0)
        assert ev.select_threshold(scores, 0.90) == 10.0

    def test_degenerate_all_equal(self):
        t = ev.select_threshold(np.full(8, 3.0), 0.90)
        assert t == 3.0 + ev.TIE_EPSILON
        assert np.mean(np.full(8, 3.0) < t) == 1.0

    def test_achieved_specificity(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            fold = rng.standard_normal(int(rng.integers(10, 80)))
            t = ev.select_threshold(fold, 0.90)
            assert np.mean(fold < t) >= 0.90

    def test_monotone_in_target(self):
        rng = np.random.default_rng(7)
        fold = rng.standard_normal(60)
        thresholds = [ev.select_threshold(fold, s) for s in (0.5, 0.7, 0.9, 0.95)]
        assert all(a <= b for a, b in zip(thresholds, thresholds[1:]))

    def test_empty_fold_rejected(self):
        with pytest.raises(ConfigError):
            ev.select_threshold([], 0.9)


class TestAuroc:
    def test_fully_separated(self):
        assert ev.auroc([5.0, 6.0], [1.0, 2.0]) == 1.0

    def test_all_tied_is_half(self):
        assert ev.auroc([1.0, 1.0, 1.0], [1.0, 1.0]) == 0.5

    def test_matches_trapezoidal_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            pos = rng.choice(np.arange(10.0), size=int(rng.integers(3, 12)))
            neg = rng.choice(np.arange(10.0), size=int(rng.integers(3, 12)))
            assert abs(ev.auroc(pos, neg) - trapezoidal_auroc(pos, neg)) < 1e-12

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(9)
        pos = rng.standard_normal(20)
        neg = rng.standard_normal(15) - 0.5
        a = ev.auroc(pos, neg)
        b = ev.auroc(np.exp(pos), np.exp(neg))
        assert abs(a - b) < 1e-12


class TestScheduling:
    def test_baseline_and_event_counts(self):
        recs = ev.make_synthetic_cohort(n_subjects=2, recordings_per_subject=1, seed=0)
        scored = ev.score_recording(recs[0])
        assert scored.baseline_scores.size == 6
        assert scored.event_scores.size == 15

    def test_max_lead_time(self):
        assert ev.max_lead_time_s() == 448.0
        assert abs(448.0 / 60.0 - 7.47) < 0.005

    def test_event_lead_grid(self):
        recs = ev.make_synthetic_cohort(n_subjects=2, recordings_per_subject=1, seed=0)
        scored = ev.score_recording(recs[0])
        np.testing.assert_allclose(scored.event_lead_s, 448.0 - 32.0 * np.arange(15))


class TestLoso:
    def test_separable_cohort_perfect(self):
        recs = [ev.score_recording(r) for r in ev.make_synthetic_cohort(12, 2, "separable", seed=1)]
        result = ev.loso_evaluate(recs)
        assert result.auroc >= 0.9
        assert result.sensitivity >= 0.9
        assert result.lead_median_min is not None

    def test_null_cohort_near_chance(self):
        aurocs = []
        for seed in range(20):
            recs = [ev.score_recording(r) for r in ev.make_synthetic_cohort(12, 2, "null", seed=seed)]
            aurocs.append(ev.loso_evaluate(recs).auroc)
        assert all(0.35 <= a <= 0.65 for a in aurocs)

    def test_fold_excludes_held_out_subject(self):
        recs = [ev.score_recording(r) for r in ev.make_synthetic_cohort(6, 2, "separable", seed=2)]
        result = ev.loso_evaluate(recs)
        for held_out, used in result.fold_audit.items():
            assert held_out not in used

    def test_threshold_specificity_on_training_fold(self):
        scored = [ev.score_recording(r) for r in ev.make_synthetic_cohort(8, 2, "separable", seed=3)]
        result = ev.loso_evaluate(scored)
        by_subject = {}
        for rec in scored:
            by_subject.setdefault(rec.subject_id, []).append(rec)
        for row in result.per_subject:
            fold = [
                v
                for s, recs in by_subject.items()
                if s != row["subject_id"]
                for r in recs
                for v in r.baseline_scores
            ]
            assert np.mean(np.asarray(fold) < row["threshold"]) >= 0.90

    def test_outcome_flag_counts(self):
        recs = [ev.score_recording(r) for r in ev.make_synthetic_cohort(4, 2, "separable", seed=4)]
        result = ev.loso_evaluate(recs)
        for outcome in result.outcomes:
            assert len(outcome.baseline_flags) == 6
            assert len(outcome.event_flags) == 15
            assert (outcome.lead_time_s is not None) == any(outcome.event_flags)

    def test_single_subject_rejected(self):
        recs = [ev.score_recording(r) for r in ev.make_synthetic_cohort(2, 1, seed=5)]
        only = [r for r in recs if r.subject_id == recs[0].subject_id]
        with pytest.raises(ConfigError):
            ev.loso_evaluate(only)

    def test_macro_average_is_mean_of_subjects(self):
        recs = [ev.score_recording(r) for r in ev.make_synthetic_cohort(5, 2, "separable", seed=6)]
        result = ev.loso_evaluate(recs)
        assert result.auroc == pytest.approx(np.mean([r["auroc"] for r in result.per_subject]))
        assert result.accuracy == pytest.approx(
            np.mean([r["accuracy"] for r in result.per_subject])
        )


class TestCohortFile:
    def test_roundtrip(self, tmp_path):
        recs = ev.make_synthetic_cohort(3, 2, seed=7)
        path = tmp_path / "cohort.jsonl"
        ev.write_cohort_jsonl(path, recs)
        back = ev.read_cohort_jsonl(path)
        assert len(back) == len(recs)
        np.testing.assert_array_equal(back[0].baseline, recs[0].baseline)
        np.testing.assert_array_equal(back[-1].event, recs[-1].event)

    def test_malformed_line_reported(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"subject_id": "a"}\n')
        with pytest.raises(ConfigError, match=":1:"):
            ev.read_cohort_jsonl(path)

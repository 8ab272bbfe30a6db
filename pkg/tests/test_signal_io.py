"""Segmenting, resampling, normalization, synthesis, and format round-trips."""

import numpy as np
import pytest

from edakit import signal_io as sio
from edakit.errors import ConfigError


def make_signal(samples, rate_hz=4.0, subject_id="s1"):
    return sio.SampledSignal(samples=np.asarray(samples, float), rate_hz=rate_hz, subject_id=subject_id)


class TestDownsample:
    def test_constant_preserved(self):
        sig = make_signal(np.full(2000, 2.5), rate_hz=100.0)
        out = sio.downsample(sig, 4.0)
        assert out.rate_hz == 4.0
        np.testing.assert_allclose(out.samples, 2.5, atol=1e-12)

    def test_slow_sine_amplitude_preserved(self):
        # 0.1 Hz sine sampled densely, amplitude must survive within 2%
        t = np.arange(100 * 100) / 100.0
        sig = make_signal(2.0 + np.sin(2 * np.pi * 0.1 * t), rate_hz=100.0)
        out = sio.downsample(sig, 4.0)
        # compare against the analytic sine at the decimated instants
        centered = out.samples - 2.0
        assert abs(centered.max() - 1.0) < 0.02
        assert abs(centered.min() + 1.0) < 0.02

    def test_above_nyquist_attenuated(self):
        t = np.arange(100 * 60) / 100.0
        sig = make_signal(np.sin(2 * np.pi * 3.0 * t), rate_hz=100.0)
        out = sio.downsample(sig, 4.0)
        in_rms = np.sqrt(np.mean(sig.samples**2))
        out_rms = np.sqrt(np.mean(out.samples**2))
        assert out_rms < 0.1 * in_rms

    def test_upsample_request_rejected(self):
        with pytest.raises(ConfigError):
            sio.downsample(make_signal(np.ones(100), rate_hz=4.0), 100.0)


class TestWindow:
    def test_counts_match_protocol(self):
        assert len(sio.window(make_signal(np.ones(1200)))) == 6
        assert len(sio.window(make_signal(np.ones(2400)))) == 15

    def test_single_window(self):
        assert len(sio.window(make_signal(np.ones(512)), overlap_fraction=0.5)) == 1

    def test_short_signal_empty(self):
        assert sio.window(make_signal(np.ones(511))) == []

    def test_count_matches_bruteforce(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(512, 4000))
            overlap = float(rng.choice([0.0, 0.25, 0.5, 0.75]))
            stride = int(round(512 * (1 - overlap)))
            brute = len([s for s in range(0, n, 1) if s % stride == 0 and s + 512 <= n])
            got = len(sio.window(make_signal(np.ones(n)), overlap_fraction=overlap))
            assert got == brute

    def test_end_aligned_final_window_reaches_end(self):
        segs = sio.window(make_signal(np.arange(2400.0)), align="end")
        assert len(segs) == 15
        assert segs[-1].samples[-1] == 2399.0
        # earliest end-aligned window starts 24 s in (96 samples)
        assert segs[0].start_time_s == 24.0

    def test_start_times(self):
        segs = sio.window(make_signal(np.arange(1200.0)))
        assert [s.start_time_s for s in segs] == [0.0, 32.0, 64.0, 96.0, 128.0, 160.0]


class TestNormalize:
    def test_roundtrip_identity(self):
        x = np.arange(1.0, 513.0)
        normed, stats = sio.normalize(x)
        back = sio.denormalize(normed, stats)
        np.testing.assert_allclose(back, x, atol=1e-10)

    def test_constant_segment_uses_floor(self):
        x = np.full(512, 4.2)
        normed, stats = sio.normalize(x)
        np.testing.assert_array_equal(normed, 0.0)
        assert stats.mu == pytest.approx(4.2, abs=1e-12)
        assert stats.sigma == sio.SIGMA_FLOOR

    def test_standardized_moments(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(512) * 7 + 3
        normed, _ = sio.normalize(x)
        assert abs(normed.mean()) < 1e-12
        assert abs(normed.std() - 1.0) < 1e-9


class TestSynthesize:
    def test_zero_rate_gives_smooth_tonic(self):
        cfg = sio.SynthConfig(duration_s=300.0, scr_rate_per_min=0.0, seed=1)
        sig = sio.synthesize_eda(cfg)
        tonic, phasic, onsets, _ = sio.synthesize_components(cfg)
        assert phasic.max() == 0.0 and onsets.size == 0
        second_diff = np.abs(np.diff(sig.samples, 2))
        assert second_diff.max() < 0.01  # smooth spline at 4 Hz

    def test_kernel_peak_time_matches_closed_form(self):
        rise, decay = 0.75, 10.0
        kernel = sio.scr_kernel(rise, decay, rate_hz=1000.0)
        numeric_peak = np.argmax(kernel) / 1000.0
        analytic = sio.scr_kernel_peak_time(rise, decay)
        assert abs(numeric_peak - analytic) < 2e-3

    def test_poisson_count_mean(self):
        rate, duration = 4.0, 600.0
        counts = []
        for seed in range(100):
            cfg = sio.SynthConfig(duration_s=duration, scr_rate_per_min=rate, seed=seed)
            _, _, onsets, _ = sio.synthesize_components(cfg)
            counts.append(onsets.size)
        expected = rate / 60.0 * duration
        assert abs(np.mean(counts) - expected) / expected < 0.10

    def test_positive_and_finite_across_seeds(self):
        for seed in range(0, 1000, 37):  # full 1000-seed sweep runs in acceptance
            cfg = sio.SynthConfig(duration_s=150.0, seed=seed)
            sig = sio.synthesize_eda(cfg)
            assert np.all(sig.samples > 0)
            assert np.all(np.isfinite(sig.samples))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            sio.SynthConfig(tonic_range=(2.0, 1.0))
        with pytest.raises(ConfigError):
            sio.SynthConfig(rise_tau_s=10.0, decay_tau_s=0.5)


class TestSplit:
    def _cohort(self, n_subjects, per_subject=4):
        rng = np.random.default_rng(0)
        segs = []
        for i in range(n_subjects):
            for _ in range(per_subject):
                segs.append(
                    sio.Segment(samples=rng.standard_normal(512) + 5, subject_id=f"s{i:02d}")
                )
        return segs

    def test_80_20_split(self):
        train, val = sio.split_by_subject(self._cohort(10), 0.8, seed=1)
        train_ids = {s.subject_id for s in train}
        val_ids = {s.subject_id for s in val}
        assert len(train_ids) == 8 and len(val_ids) == 2
        assert not train_ids & val_ids

    def test_two_subjects(self):
        train, val = sio.split_by_subject(self._cohort(2), 0.8, seed=1)
        assert len({s.subject_id for s in train}) == 1
        assert len({s.subject_id for s in val}) == 1

    def test_deterministic_per_seed(self):
        cohort = self._cohort(7)
        a1 = sio.split_by_subject(cohort, 0.8, seed=9)
        a2 = sio.split_by_subject(cohort, 0.8, seed=9)
        assert [s.subject_id for s in a1[0]] == [s.subject_id for s in a2[0]]

    def test_disjoint_for_many_seeds(self):
        cohort = self._cohort(9)
        for seed in range(25):
            train, val = sio.split_by_subject(cohort, 0.8, seed=seed)
            assert not {s.subject_id for s in train} & {s.subject_id for s in val}
            assert len(train) + len(val) == len(cohort)

    def test_single_subject_rejected(self):
        with pytest.raises(ConfigError):
            sio.split_by_subject(self._cohort(1), 0.8, seed=0)


class TestFormats:
    def test_segment_jsonl_roundtrip(self, tmp_path):
        rng = np.random.default_rng(5)
        segs = [
            sio.Segment(samples=rng.standard_normal(512) + 2, subject_id=f"s{i}", start_time_s=32.0 * i)
            for i in range(3)
        ]
        path = tmp_path / "segs.jsonl"
        sio.write_segments_jsonl(path, segs)
        back = sio.read_segments_jsonl(path)
        assert len(back) == 3
        for orig, loaded in zip(segs, back):
            np.testing.assert_array_equal(orig.samples, loaded.samples)
            assert orig.subject_id == loaded.subject_id

    def test_jsonl_write_is_bit_stable(self, tmp_path):
        rng = np.random.default_rng(6)
        segs = [sio.Segment(samples=rng.standard_normal(512), subject_id="a")]
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        sio.write_segments_jsonl(p1, segs)
        sio.write_segments_jsonl(p2, sio.read_segments_jsonl(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_malformed_jsonl_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"subject_id": "x", "samples": [1, 2]}\n')
        with pytest.raises(ConfigError, match=":1:"):
            sio.read_segments_jsonl(path)

    def test_csv_roundtrip(self, tmp_path):
        sig = make_signal(np.linspace(0.4, 0.9, 256), rate_hz=4.0)
        path = tmp_path / "sig.csv"
        sio.write_signal_csv(path, sig)
        back = sio.read_signal_csv(path)
        assert back.rate_hz == pytest.approx(4.0)
        np.testing.assert_array_equal(back.samples, sig.samples)

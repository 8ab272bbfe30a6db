"""Signal ingestion, segmenting, normalization, and synthetic EDA generation.

The universal unit of work is a 512-sample segment at 4 Hz (128 s). Signals
travel as two-column CSV (time_s,value_us); segments as JSON-lines records.
Everything here is a pure function of (input, seed).
"""

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import ConfigError

SEGMENT_LEN = 512
SEGMENT_RATE_HZ = 4.0
SIGMA_FLOOR = 1e-6

SITES = ("finger", "hand", "foot", "leg", "other")
CONDITIONS = ("clean", "noisy", "unknown")
ROLES = ("train", "val", "test")
KINDS = ("clean_target", "augmented_input", "real_noisy")


@dataclass
class SampledSignal:
    """Continuous recording in microsiemens at a uniform rate."""

    samples: np.ndarray
    rate_hz: float
    subject_id: str = ""
    site: str = "other"
    condition: str = "unknown"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size == 0:
            raise ConfigError("signal has no samples")
        if self.rate_hz <= 0:
            raise ConfigError(f"rate_hz must be positive, got {self.rate_hz}")
        if not np.all(np.isfinite(self.samples)):
            raise ConfigError("signal contains non-finite values")

    @property
    def duration_s(self):
        return self.samples.size / self.rate_hz


@dataclass
class Segment:
    """One 512-sample window at 4 Hz with provenance metadata."""

    samples: np.ndarray
    subject_id: str = ""
    start_time_s: float = 0.0
    role: str = "train"
    kind: str = "clean_target"
    site: str = "other"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.shape != (SEGMENT_LEN,):
            raise ConfigError(
                f"segment must hold exactly {SEGMENT_LEN} samples, got {self.samples.shape}"
            )
        if not np.all(np.isfinite(self.samples)):
            raise ConfigError("segment contains non-finite values")

    def copy(self, **changes):
        seg = replace(self, **changes)
        seg.samples = seg.samples.copy()
        return seg


@dataclass
class NormStats:
    """Per-segment z-score parameters; sigma is floored for flat segments."""

    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma < SIGMA_FLOOR:
            raise ConfigError(f"sigma {self.sigma} below floor {SIGMA_FLOOR}")


@dataclass
class SynthConfig:
    """Knobs for the synthetic EDA generator (tonic spline + Poisson SCRs)."""

    duration_s: float = 600.0
    tonic_range: tuple = (0.5, 3.0)
    tonic_knot_interval_s: float = 60.0
    scr_rate_per_min: float = 3.0
    scr_amp_lognormal: tuple = (-1.2, 0.5)
    rise_tau_s: float = 0.75
    decay_tau_s: float = 10.0
    seed: int = 0

    def __post_init__(self):
        low, high = self.tonic_range
        if not low < high:
            raise ConfigError(f"tonic_range must satisfy low < high, got {self.tonic_range}")
        if self.rise_tau_s <= 0 or self.decay_tau_s <= 0:
            raise ConfigError("SCR time constants must be positive")
        if self.rise_tau_s >= self.decay_tau_s:
            raise ConfigError("rise_tau must be shorter than decay_tau")
        if self.scr_rate_per_min < 0:
            raise ConfigError("scr_rate_per_min must be >= 0")


# ---------------------------------------------------------------------------
# resampling and windowing


def _lowpass_taps(cutoff_norm, num_taps=129):
    """Hamming-windowed sinc, normalized to unit DC gain."""
    n = np.arange(num_taps) - (num_taps - 1) / 2
    taps = 2.0 * cutoff_norm * np.sinc(2.0 * cutoff_norm * n)
    taps *= np.hamming(num_taps)
    return taps / taps.sum()


def downsample(signal, target_hz):
    """Anti-aliased decimation to target_hz (must divide the input rate)."""
    if target_hz >= signal.rate_hz:
        raise ConfigError(
            f"downsample target {target_hz} Hz must be below input rate {signal.rate_hz} Hz"
        )
    ratio = signal.rate_hz / target_hz
    factor = int(round(ratio))
    if abs(ratio - factor) > 1e-9:
        raise ConfigError(f"rate ratio {ratio} is not an integer decimation factor")
    taps = _lowpass_taps((target_hz / 2.0) / signal.rate_hz)
    half = len(taps) // 2
    padded = np.pad(signal.samples, half, mode="edge")
    filtered = np.convolve(padded, taps, mode="valid")
    return replace(signal, samples=filtered[::factor], rate_hz=target_hz)


def window(signal, window_len=SEGMENT_LEN, overlap_fraction=0.75, align="start", **segment_meta):
    """Slice a signal into fixed windows with the given overlap.

    stride = window_len * (1 - overlap); the trailing (or, with align="end",
    leading) partial window is dropped. Returns [] when the signal is shorter
    than one window.
    """
    if not 0.0 <= overlap_fraction < 1.0:
        raise ConfigError(f"overlap must be in [0, 1), got {overlap_fraction}")
    samples = signal.samples
    n = samples.size
    if n < window_len:
        return []
    stride = int(round(window_len * (1.0 - overlap_fraction)))
    if stride < 1:
        raise ConfigError("overlap too large: stride collapsed to zero")
    count = (n - window_len) // stride + 1
    if align == "start":
        starts = [i * stride for i in range(count)]
    elif align == "end":
        last = n - window_len
        starts = [last - (count - 1 - i) * stride for i in range(count)]
    else:
        raise ConfigError(f"align must be 'start' or 'end', got {align!r}")
    meta = {"subject_id": signal.subject_id, "site": signal.site}
    meta.update(segment_meta)
    return [
        Segment(
            samples=samples[s : s + window_len].copy(),
            start_time_s=s / signal.rate_hz,
            **meta,
        )
        for s in starts
    ]


# ---------------------------------------------------------------------------
# normalization


def normalize(samples):
    """Z-score a segment; returns (normalized array, NormStats)."""
    x = np.asarray(samples, dtype=np.float64)
    mu = float(x.mean())
    sigma = float(x.std())
    if sigma < SIGMA_FLOOR:
        # flatlined segment: exactly zeros rather than rounding noise / floor
        return np.zeros_like(x), NormStats(mu=mu, sigma=SIGMA_FLOOR)
    return (x - mu) / sigma, NormStats(mu=mu, sigma=sigma)


def denormalize(normalized, stats):
    return np.asarray(normalized, dtype=np.float64) * stats.sigma + stats.mu


# ---------------------------------------------------------------------------
# synthetic EDA


def scr_kernel(rise_tau_s, decay_tau_s, rate_hz=SEGMENT_RATE_HZ):
    """Bi-exponential SCR shape, unit peak, truncated where it falls below
    1e-4 of the peak."""
    peak_t = (
        math.log(decay_tau_s / rise_tau_s)
        * decay_tau_s
        * rise_tau_s
        / (decay_tau_s - rise_tau_s)
    )
    # long tail: find support where h < 1e-4 * h_peak
    t = np.arange(0.0, 20.0 * decay_tau_s, 1.0 / rate_hz)
    h = np.exp(-t / decay_tau_s) - np.exp(-t / rise_tau_s)
    peak = h.max()
    after_peak = np.where((t > peak_t) & (h < 1e-4 * peak))[0]
    end = after_peak[0] if after_peak.size else t.size
    return h[:end] / peak


def scr_kernel_peak_time(rise_tau_s, decay_tau_s):
    return (
        math.log(decay_tau_s / rise_tau_s)
        * decay_tau_s
        * rise_tau_s
        / (decay_tau_s - rise_tau_s)
    )


def synthesize_components(config, rate_hz=SEGMENT_RATE_HZ):
    """Tonic spline, phasic SCR train, and the SCR ground truth.

    Returns (tonic, phasic, onset_times_s, amplitudes).
    """
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    n = int(round(config.duration_s * rate_hz))
    t = np.arange(n) / rate_hz

    low, high = config.tonic_range
    n_knots = max(2, int(config.duration_s / config.tonic_knot_interval_s) + 1)
    knot_t = np.linspace(0.0, config.duration_s, n_knots)
    knot_v = rng.uniform(low, high, size=n_knots)
    # pchip stays inside the knot envelope, keeping the signal positive
    tonic = PchipInterpolator(knot_t, knot_v)(t)

    phasic = np.zeros(n)
    onsets = []
    amps = []
    expected = config.scr_rate_per_min / 60.0 * config.duration_s
    count = int(rng.poisson(expected)) if expected > 0 else 0
    if count:
        kernel = scr_kernel(config.rise_tau_s, config.decay_tau_s, rate_hz)
        onset_times = np.sort(rng.uniform(0.0, config.duration_s, size=count))
        mu_a, sigma_a = config.scr_amp_lognormal
        amplitudes = rng.lognormal(mu_a, sigma_a, size=count)
        for when, amp in zip(onset_times, amplitudes):
            start = int(round(when * rate_hz))
            if start >= n:
                continue
            span = min(kernel.size, n - start)
            phasic[start : start + span] += amp * kernel[:span]
            onsets.append(when)
            amps.append(float(amp))
    return tonic, phasic, np.asarray(onsets), np.asarray(amps)


def synthesize_eda(config, subject_id="synth", site="finger", rate_hz=SEGMENT_RATE_HZ):
    """Generate a clean synthetic EDA recording (tonic + phasic, all > 0)."""
    tonic, phasic, _, _ = synthesize_components(config, rate_hz)
    return SampledSignal(
        samples=tonic + phasic,
        rate_hz=rate_hz,
        subject_id=subject_id,
        site=site,
        condition="clean",
    )


# ---------------------------------------------------------------------------
# splitting


def split_by_subject(segments, train_fraction=0.8, seed=0):
    """Subject-wise partition; no subject appears on both sides.

    Exact .5 ties in the subject count round toward train.
    """
    subjects = sorted({s.subject_id for s in segments})
    if len(subjects) < 2:
        raise ConfigError(f"need at least 2 subjects to split, got {len(subjects)}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, len(subjects)]))
    order = list(rng.permutation(subjects))
    target = train_fraction * len(subjects)
    n_train = int(math.floor(target))
    if target - n_train >= 0.5 - 1e-12:
        n_train += 1
    n_train = max(1, min(len(subjects) - 1, n_train))
    train_ids = set(order[:n_train])
    train = [s.copy(role="train") for s in segments if s.subject_id in train_ids]
    val = [s.copy(role="val") for s in segments if s.subject_id not in train_ids]
    return train, val


# ---------------------------------------------------------------------------
# file formats


def write_segments_jsonl(path, segments):
    with open(path, "w") as fh:
        for seg in segments:
            record = {
                "subject_id": seg.subject_id,
                "site": seg.site,
                "rate_hz": SEGMENT_RATE_HZ,
                "start_time_s": seg.start_time_s,
                "kind": seg.kind,
                "samples": [float(v) for v in seg.samples],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_segments_jsonl(path, role="train"):
    segments = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                segments.append(
                    Segment(
                        samples=np.asarray(record["samples"], dtype=np.float64),
                        subject_id=record["subject_id"],
                        start_time_s=float(record.get("start_time_s", 0.0)),
                        role=role,
                        kind=record.get("kind", "clean_target"),
                        site=record.get("site", "other"),
                    )
                )
            except (KeyError, ValueError, TypeError, ConfigError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad segment record: {exc}") from exc
    return segments


def write_signal_csv(path, signal):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "value_us"])
        for i, value in enumerate(signal.samples):
            writer.writerow([repr(i / signal.rate_hz), repr(float(value))])


def read_signal_csv(path, rate_hz=None, subject_id="", site="other"):
    times = []
    values = []
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ConfigError(f"{path}: empty CSV")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                times.append(float(row[0]))
                values.append(float(row[1]))
            except (IndexError, ValueError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad CSV row: {exc}") from exc
    if len(values) < 2:
        raise ConfigError(f"{path}: need at least 2 samples")
    if rate_hz is None:
        dt = times[1] - times[0]
        if dt <= 0:
            raise ConfigError(f"{path}: non-increasing time column")
        rate_hz = 1.0 / dt
    return SampledSignal(
        samples=np.asarray(values), rate_hz=rate_hz, subject_id=subject_id, site=site
    )

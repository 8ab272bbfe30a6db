"""Reconstruction metrics and the event-prediction evaluation harness.

Reconstruction quality is scored on de-normalized signals in microsiemens.
Downstream prediction follows a leave-one-subject-out protocol: per held-out
subject, a risk threshold is chosen from the remaining subjects' baseline
scores to hit a target specificity, then applied at the segment level;
recording-level sensitivity/specificity, subject macro-averages, and lead
times are derived from the flags.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import median_filter, uniform_filter1d
from scipy.stats import rankdata

from .errors import ConfigError
from .signal_io import (
    SEGMENT_LEN,
    SEGMENT_RATE_HZ,
    SampledSignal,
    Segment,
    SynthConfig,
    synthesize_eda,
    window,
)

SNR_CAP_DB = 300.0
ENERGY_FLOOR = 1e-30
TIE_EPSILON = 1e-9
PCC_FLOOR = 1e-12

BASELINE_SECONDS = 300.0
EVENT_SECONDS = 600.0


@dataclass
class ReconMetrics:
    mae: float
    rmse: float
    pcc: float
    snr_imp_db: float

    def to_dict(self):
        return {"mae": self.mae, "rmse": self.rmse, "pcc": self.pcc, "snr_imp_db": self.snr_imp_db}


def recon_metrics(noisy, clean, estimate):
    """MAE/RMSE/PCC plus SNR improvement of the estimate over the raw input.

    SNR improvement is the residual-energy ratio in dB: positive when the
    estimate sits closer to the clean target than the noisy input does.
    Energies are floored at 1e-30 and the result clamped to +-300 dB.
    """
    x = np.asarray(noisy, dtype=np.float64)
    y = np.asarray(clean, dtype=np.float64)
    est = np.asarray(estimate, dtype=np.float64)
    if not (x.shape == y.shape == est.shape):
        raise ConfigError(f"metric inputs must share a shape: {x.shape}, {y.shape}, {est.shape}")
    err = est - y
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    sy = y.std()
    se = est.std()
    if sy < PCC_FLOOR or se < PCC_FLOOR:
        pcc = 0.0
    else:
        pcc = float(np.corrcoef(y, est)[0, 1])
    num = max(float(np.sum((x - y) ** 2)), ENERGY_FLOOR)
    den = max(float(np.sum(err * err)), ENERGY_FLOOR)
    snr = 10.0 * math.log10(num / den)
    snr = max(-SNR_CAP_DB, min(SNR_CAP_DB, snr))
    return ReconMetrics(mae=mae, rmse=rmse, pcc=pcc, snr_imp_db=snr)


def exp_filter(signal, alpha=0.8):
    """First-order exponential smoother; larger alpha smooths harder."""
    x = np.asarray(signal, dtype=np.float64)
    y = np.empty_like(x)
    y[0] = x[0]
    for i in range(1, x.size):
        y[i] = alpha * y[i - 1] + (1.0 - alpha) * x[i]
    return y


def phasic_extract(samples):
    """Phasic-driver proxy: signal minus a median+average tonic estimate.

    Tonic is a 32-sample (8 s) moving median followed by a 16-sample (4 s)
    moving average, both edge-replicated; the positive residual is the
    phasic component.
    """
    x = np.asarray(samples, dtype=np.float64)
    tonic = median_filter(x, size=32, mode="nearest")
    tonic = uniform_filter1d(tonic, size=16, mode="nearest")
    return np.maximum(x - tonic, 0.0)


@dataclass
class RiskScore:
    segment: Segment
    score: float


def score_segment(segment):
    """Risk score: peak amplitude of the phasic driver within the segment."""
    samples = segment.samples if isinstance(segment, Segment) else segment
    return float(phasic_extract(samples).max())


def select_threshold(baseline_scores, target_specificity=0.90):
    """Smallest threshold with at least the target fraction strictly below it.

    Classification rule: score >= threshold flags a segment as positive.
    Degenerate all-tied folds fall back to max + 1e-9.
    """
    scores = np.sort(np.asarray(list(baseline_scores), dtype=np.float64))
    if scores.size == 0:
        raise ConfigError("cannot select a threshold from an empty fold")
    n = scores.size
    for v in np.unique(scores):
        if np.count_nonzero(scores < v) / n >= target_specificity:
            return float(v)
    return float(scores[-1] + TIE_EPSILON)


def auroc(positive_scores, negative_scores):
    """Rank-based AUROC (Mann-Whitney) with half credit for ties."""
    pos = np.asarray(list(positive_scores), dtype=np.float64)
    neg = np.asarray(list(negative_scores), dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ConfigError("AUROC needs both positive and negative scores")
    ranks = rankdata(np.concatenate([pos, neg]))
    r_pos = ranks[: pos.size].sum()
    u = r_pos - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


# ---------------------------------------------------------------------------
# cohort structures


@dataclass
class CohortRecording:
    """Raw baseline and pre-event phases of one recording (4 Hz signals)."""

    subject_id: str
    recording_id: str
    baseline: np.ndarray  # 300 s -> 6 segments, start-aligned
    event: np.ndarray  # 600 s before onset -> 15 segments, end-aligned at onset

    def __post_init__(self):
        self.baseline = np.asarray(self.baseline, dtype=np.float64)
        self.event = np.asarray(self.event, dtype=np.float64)


@dataclass
class ScoredRecording:
    subject_id: str
    recording_id: str
    baseline_scores: np.ndarray
    event_scores: np.ndarray
    event_lead_s: np.ndarray  # onset minus each event segment's end time


@dataclass
class RecordingOutcome:
    subject_id: str
    recording_id: str
    baseline_flags: list
    event_flags: list
    lead_time_s: float | None


@dataclass
class CohortResult:
    per_subject: list
    auroc: float
    sensitivity: float
    specificity: float
    accuracy: float
    threshold_mean: float
    lead_median_min: float | None
    lead_q1_min: float | None
    lead_q3_min: float | None
    outcomes: list = field(default_factory=list)
    fold_audit: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "auroc": self.auroc,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "accuracy": self.accuracy,
            "threshold_mean": self.threshold_mean,
            "lead_median_min": self.lead_median_min,
            "lead_q1_min": self.lead_q1_min,
            "lead_q3_min": self.lead_q3_min,
            "per_subject": self.per_subject,
        }


def max_lead_time_s(event_seconds=EVENT_SECONDS, overlap=0.75):
    """Earliest possible warning given end-aligned event windows."""
    n = int(round(event_seconds * SEGMENT_RATE_HZ))
    stride = int(round(SEGMENT_LEN * (1.0 - overlap)))
    count = (n - SEGMENT_LEN) // stride + 1
    first_start = (n - SEGMENT_LEN) - (count - 1) * stride
    first_end_s = (first_start + SEGMENT_LEN) / SEGMENT_RATE_HZ
    return event_seconds - first_end_s


def score_recording(rec, transform=None):
    """Window, optionally denoise, and score one recording.

    transform maps a Segment to a Segment (identity when None). Baseline
    windows are start-aligned; event windows are end-aligned so the last one
    finishes exactly at onset.
    """
    base_sig = SampledSignal(rec.baseline, SEGMENT_RATE_HZ, subject_id=rec.subject_id)
    event_sig = SampledSignal(rec.event, SEGMENT_RATE_HZ, subject_id=rec.subject_id)
    base_segs = window(base_sig, align="start")
    event_segs = window(event_sig, align="end")
    onset_s = rec.event.size / SEGMENT_RATE_HZ

    def apply(seg):
        return transform(seg) if transform is not None else seg

    base_scores = np.array([score_segment(apply(s)) for s in base_segs])
    event_scores = np.array([score_segment(apply(s)) for s in event_segs])
    lead = np.array(
        [onset_s - (s.start_time_s + SEGMENT_LEN / SEGMENT_RATE_HZ) for s in event_segs]
    )
    return ScoredRecording(
        subject_id=rec.subject_id,
        recording_id=rec.recording_id,
        baseline_scores=base_scores,
        event_scores=event_scores,
        event_lead_s=lead,
    )


def loso_evaluate(recordings, target_specificity=0.90):
    """Leave-one-subject-out evaluation over scored recordings.

    Thresholds come exclusively from other subjects' baseline scores; a
    recording scores sensitivity 1 iff any event segment is flagged and
    specificity 1 iff no baseline segment is flagged. Multi-recording
    subjects are averaged before the macro-average. Lead times are medians
    (with quartiles) of subject-mean leads over successful predictions only.
    """
    subjects = sorted({r.subject_id for r in recordings})
    if len(subjects) < 2:
        raise ConfigError(f"LOSO needs at least 2 subjects, got {len(subjects)}")
    by_subject = {s: [r for r in recordings if r.subject_id == s] for s in subjects}

    per_subject = []
    outcomes = []
    fold_audit = {}
    subject_leads = []
    for held_out in subjects:
        train_scores = [
            float(v)
            for s in subjects
            if s != held_out
            for r in by_subject[s]
            for v in r.baseline_scores
        ]
        threshold = select_threshold(train_scores, target_specificity)
        fold_audit[held_out] = sorted(s for s in subjects if s != held_out)

        sens_list, spec_list, leads = [], [], []
        pos_scores, neg_scores = [], []
        for rec in by_subject[held_out]:
            base_flags = [bool(v >= threshold) for v in rec.baseline_scores]
            event_flags = [bool(v >= threshold) for v in rec.event_scores]
            sens = 1.0 if any(event_flags) else 0.0
            spec = 1.0 if not any(base_flags) else 0.0
            lead = None
            if any(event_flags):
                first = event_flags.index(True)
                lead = float(rec.event_lead_s[first])
                leads.append(lead)
            sens_list.append(sens)
            spec_list.append(spec)
            pos_scores.extend(rec.event_scores)
            neg_scores.extend(rec.baseline_scores)
            outcomes.append(
                RecordingOutcome(
                    subject_id=held_out,
                    recording_id=rec.recording_id,
                    baseline_flags=base_flags,
                    event_flags=event_flags,
                    lead_time_s=lead,
                )
            )
        sens = float(np.mean(sens_list))
        spec = float(np.mean(spec_list))
        row = {
            "subject_id": held_out,
            "auroc": auroc(pos_scores, neg_scores),
            "sensitivity": sens,
            "specificity": spec,
            "accuracy": (sens + spec) / 2.0,
            "threshold": threshold,
        }
        if leads:
            mean_lead = float(np.mean(leads))
            row["mean_lead_s"] = mean_lead
            subject_leads.append(mean_lead)
        per_subject.append(row)

    lead_median = lead_q1 = lead_q3 = None
    if subject_leads:
        arr = np.asarray(subject_leads) / 60.0
        lead_median = float(np.percentile(arr, 50))
        lead_q1 = float(np.percentile(arr, 25))
        lead_q3 = float(np.percentile(arr, 75))

    return CohortResult(
        per_subject=per_subject,
        auroc=float(np.mean([r["auroc"] for r in per_subject])),
        sensitivity=float(np.mean([r["sensitivity"] for r in per_subject])),
        specificity=float(np.mean([r["specificity"] for r in per_subject])),
        accuracy=float(np.mean([r["accuracy"] for r in per_subject])),
        threshold_mean=float(np.mean([r["threshold"] for r in per_subject])),
        lead_median_min=lead_median,
        lead_q1_min=lead_q1,
        lead_q3_min=lead_q3,
        outcomes=outcomes,
        fold_audit=fold_audit,
    )


# ---------------------------------------------------------------------------
# synthetic cohorts and the cohort file format


def make_synthetic_cohort(
    n_subjects=12,
    recordings_per_subject=2,
    mode="separable",
    seed=0,
    noise_snr_db=None,
):
    """CNS-OT-style cohort: baseline phases vs pre-onset event phases.

    mode "separable": event phases carry denser, larger SCRs so phasic peak
    scores separate the classes. mode "null": both phases share one
    distribution, so scores are exchangeable.
    """
    if mode not in ("separable", "null"):
        raise ConfigError(f"unknown cohort mode {mode!r}")
    recordings = []
    for si in range(n_subjects):
        for ri in range(recordings_per_subject):
            base_seed = int(
                np.random.SeedSequence([seed, si, ri, 0xC0]).generate_state(1)[0]
            )
            event_seed = int(
                np.random.SeedSequence([seed, si, ri, 0xC1]).generate_state(1)[0]
            )
            base_cfg = SynthConfig(
                duration_s=BASELINE_SECONDS,
                scr_rate_per_min=2.0,
                scr_amp_lognormal=(-1.5, 0.4),
                seed=base_seed,
            )
            if mode == "separable":
                event_cfg = SynthConfig(
                    duration_s=EVENT_SECONDS,
                    scr_rate_per_min=10.0,
                    scr_amp_lognormal=(0.3, 0.4),
                    seed=event_seed,
                )
            else:
                event_cfg = SynthConfig(
                    duration_s=EVENT_SECONDS,
                    scr_rate_per_min=2.0,
                    scr_amp_lognormal=(-1.5, 0.4),
                    seed=event_seed,
                )
            base = synthesize_eda(base_cfg, subject_id=f"subj{si:02d}").samples
            event = synthesize_eda(event_cfg, subject_id=f"subj{si:02d}").samples
            if noise_snr_db is not None:
                rng = np.random.default_rng(
                    np.random.SeedSequence([seed, si, ri, 0xC2])
                )
                for arr in (base, event):
                    noise = rng.standard_normal(arr.size)
                    scale = np.sqrt(
                        np.sum(arr**2)
                        / (np.sum(noise**2) * 10.0 ** (noise_snr_db / 10.0))
                    )
                    arr += noise * scale
            recordings.append(
                CohortRecording(
                    subject_id=f"subj{si:02d}",
                    recording_id=f"subj{si:02d}_r{ri}",
                    baseline=base,
                    event=event,
                )
            )
    return recordings


def write_cohort_jsonl(path, recordings):
    with open(path, "w") as fh:
        for rec in recordings:
            fh.write(
                json.dumps(
                    {
                        "subject_id": rec.subject_id,
                        "recording_id": rec.recording_id,
                        "rate_hz": SEGMENT_RATE_HZ,
                        "baseline": [float(v) for v in rec.baseline],
                        "event": [float(v) for v in rec.event],
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_cohort_jsonl(path):
    recordings = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                recordings.append(
                    CohortRecording(
                        subject_id=record["subject_id"],
                        recording_id=record["recording_id"],
                        baseline=np.asarray(record["baseline"], dtype=np.float64),
                        event=np.asarray(record["event"], dtype=np.float64),
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad cohort record: {exc}") from exc
    return recordings

"""Motion-artifact and distortion augmentation.

Each corrupted segment combines exactly one noise category (real extracted
motion artifacts, or colored noise at a target SNR) with one distortion
category (upper clipping, impulse spikes, or shearing step offsets). Plans
are sampled per segment from a seed mixed out of (global seed, epoch,
segment index), so batches are reproducible regardless of iteration order or
worker count. Training uses dynamic plans (re-drawn each epoch); validation
uses static plans fixed at construction.
"""

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError
from .signal_io import SEGMENT_LEN, SIGMA_FLOOR, Segment

# published parameter ranges for plan sampling
REAL_MA_SCALE = (0.7, 1.3)
SNR_DB = (20.0, 30.0)
BETA = (0.0, 2.0)
CLIP_FRACTION = (0.05, 0.20)
IMPULSE_AMP = (5.0, 30.0)
IMPULSE_COUNT = (1, 3)
IMPULSE_WIDTH = (1, 11)
SHEAR_COUNT = (1, 3)

CLEAN_FRACTION = 0.2

NOISE_KINDS = ("real_ma", "colored")
DISTORTION_KINDS = ("clipping", "impulse", "shearing")


@dataclass
class AugmentRanges:
    """Sampling intervals for plan parameters; defaults are the published ones."""

    real_ma_scale: tuple = REAL_MA_SCALE
    snr_db: tuple = SNR_DB
    beta: tuple = BETA
    clip_fraction: tuple = CLIP_FRACTION
    impulse_amp: tuple = IMPULSE_AMP
    impulse_count: tuple = IMPULSE_COUNT
    impulse_width: tuple = IMPULSE_WIDTH
    shear_count: tuple = SHEAR_COUNT

    def __post_init__(self):
        for f in fields(self):
            lo, hi = getattr(self, f.name)
            if lo > hi:
                raise ConfigError(f"range {f.name} has low > high: ({lo}, {hi})")

    def outside_published(self):
        """Names of ranges that stray outside the published intervals."""
        published = AugmentRanges()
        bad = []
        for f in fields(self):
            lo, hi = getattr(self, f.name)
            plo, phi = getattr(published, f.name)
            if lo < plo or hi > phi:
                bad.append(f.name)
        return bad


@dataclass
class AugmentationPlan:
    """One sampled noise + distortion recipe for a single segment."""

    noise: str
    noise_params: dict
    distortion: str
    distortion_params: dict
    seed: int

    def __post_init__(self):
        if self.noise not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.noise!r}")
        if self.distortion not in DISTORTION_KINDS:
            raise ConfigError(f"unknown distortion kind {self.distortion!r}")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


class MaBank:
    """Pool of zero-mean pure motion-artifact segments used as noise sources."""

    def __init__(self, entries):
        entries = [np.asarray(e, dtype=np.float64) for e in entries]
        for e in entries:
            if e.shape != (SEGMENT_LEN,):
                raise ConfigError(f"bank entry must hold {SEGMENT_LEN} samples")
            if not np.all(np.isfinite(e)):
                raise ConfigError("bank entry contains non-finite values")
        self.entries = [e - e.mean() for e in entries]

    def __len__(self):
        return len(self.entries)

    def save_jsonl(self, path):
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(json.dumps([float(v) for v in e]) + "\n")

    @classmethod
    def load_jsonl(cls, path):
        entries = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    entries.append(np.asarray(json.loads(line), dtype=np.float64))
                except ValueError as exc:
                    raise ConfigError(f"{path}:{lineno}: bad bank entry: {exc}") from exc
        return cls(entries)


def synthesize_ma_bank(size=60, seed=0):
    """Stand-in bank when real extracted artifacts are unavailable.

    Band-limited bursts with energy concentrated below 0.5 Hz, matching the
    predominantly low-frequency character of real motion artifacts.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6D61]))
    entries = []
    freqs = np.fft.rfftfreq(SEGMENT_LEN, d=0.25)
    shaping = np.where(freqs > 0, 1.0 / (1.0 + (freqs / 0.25) ** 2), 0.0)
    for _ in range(size):
        white = rng.standard_normal(SEGMENT_LEN)
        spec = np.fft.rfft(white) * shaping
        low = np.fft.irfft(spec, n=SEGMENT_LEN)
        # burst envelope: a few smooth on-regions
        envelope = np.zeros(SEGMENT_LEN)
        for _ in range(int(rng.integers(1, 4))):
            center = rng.integers(0, SEGMENT_LEN)
            width = rng.integers(40, 160)
            idx = np.arange(SEGMENT_LEN)
            envelope += np.exp(-0.5 * ((idx - center) / (width / 2.0)) ** 2)
        burst = low * np.minimum(envelope, 1.0)
        burst -= burst.mean()
        if burst.std() < SIGMA_FLOOR:
            burst = rng.standard_normal(SEGMENT_LEN) * 0.1
            burst -= burst.mean()
        entries.append(burst / burst.std())
    return MaBank(entries)


# ---------------------------------------------------------------------------
# noise ops


def inject_real_ma(clean, bank, scale, shift, pick_index, enforce_range=True):
    """Add a circularly shifted bank entry scaled relative to the clean std."""
    if len(bank) == 0:
        raise ConfigError("motion-artifact bank is empty")
    if enforce_range and not REAL_MA_SCALE[0] <= scale <= REAL_MA_SCALE[1]:
        raise ConfigError(f"scale {scale} outside {REAL_MA_SCALE}")
    entry = bank.entries[pick_index % len(bank)]
    entry_std = entry.std()
    if entry_std < SIGMA_FLOOR:
        raise ConfigError("bank entry is flat")
    clean_std = max(clean.samples.std(), SIGMA_FLOOR)
    noise = np.roll(entry, shift % SEGMENT_LEN) * (scale * clean_std / entry_std)
    return clean.copy(samples=clean.samples + noise, kind="augmented_input")


def colored_noise(length, beta, rng):
    """Zero-mean noise with power spectral density proportional to 1/f^beta.

    Deterministic 1/f^(beta/2) magnitudes with uniform random phases,
    inverse-transformed; the DC bin is zeroed so the mean is exactly zero.
    """
    freqs = np.fft.rfftfreq(length, d=1.0 / 4.0)
    mags = np.zeros(freqs.size)
    mags[1:] = freqs[1:] ** (-beta / 2.0)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=freqs.size)
    spec = mags * np.exp(1j * phases)
    spec[0] = 0.0
    if length % 2 == 0:
        spec[-1] = mags[-1] * np.sign(np.cos(phases[-1]))  # Nyquist bin must be real
    return np.fft.irfft(spec, n=length)


def add_at_snr(clean, noise, snr_db):
    """Rescale noise so the clean/noise energy ratio hits snr_db exactly."""
    noise = np.asarray(noise, dtype=np.float64)
    noise_energy = float(np.sum(noise * noise))
    if noise_energy <= 0.0:
        raise ConfigError("noise is identically zero")
    clean_energy = float(np.sum(clean.samples * clean.samples))
    if clean_energy <= 0.0:
        raise ConfigError("clean segment has zero energy")
    scale = np.sqrt(clean_energy / (noise_energy * 10.0 ** (snr_db / 10.0)))
    return clean.copy(samples=clean.samples + noise * scale, kind="augmented_input")


# ---------------------------------------------------------------------------
# distortion ops


def clip_upper(segment, p, enforce_range=True):
    """Saturate the top p-fraction of samples at the (1-p) order statistic."""
    if enforce_range and not CLIP_FRACTION[0] <= p <= CLIP_FRACTION[1]:
        raise ConfigError(f"clip fraction {p} outside {CLIP_FRACTION}")
    if not 0.0 < p < 1.0:
        raise ConfigError(f"clip fraction {p} must lie in (0, 1)")
    n = segment.samples.size
    k = n - int(np.ceil(p * n))  # number of samples left untouched
    threshold = np.sort(segment.samples)[k - 1]
    return segment.copy(samples=np.minimum(segment.samples, threshold))


def add_impulses(segment, amp_scale, count, width, rng, enforce_range=True):
    """Add count disjoint spikes with half-cosine envelopes and exact peaks.

    Peak height is amp_scale * std(segment); sign is random per spike.
    """
    if enforce_range:
        if not IMPULSE_AMP[0] <= amp_scale <= IMPULSE_AMP[1]:
            raise ConfigError(f"impulse amplitude {amp_scale} outside {IMPULSE_AMP}")
        if not IMPULSE_COUNT[0] <= count <= IMPULSE_COUNT[1]:
            raise ConfigError(f"impulse count {count} outside {IMPULSE_COUNT}")
        if not IMPULSE_WIDTH[0] <= width <= IMPULSE_WIDTH[1]:
            raise ConfigError(f"impulse width {width} outside {IMPULSE_WIDTH}")
    if count < 1 or width < 1:
        raise ConfigError("impulse count and width must be positive")
    n = segment.samples.size
    height = amp_scale * segment.samples.std()
    peak = width // 2
    offsets = np.arange(width) - peak
    envelope = np.cos(np.pi * offsets / (width + 1.0))
    occupied = np.zeros(n, dtype=bool)
    out = segment.samples.copy()
    placed = 0
    while placed < count:
        start = int(rng.integers(0, n - width + 1))
        if occupied[start : start + width].any():
            continue
        sign = 1.0 if rng.random() < 0.5 else -1.0
        out[start : start + width] += sign * height * envelope
        occupied[max(start - 1, 0) : start + width + 1] = True
        placed += 1
    return segment.copy(samples=out)


def shear(segment, count, rng, enforce_range=True):
    """Add step offsets at random cut points, each held until the next cut.

    Offset magnitudes are uniform in [0, max - min] of the segment (or
    [0, sigma floor] when the segment is flat); signs are random. Models
    abrupt wire-fault level jumps.
    """
    if enforce_range and not SHEAR_COUNT[0] <= count <= SHEAR_COUNT[1]:
        raise ConfigError(f"shear count {count} outside {SHEAR_COUNT}")
    if count < 1:
        raise ConfigError("shear count must be positive")
    n = segment.samples.size
    span = float(segment.samples.max() - segment.samples.min())
    if span <= 0.0:
        span = SIGMA_FLOOR
    cuts = np.sort(rng.choice(np.arange(1, n), size=count, replace=False))
    out = segment.samples.copy()
    bounds = list(cuts) + [n]
    for i in range(count):
        offset = rng.uniform(0.0, span) * (1.0 if rng.random() < 0.5 else -1.0)
        out[bounds[i] : bounds[i + 1]] += offset
    return segment.copy(samples=out)


# ---------------------------------------------------------------------------
# plan sampling and application


def _plan_rng(seed):
    return np.random.default_rng(np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF))


def mix_seed(global_seed, epoch, segment_index):
    """Stable 64-bit per-segment seed independent of batch iteration order."""
    ss = np.random.SeedSequence([int(global_seed), int(epoch), int(segment_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_plan(seed, bank_size, ranges=None):
    """Draw one plan with all parameters inside the sampling ranges."""
    r = ranges or AugmentRanges()
    rng = _plan_rng(seed)
    if bank_size > 0 and rng.random() < 0.5:
        noise = "real_ma"
        noise_params = {
            "scale": float(rng.uniform(*r.real_ma_scale)),
            "shift": int(rng.integers(0, SEGMENT_LEN)),
            "pick_index": int(rng.integers(0, bank_size)),
        }
    else:
        noise = "colored"
        noise_params = {
            "snr_db": float(rng.uniform(*r.snr_db)),
            "beta": float(rng.uniform(*r.beta)),
        }
    distortion = DISTORTION_KINDS[int(rng.integers(0, len(DISTORTION_KINDS)))]
    if distortion == "clipping":
        distortion_params = {"p": float(rng.uniform(*r.clip_fraction))}
    elif distortion == "impulse":
        distortion_params = {
            "amp_scale": float(rng.uniform(*r.impulse_amp)),
            "count": int(rng.integers(r.impulse_count[0], r.impulse_count[1] + 1)),
            "width": int(rng.integers(r.impulse_width[0], r.impulse_width[1] + 1)),
        }
    else:
        distortion_params = {
            "count": int(rng.integers(r.shear_count[0], r.shear_count[1] + 1))
        }
    return AugmentationPlan(
        noise=noise,
        noise_params=noise_params,
        distortion=distortion,
        distortion_params=distortion_params,
        seed=int(seed),
    )


def corrupt(clean, plan, bank=None, enforce_ranges=True):
    """Apply one plan: noise category, then distortion. Returns (input, target)."""
    rng = _plan_rng(plan.seed ^ 0x5DEECE66D)
    if plan.noise == "real_ma":
        if bank is None or len(bank) == 0:
            raise ConfigError("plan requires a motion-artifact bank")
        noisy = inject_real_ma(clean, bank, enforce_range=enforce_ranges, **plan.noise_params)
    else:
        noise = colored_noise(SEGMENT_LEN, plan.noise_params["beta"], rng)
        noisy = add_at_snr(clean, noise, plan.noise_params["snr_db"])
    if plan.distortion == "clipping":
        noisy = clip_upper(noisy, enforce_range=enforce_ranges, **plan.distortion_params)
    elif plan.distortion == "impulse":
        noisy = add_impulses(noisy, rng=rng, enforce_range=enforce_ranges, **plan.distortion_params)
    else:
        noisy = shear(noisy, rng=rng, enforce_range=enforce_ranges, **plan.distortion_params)
    return noisy, clean.copy(kind="clean_target")


def clean_count(batch_size):
    if batch_size < 5:
        raise ConfigError(f"batch size {batch_size} cannot realize the 20% clean mix")
    return int(round(CLEAN_FRACTION * batch_size))


def make_batch(clean_pool, bank, epoch, batch_size, mode, seed, indices=None,
               ranges=None, enforce_ranges=True):
    """Build one batch of (input, target) pairs with the 20/80 clean mix.

    clean_pool: list of clean segments; indices selects pool members (defaults
    to the first batch_size). Dynamic mode re-draws plans each epoch from
    mix(seed, epoch, index); static mode pins them to epoch 0. Returns
    (pairs, plans) where plans[i] is None for clean passthrough pairs.
    """
    if mode not in ("dynamic", "static"):
        raise ConfigError(f"mode must be 'dynamic' or 'static', got {mode!r}")
    n_clean = clean_count(batch_size)
    if indices is None:
        indices = list(range(batch_size))
    if len(indices) != batch_size:
        raise ConfigError("indices length must equal batch_size")
    pairs = []
    plans = []
    plan_epoch = epoch if mode == "dynamic" else 0
    for slot, idx in enumerate(indices):
        seg = clean_pool[idx]
        if slot < n_clean:
            pairs.append((seg.copy(kind="clean_target"), seg.copy(kind="clean_target")))
            plans.append(None)
        else:
            plan = sample_plan(mix_seed(seed, plan_epoch, idx), len(bank) if bank else 0, ranges)
            noisy, target = corrupt(seg, plan, bank, enforce_ranges=enforce_ranges)
            pairs.append((noisy, target))
            plans.append(plan)
    return pairs, plans


def make_static_pairs(pool, bank, seed, ranges=None, enforce_ranges=True, jobs=1):
    """Fully augmented (input, target) pairs, fixed once; used for validation.

    jobs > 1 builds pairs in a thread pool; per-segment seeding keeps the
    result identical to the serial order.
    """
    def build(idx_seg):
        idx, seg = idx_seg
        plan = sample_plan(mix_seed(seed, 0, idx), len(bank) if bank else 0, ranges)
        noisy, target = corrupt(seg, plan, bank, enforce_ranges=enforce_ranges)
        return (noisy, target), plan

    items = list(enumerate(pool))
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool_exec:
            results = list(pool_exec.map(build, items))
    else:
        results = [build(item) for item in items]
    pairs = [r[0] for r in results]
    plans = [r[1] for r in results]
    return pairs, plans


def write_plan_log(path, plans):
    with open(path, "w") as fh:
        for plan in plans:
            fh.write((plan.to_json() if plan is not None else "null") + "\n")

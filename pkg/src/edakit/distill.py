"""Training: teacher pre-training and student knowledge distillation.

The teacher minimizes plain reconstruction MSE in normalized space. The
student adds a distillation term: response matching against the frozen
teacher's output plus projected feature matching across the five encoder
taps, combined as

    total = 0.5 * recon + 0.5 * (response + 0.3 * feature)

Every run is a pure function of (data, seed): batch composition, plan
sampling, and parameter init all derive from the seed, and validation uses a
static pair list, so loss sequences replay exactly.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import augment
from .engine import OptimizerConfig, Tensor, adamw_step, clip_global_norm, cosine_lr, ops
from .errors import ConfigError, TrainingDiverged
from .evaluate import recon_metrics
from .models import StudentConfig, TeacherConfig, build_student, build_teacher, load_model, save_model
from .models.layers import Conv1d, Layer
from .signal_io import denormalize, normalize

FEATURE_WEIGHT = 0.3
RECON_WEIGHT = 0.5
KD_WEIGHT = 0.5
GRAD_CLIP_NORM = 5.0
MIN_BATCH = 5

MODEL_KINDS = ("teacher", "student", "student_kd")


@dataclass
class LossBreakdown:
    total: float
    recon: float
    kd: float
    response: float
    feature: float

    def composition_error(self):
        return abs(
            self.total - (RECON_WEIGHT * self.recon + KD_WEIGHT * (self.response + FEATURE_WEIGHT * self.feature))
        )


@dataclass
class TrainRun:
    tag: str
    seed: int
    epoch_logs: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_mae: float = math.inf
    checkpoint_path: str = ""

    @property
    def loss_sequence(self):
        return [row["train_total"] for row in self.epoch_logs]


class ProjectionSet(Layer):
    """Per-block 1x1 convs mapping student tap channels onto the teacher's."""

    def __init__(self, student_channels, teacher_channels, rng):
        super().__init__("proj")
        self.convs = []
        for i, (cs, ct) in enumerate(zip(student_channels, teacher_channels), start=1):
            conv = self.child(Conv1d(f"proj.phi{i}", cs, ct, 1, rng))
            self.convs.append(conv)

    def apply(self, index, tap):
        return self.convs[index - 1].forward(tap)


def loss_teacher(pred_norm, target_norm):
    """Reconstruction MSE over normalized samples."""
    return ops.mse(pred_norm, target_norm)


def loss_student(y_norm, yhat_s, yhat_t, taps_s, taps_t, projections):
    """Combined reconstruction + distillation loss.

    yhat_t and taps_t must come from a frozen teacher (no gradients); the
    projections map student taps into teacher channel widths. Returns
    (scalar loss tensor, LossBreakdown).
    """
    recon = ops.mse(yhat_s, y_norm)
    response = ops.mse(yhat_s, yhat_t)
    feature = None
    for i in sorted(taps_t):
        projected = projections.apply(i, taps_s[i])
        term = ops.mse(taps_t[i], projected)
        feature = term if feature is None else ops.add(feature, term)
    kd = ops.add(response, ops.scale(feature, FEATURE_WEIGHT))
    total = ops.add(ops.scale(recon, RECON_WEIGHT), ops.scale(kd, KD_WEIGHT))
    breakdown = LossBreakdown(
        total=total.item(),
        recon=recon.item(),
        kd=kd.item(),
        response=response.item(),
        feature=feature.item(),
    )
    return total, breakdown


def _freeze(net):
    for p in net.parameters():
        p.tensor.requires_grad = False
    return net


def _normalize_pairs(pairs):
    """Z-score inputs by their own stats; targets share the input's stats."""
    n = len(pairs)
    x_norm = np.empty((n, 512))
    y_norm = np.empty((n, 512))
    stats = []
    for i, (noisy, target) in enumerate(pairs):
        normed, st = normalize(noisy.samples)
        x_norm[i] = normed
        y_norm[i] = (target.samples - st.mu) / st.sigma
        stats.append(st)
    return x_norm, y_norm, stats


def validate(net, val_pairs, batch_size=16):
    """De-normalized MAE and SNR improvement over a static pair list."""
    maes = []
    snrs = []
    for lo in range(0, len(val_pairs), batch_size):
        chunk = val_pairs[lo : lo + batch_size]
        x_norm, _, stats = _normalize_pairs(chunk)
        out, _ = net.forward(Tensor(x_norm[:, None, :]), stats)
        for row, st, (noisy, target) in zip(out.data[:, 0, :], stats, chunk):
            estimate = denormalize(row, st)
            m = recon_metrics(noisy.samples, target.samples, estimate)
            maes.append(m.mae)
            snrs.append(m.snr_imp_db)
    return float(np.mean(maes)), float(np.mean(snrs))


def _epoch_batches(n_segments, batch_size, seed, epoch):
    """Deterministic shuffled index chunks; tails below the clean-mix minimum
    are dropped."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch, 0x0E0C]))
    order = [int(i) for i in rng.permutation(n_segments)]
    chunks = [order[lo : lo + batch_size] for lo in range(0, n_segments, batch_size)]
    return [c for c in chunks if len(c) >= MIN_BATCH]


def train(
    model_kind,
    train_segments,
    val_pairs,
    bank,
    config=None,
    workdir=".",
    seed=0,
    teacher_weights=None,
    teacher_config=None,
    student_config=None,
    resume_from=None,
    stop_after=None,
    ranges=None,
    enforce_ranges=True,
    quiet=True,
):
    """Full training loop; returns a TrainRun with per-epoch logs.

    model_kind: "teacher", "student" (no distillation), or "student_kd"
    (requires teacher_weights). Checkpoints the epoch with the lowest
    de-normalized validation MAE (earlier epoch wins ties) in the weight
    archive format, plus a float64 resume state per epoch. stop_after caps
    the number of epochs run this call without shortening the cosine
    schedule, so an interrupted run resumes exactly.
    """
    if model_kind not in MODEL_KINDS:
        raise ConfigError(f"model_kind must be one of {MODEL_KINDS}")
    config = config or OptimizerConfig()
    if config.batch_size < MIN_BATCH:
        raise ConfigError(f"batch size must be >= {MIN_BATCH}")
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    teacher_config = teacher_config or TeacherConfig()
    student_config = student_config or StudentConfig(teacher=teacher_config)
    if model_kind == "teacher":
        net = build_teacher(teacher_config, seed=seed)
    else:
        net = build_student(student_config, seed=seed)

    teacher = None
    projections = None
    if model_kind == "student_kd":
        if teacher_weights is None:
            raise ConfigError("student_kd training needs teacher weights")
        teacher = _freeze(load_model(teacher_weights, build_teacher(teacher_config, seed=seed)))
        proj_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9801]))
        projections = ProjectionSet(
            student_config.encoder_channels, teacher_config.encoder_channels, proj_rng
        )

    params = list(net.parameters())
    if projections is not None:
        params += list(projections.parameters())

    run = TrainRun(tag=model_kind, seed=seed)
    best_path = workdir / f"{model_kind}_best.edaw"
    log_path = workdir / f"{model_kind}_log.jsonl"
    resume_path = workdir / f"{model_kind}_resume.npz"

    start_epoch = 0
    global_step = 0
    if resume_from is not None:
        state = np.load(resume_from, allow_pickle=False)
        for p in params:
            p.data = state[f"param:{p.name}"]
            p.m = state[f"m:{p.name}"]
            p.v = state[f"v:{p.name}"]
        start_epoch = int(state["epoch"]) + 1
        global_step = int(state["step"])
        run.best_epoch = int(state["best_epoch"])
        run.best_val_mae = float(state["best_val_mae"])

    log_rows = []
    for epoch in range(start_epoch, config.epochs):
        lr = cosine_lr(epoch, config.epochs, config)
        sums = {"total": 0.0, "recon": 0.0, "response": 0.0, "feature": 0.0}
        n_batches = 0
        for indices in _epoch_batches(len(train_segments), config.batch_size, seed, epoch):
            pairs, _ = augment.make_batch(
                train_segments, bank, epoch=epoch, batch_size=len(indices),
                mode="dynamic", seed=seed, indices=indices,
                ranges=ranges, enforce_ranges=enforce_ranges,
            )
            x_norm, y_norm, stats = _normalize_pairs(pairs)
            x = Tensor(x_norm[:, None, :])
            y = Tensor(y_norm[:, None, :])
            for p in params:
                p.zero_grad()
            out, taps_s = net.forward(x, stats)
            if model_kind == "student_kd":
                t_out, taps_t = teacher.forward(x, stats)
                loss, breakdown = loss_student(y, out, t_out.detach(), taps_s, taps_t, projections)
                if breakdown.composition_error() > 1e-10:
                    raise TrainingDiverged(
                        f"loss composition identity violated by {breakdown.composition_error():.3e}",
                        epoch=epoch, step=global_step,
                    )
            else:
                recon = loss_teacher(out, y)
                if model_kind == "teacher":
                    loss = recon
                else:
                    # same code path as distillation with both KD terms zero
                    loss = ops.scale(recon, RECON_WEIGHT)
                breakdown = LossBreakdown(
                    total=loss.item(), recon=recon.item(), kd=0.0, response=0.0, feature=0.0
                )
            if not math.isfinite(breakdown.total):
                raise TrainingDiverged(
                    f"non-finite loss {breakdown.total}", epoch=epoch, step=global_step
                )
            loss.backward()
            clip_global_norm(params, GRAD_CLIP_NORM)
            global_step += 1
            adamw_step(params, config, global_step, lr=lr)
            sums["total"] += breakdown.total
            sums["recon"] += breakdown.recon
            sums["response"] += breakdown.response
            sums["feature"] += breakdown.feature
            n_batches += 1

        val_mae, val_snr = validate(net, val_pairs, config.batch_size)
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_total": sums["total"] / max(n_batches, 1),
            "train_recon": sums["recon"] / max(n_batches, 1),
            "train_response": sums["response"] / max(n_batches, 1),
            "train_feature": sums["feature"] / max(n_batches, 1),
            "val_mae": val_mae,
            "val_snr_imp": val_snr,
        }
        run.epoch_logs.append(row)
        log_rows.append(json.dumps(row, sort_keys=True))
        if not quiet:
            print(
                f"[{model_kind}] epoch {epoch}: loss {row['train_total']:.5f} "
                f"val_mae {val_mae:.5f} val_snr {val_snr:.2f} dB"
            )
        if val_mae < run.best_val_mae:
            run.best_val_mae = val_mae
            run.best_epoch = epoch
            save_model(best_path, net)
        _save_resume(resume_path, params, epoch, global_step, run)
        if stop_after is not None and epoch - start_epoch + 1 >= stop_after:
            break

    run.checkpoint_path = str(best_path)
    with open(log_path, "w") as fh:
        fh.write("\n".join(log_rows) + ("\n" if log_rows else ""))
    save_model(workdir / f"{model_kind}_last.edaw", net)
    return run


def _save_resume(path, params, epoch, step, run):
    state = {"epoch": epoch, "step": step, "best_epoch": run.best_epoch, "best_val_mae": run.best_val_mae}
    for p in params:
        state[f"param:{p.name}"] = p.data
        state[f"m:{p.name}"] = p.m
        state[f"v:{p.name}"] = p.v
    np.savez(path, **state)

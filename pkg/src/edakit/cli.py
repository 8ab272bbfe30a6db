"""Batch command-line surface for the whole pipeline.

Subcommands: synth, augment, train-teacher, distill, denoise, profile,
evaluate. Every command takes --seed (falling back to EDA_SEED, then the
config file) and produces byte-reproducible JSON outputs; wall-clock
metadata goes to a separate .meta.json sidecar. Exit codes: 0 success,
1 numeric failure, 2 usage or input error.
"""

import functools
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import augment as aug
from . import distill as kd
from . import evaluate as ev
from . import models
from . import signal_io as sio
from .engine import OptimizerConfig
from .errors import ConfigError, EdakitError, InferenceError, ShapeError, TrainingDiverged

CONFIG_DEFAULTS = {
    "seed": 0,
    # synthetic signals
    "n_subjects": 10,
    "duration_s": 600.0,
    "tonic_low": 0.5,
    "tonic_high": 3.0,
    "tonic_knot_interval_s": 60.0,
    "scr_rate_per_min": 3.0,
    "scr_amp_mu": -1.2,
    "scr_amp_sigma": 0.5,
    "rise_tau_s": 0.75,
    "decay_tau_s": 10.0,
    "bank_size": 60,
    "cohort_subjects": 12,
    "cohort_recordings": 2,
    # augmentation ranges (defaults are the published ones)
    "ma_scale_low": 0.7,
    "ma_scale_high": 1.3,
    "snr_db_low": 20.0,
    "snr_db_high": 30.0,
    "beta_low": 0.0,
    "beta_high": 2.0,
    "clip_low": 0.05,
    "clip_high": 0.20,
    "impulse_amp_low": 5.0,
    "impulse_amp_high": 30.0,
    "impulse_count_low": 1,
    "impulse_count_high": 3,
    "impulse_width_low": 1,
    "impulse_width_high": 11,
    "shear_count_low": 1,
    "shear_count_high": 3,
    # model
    "teacher_channels": "16,32,64,128,256",
    "heads": 4,
    "ffn_expansion": 2,
    "ffn_kernel": 3,
    "keep_film": True,
    "ds_fusion": False,
    # optimizer
    "epochs": 200,
    "batch_size": 16,
    "base_lr": 1e-3,
    "min_lr": 1e-6,
    "weight_decay": 1e-4,
}


def load_config(path=None):
    """Flat key=value config; unknown keys are rejected."""
    cfg = dict(CONFIG_DEFAULTS)
    if path is None:
        return cfg
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in cfg:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            default = cfg[key]
            try:
                if isinstance(default, bool):
                    if value.lower() not in ("true", "false", "1", "0"):
                        raise ValueError(f"bad boolean {value!r}")
                    cfg[key] = value.lower() in ("true", "1")
                elif isinstance(default, int):
                    cfg[key] = int(value)
                elif isinstance(default, float):
                    cfg[key] = float(value)
                else:
                    cfg[key] = value
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return cfg


def config_ranges(cfg, allow_out_of_range=False):
    ranges = aug.AugmentRanges(
        real_ma_scale=(cfg["ma_scale_low"], cfg["ma_scale_high"]),
        snr_db=(cfg["snr_db_low"], cfg["snr_db_high"]),
        beta=(cfg["beta_low"], cfg["beta_high"]),
        clip_fraction=(cfg["clip_low"], cfg["clip_high"]),
        impulse_amp=(cfg["impulse_amp_low"], cfg["impulse_amp_high"]),
        impulse_count=(cfg["impulse_count_low"], cfg["impulse_count_high"]),
        impulse_width=(cfg["impulse_width_low"], cfg["impulse_width_high"]),
        shear_count=(cfg["shear_count_low"], cfg["shear_count_high"]),
    )
    outside = ranges.outside_published()
    if outside and not allow_out_of_range:
        raise ConfigError(
            f"ranges outside the published bounds: {outside} "
            "(pass --allow-out-of-range to permit)"
        )
    return ranges


def teacher_config_from(cfg):
    channels = tuple(int(c) for c in str(cfg["teacher_channels"]).split(","))
    return models.TeacherConfig(
        encoder_channels=channels,
        heads=cfg["heads"],
        ffn_expansion=cfg["ffn_expansion"],
        ffn_kernel=cfg["ffn_kernel"],
    )


def student_config_from(cfg):
    return models.StudentConfig(
        teacher=teacher_config_from(cfg),
        keep_film=cfg["keep_film"],
        ds_fusion=cfg["ds_fusion"],
    )


def optimizer_config_from(cfg, epochs=None, batch_size=None):
    return OptimizerConfig(
        base_lr=cfg["base_lr"],
        min_lr=cfg["min_lr"],
        weight_decay=cfg["weight_decay"],
        batch_size=batch_size or cfg["batch_size"],
        epochs=epochs or cfg["epochs"],
    )


def resolve_seed(seed, cfg):
    return cfg["seed"] if seed is None else seed


def write_json(path, payload):
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def write_sidecar(path, command):
    meta = {"command": command, "written_unix": time.time()}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta) + "\n")


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (TrainingDiverged, InferenceError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
        except (ConfigError, ShapeError, EdakitError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


def seed_option(fn):
    return click.option(
        "--seed", type=int, default=None, envvar="EDA_SEED",
        help="Seed (falls back to EDA_SEED, then the config file).",
    )(fn)


def common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                      help="Flat key=value config file.")(fn)
    fn = click.option("--workdir", type=click.Path(), default=".", show_default=True,
                      help="Directory for inputs/outputs.")(fn)
    fn = seed_option(fn)
    return fn


@click.group()
def main():
    """EDA denoising workbench: synthesis, augmentation, training, evaluation."""


# ---------------------------------------------------------------------------


@main.command()
@common_options
@handle_errors
def synth(config_path, workdir, seed):
    """Generate synthetic train/val segments, an artifact bank, and a cohort."""
    cfg = load_config(config_path)
    seed = resolve_seed(seed, cfg)
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    segments = []
    for si in range(cfg["n_subjects"]):
        synth_cfg = sio.SynthConfig(
            duration_s=cfg["duration_s"],
            tonic_range=(cfg["tonic_low"], cfg["tonic_high"]),
            tonic_knot_interval_s=cfg["tonic_knot_interval_s"],
            scr_rate_per_min=cfg["scr_rate_per_min"],
            scr_amp_lognormal=(cfg["scr_amp_mu"], cfg["scr_amp_sigma"]),
            rise_tau_s=cfg["rise_tau_s"],
            decay_tau_s=cfg["decay_tau_s"],
            seed=int(np.random.SeedSequence([seed, si, 0x516]).generate_state(1)[0]),
        )
        signal = sio.synthesize_eda(synth_cfg, subject_id=f"subj{si:02d}")
        segments.extend(sio.window(signal))
    train, val = sio.split_by_subject(segments, 0.8, seed=seed)
    sio.write_segments_jsonl(workdir / "train.jsonl", train)
    sio.write_segments_jsonl(workdir / "val.jsonl", val)

    bank = aug.synthesize_ma_bank(size=cfg["bank_size"], seed=seed)
    bank.save_jsonl(workdir / "bank.jsonl")

    cohort = ev.make_synthetic_cohort(
        n_subjects=cfg["cohort_subjects"],
        recordings_per_subject=cfg["cohort_recordings"],
        mode="separable",
        seed=seed,
    )
    ev.write_cohort_jsonl(workdir / "cohort.jsonl", cohort)

    summary = {
        "train_segments": len(train),
        "val_segments": len(val),
        "bank_entries": len(bank),
        "cohort_recordings": len(cohort),
        "seed": seed,
    }
    write_json(workdir / "synth_summary.json", summary)
    write_sidecar(workdir / "synth_summary.json", "synth")
    click.echo(json.dumps(summary, sort_keys=True))


@main.command("augment")
@common_options
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="Clean segments JSONL.")
@click.option("--bank", "bank_path", required=True, type=click.Path(exists=True),
              help="Motion-artifact bank JSONL.")
@click.option("--output-prefix", default="augmented", show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--allow-out-of-range", is_flag=True, default=False)
@handle_errors
def augment_cmd(config_path, workdir, seed, input_path, bank_path, output_prefix, jobs,
                allow_out_of_range):
    """Apply static augmentation to clean segments; log every plan."""
    cfg = load_config(config_path)
    seed = resolve_seed(seed, cfg)
    ranges = config_ranges(cfg, allow_out_of_range)
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    pool = sio.read_segments_jsonl(input_path)
    bank = aug.MaBank.load_jsonl(bank_path)
    pairs, plans = aug.make_static_pairs(
        pool, bank, seed=seed, ranges=ranges,
        enforce_ranges=not allow_out_of_range, jobs=jobs,
    )
    sio.write_segments_jsonl(workdir / f"{output_prefix}_inputs.jsonl", [p[0] for p in pairs])
    sio.write_segments_jsonl(workdir / f"{output_prefix}_targets.jsonl", [p[1] for p in pairs])
    aug.write_plan_log(workdir / f"{output_prefix}_plans.jsonl", plans)
    write_sidecar(workdir / f"{output_prefix}_inputs.jsonl", "augment")
    click.echo(json.dumps({"pairs": len(pairs), "seed": seed}, sort_keys=True))


# ---------------------------------------------------------------------------


def _load_training_data(workdir, cfg, seed, train_path, val_path, bank_path,
                        ranges, enforce):
    train = sio.read_segments_jsonl(train_path or workdir / "train.jsonl", role="train")
    val_pool = sio.read_segments_jsonl(val_path or workdir / "val.jsonl", role="val")
    bank = aug.MaBank.load_jsonl(bank_path or workdir / "bank.jsonl")
    val_pairs, _ = aug.make_static_pairs(
        val_pool, bank, seed=seed + 1, ranges=ranges, enforce_ranges=enforce
    )
    return train, val_pairs, bank


def _train_command(model_kind, config_path, workdir, seed, train_path, val_path,
                   bank_path, epochs, teacher_weights, allow_out_of_range, resume,
                   verbose):
    cfg = load_config(config_path)
    seed = resolve_seed(seed, cfg)
    ranges = config_ranges(cfg, allow_out_of_range)
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    train, val_pairs, bank = _load_training_data(
        workdir, cfg, seed, train_path, val_path, bank_path, ranges,
        not allow_out_of_range,
    )
    opt = optimizer_config_from(cfg, epochs=epochs)
    run = kd.train(
        model_kind, train, val_pairs, bank, opt,
        workdir=workdir, seed=seed,
        teacher_weights=teacher_weights,
        teacher_config=teacher_config_from(cfg),
        student_config=student_config_from(cfg),
        resume_from=resume,
        ranges=ranges,
        enforce_ranges=not allow_out_of_range,
        quiet=not verbose,
    )
    summary = {
        "model": model_kind,
        "epochs_run": len(run.epoch_logs),
        "best_epoch": run.best_epoch,
        "best_val_mae": run.best_val_mae,
        "checkpoint": str(Path(run.checkpoint_path).name),
        "seed": seed,
    }
    write_json(workdir / f"{model_kind}_summary.json", summary)
    write_sidecar(workdir / f"{model_kind}_summary.json", model_kind)
    click.echo(json.dumps(summary, sort_keys=True))


def train_options(fn):
    fn = click.option("--train", "train_path", type=click.Path(exists=True), default=None,
                      help="Clean training segments JSONL (default workdir/train.jsonl).")(fn)
    fn = click.option("--val", "val_path", type=click.Path(exists=True), default=None,
                      help="Clean validation segments JSONL (default workdir/val.jsonl).")(fn)
    fn = click.option("--bank", "bank_path", type=click.Path(exists=True), default=None,
                      help="Artifact bank JSONL (default workdir/bank.jsonl).")(fn)
    fn = click.option("--epochs", type=int, default=None, help="Override config epochs.")(fn)
    fn = click.option("--resume", type=click.Path(exists=True), default=None,
                      help="Resume state (.npz) from a previous run.")(fn)
    fn = click.option("--allow-out-of-range", is_flag=True, default=False)(fn)
    fn = click.option("--verbose", is_flag=True, default=False)(fn)
    return fn


@main.command("train-teacher")
@common_options
@train_options
@handle_errors
def train_teacher(config_path, workdir, seed, train_path, val_path, bank_path, epochs,
                  resume, allow_out_of_range, verbose):
    """Train the teacher with reconstruction loss."""
    _train_command("teacher", config_path, workdir, seed, train_path, val_path,
                   bank_path, epochs, None, allow_out_of_range, resume, verbose)


@main.command("distill")
@common_options
@train_options
@click.option("--teacher-weights", type=click.Path(exists=True), default=None,
              help="Frozen teacher checkpoint (default workdir/teacher_best.edaw).")
@click.option("--no-kd", is_flag=True, default=False,
              help="Train the student without distillation.")
@handle_errors
def distill_cmd(config_path, workdir, seed, train_path, val_path, bank_path, epochs,
                resume, allow_out_of_range, verbose, teacher_weights, no_kd):
    """Train the student, by default under knowledge distillation."""
    if no_kd:
        _train_command("student", config_path, workdir, seed, train_path, val_path,
                       bank_path, epochs, None, allow_out_of_range, resume, verbose)
        return
    teacher_weights = teacher_weights or str(Path(workdir) / "teacher_best.edaw")
    if not Path(teacher_weights).exists():
        raise ConfigError(f"teacher weights not found: {teacher_weights}")
    _train_command("student_kd", config_path, workdir, seed, train_path, val_path,
                   bank_path, epochs, teacher_weights, allow_out_of_range, resume, verbose)


# ---------------------------------------------------------------------------


def _build_and_load(weights, model, cfg):
    teacher_cfg = teacher_config_from(cfg)
    if model == "teacher":
        net = models.build_teacher(teacher_cfg)
    else:
        net = models.build_student(student_config_from(cfg))
    return models.load_model(weights, net)


@main.command()
@common_options
@click.option("--weights", required=True, type=click.Path(), help="Weight archive.")
@click.option("--model", type=click.Choice(["teacher", "student"]), default="student",
              show_default=True)
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="Segments JSONL or continuous CSV signal.")
@click.option("--targets", "targets_path", type=click.Path(exists=True), default=None,
              help="Clean targets JSONL aligned with the input segments.")
@click.option("--output", default="denoised.jsonl", show_default=True)
@handle_errors
def denoise(config_path, workdir, seed, weights, model, input_path, targets_path, output):
    """Denoise segments with a trained model; report metrics when targets exist."""
    cfg = load_config(config_path)
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    if not Path(weights).exists():
        raise ConfigError(f"weights file not found: {weights}")
    net = _build_and_load(weights, model, cfg)

    if str(input_path).endswith(".csv"):
        signal = sio.read_signal_csv(input_path)
        if signal.rate_hz > sio.SEGMENT_RATE_HZ:
            signal = sio.downsample(signal, sio.SEGMENT_RATE_HZ)
        segments = sio.window(signal, overlap_fraction=0.0)
    else:
        segments = sio.read_segments_jsonl(input_path)
    if not segments:
        raise ConfigError(f"{input_path}: no full segments to denoise")

    denoised = [models.denoise(net, seg) for seg in segments]
    out_path = workdir / output
    sio.write_segments_jsonl(out_path, denoised)
    write_sidecar(out_path, "denoise")

    payload = {"segments": len(denoised), "model": model}
    if targets_path:
        targets = sio.read_segments_jsonl(targets_path)
        if len(targets) != len(segments):
            raise ConfigError(
                f"targets count {len(targets)} != input count {len(segments)}"
            )
        rows = []
        for noisy, clean, est in zip(segments, targets, denoised):
            m = ev.recon_metrics(noisy.samples, clean.samples, est.samples)
            rows.append(m.to_dict())
        payload["per_segment"] = rows
        payload["mean"] = {
            key: float(np.mean([r[key] for r in rows]))
            for key in ("mae", "rmse", "pcc", "snr_imp_db")
        }
        write_json(workdir / (Path(output).stem + "_metrics.json"), payload)
    click.echo(json.dumps({k: payload[k] for k in ("segments", "model")}, sort_keys=True))


@main.command()
@common_options
@click.option("--output", default="profile.json", show_default=True)
@handle_errors
def profile(config_path, workdir, seed, output):
    """Complexity report for the teacher and student (Parameters/Size/MACs/FLOPs)."""
    cfg = load_config(config_path)
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    reports = {
        "teacher": models.profile(models.build_teacher(teacher_config_from(cfg))),
        "student": models.profile(models.build_student(student_config_from(cfg))),
    }
    payload = {name: rep.to_dict() for name, rep in reports.items()}
    write_json(workdir / output, payload)
    write_sidecar(workdir / output, "profile")

    header = f"{'Model':<10} {'Parameters (M)':>15} {'Size (MB)':>10} {'MACs (M)':>10} {'FLOPs (M)':>10}"
    click.echo(header)
    for name, rep in reports.items():
        click.echo(
            f"{name:<10} {rep.param_count / 1e6:>15.3f} {rep.size_mb:>10.2f} "
            f"{rep.macs / 1e6:>10.2f} {rep.flops / 1e6:>10.2f}"
        )


@main.command()
@common_options
@click.option("--cohort", "cohort_path", required=True, type=click.Path(exists=True))
@click.option("--teacher-weights", type=click.Path(exists=True), default=None)
@click.option("--student-weights", type=click.Path(exists=True), default=None)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--output", default="evaluation.json", show_default=True)
@handle_errors
def evaluate(config_path, workdir, seed, cohort_path, teacher_weights, student_weights,
             jobs, output):
    """LOSO event-prediction comparison across denoising variants."""
    cfg = load_config(config_path)
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    recordings = ev.read_cohort_jsonl(cohort_path)

    variants = {"no_denoise": None, "exp_filter": "exp"}
    nets = {}
    if student_weights:
        nets["student"] = _build_and_load(student_weights, "student", cfg)
        variants["student"] = "student"
    if teacher_weights:
        nets["teacher"] = _build_and_load(teacher_weights, "teacher", cfg)
        variants["teacher"] = "teacher"

    def transform_for(tag):
        if tag is None:
            return None
        if tag == "exp":
            return lambda seg: seg.copy(samples=ev.exp_filter(seg.samples, alpha=0.8))
        net = nets[tag]
        return lambda seg: models.denoise(net, seg)

    results = {}
    audit_rows = []
    for name in sorted(variants):
        transform = transform_for(variants[name])

        def score_one(rec):
            return ev.score_recording(rec, transform)

        if jobs > 1 and variants[name] in (None, "exp"):
            with ThreadPoolExecutor(max_workers=jobs) as pool_exec:
                scored = list(pool_exec.map(score_one, recordings))
        else:
            scored = [score_one(rec) for rec in recordings]
        result = ev.loso_evaluate(scored)
        results[name] = result.to_dict()
        for held_out, used in sorted(result.fold_audit.items()):
            audit_rows.append(
                json.dumps(
                    {"variant": name, "held_out": held_out, "threshold_subjects": used},
                    sort_keys=True,
                )
            )

    out_path = workdir / output
    write_json(out_path, results)
    write_sidecar(out_path, "evaluate")
    csv_path = workdir / (Path(output).stem + ".csv")
    with open(csv_path, "w") as fh:
        fh.write("variant,auroc,sensitivity,specificity,accuracy,threshold_mean,lead_median_min\n")
        for name in sorted(results):
            r = results[name]
            lead = "" if r["lead_median_min"] is None else f"{r['lead_median_min']:.4f}"
            fh.write(
                f"{name},{r['auroc']:.6f},{r['sensitivity']:.6f},{r['specificity']:.6f},"
                f"{r['accuracy']:.6f},{r['threshold_mean']:.6f},{lead}\n"
            )
    (workdir / (Path(output).stem + "_folds.jsonl")).write_text(
        "\n".join(audit_rows) + ("\n" if audit_rows else "")
    )
    click.echo(json.dumps({name: results[name]["auroc"] for name in sorted(results)}, sort_keys=True))


if __name__ == "__main__":
    main()

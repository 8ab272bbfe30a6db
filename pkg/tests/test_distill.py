"""Loss definitions and the training loop (smoke-scale models)."""

import json

import numpy as np
import pytest

import edakit.distill as distill
from edakit import augment
from edakit import signal_io as sio
from edakit.engine import OptimizerConfig, Tensor, ops
from edakit.errors import ConfigError
from edakit.models import StudentConfig, TeacherConfig, build_student, build_teacher, load_weights


TINY_TEACHER = TeacherConfig(encoder_channels=(8, 8, 8, 16, 16))


def tiny_student():
    return StudentConfig(teacher=TINY_TEACHER)


def make_dataset(n_train=16, n_val=6, seed=0):
    segs = []
    for i in range(n_train + n_val):
        cfg = sio.SynthConfig(duration_s=128.0, scr_rate_per_min=4.0, seed=seed * 1000 + i)
        sig = sio.synthesize_eda(cfg, subject_id=f"s{i % 4}")
        segs.append(sio.Segment(samples=sig.samples[:512], subject_id=sig.subject_id))
    bank = augment.synthesize_ma_bank(size=8, seed=seed)
    train = segs[:n_train]
    val_pool = segs[n_train:]
    val_pairs, _ = augment.make_static_pairs(val_pool, bank, seed=seed + 1)
    return train, val_pairs, bank


@pytest.fixture(scope="module")
def dataset():
    return make_dataset()


class TestTeacherLoss:
    def test_equal_inputs_zero(self, rng):
        x = Tensor(rng.standard_normal((1, 512)))
        assert distill.loss_teacher(x, Tensor(x.data.copy())).item() == 0.0

    def test_unit_offset_is_one(self, rng):
        x = rng.standard_normal((1, 512))
        loss = distill.loss_teacher(Tensor(x + 1.0), Tensor(x))
        assert abs(loss.item() - 1.0) < 1e-12

    def test_matches_direct_recomputation(self, rng):
        a = rng.standard_normal((1, 512))
        b = rng.standard_normal((1, 512))
        expected = float(np.mean((a - b) ** 2))
        assert abs(distill.loss_teacher(Tensor(a), Tensor(b)).item() - expected) < 1e-12


class TestStudentLoss:
    def _projections(self, rng, zero=False):
        proj = distill.ProjectionSet((4, 4), (8, 8), rng)
        if zero:
            for p in proj.parameters():
                p.data = np.zeros_like(p.data)
        return proj

    def test_perfect_match_is_zero(self, rng):
        proj = self._projections(rng)
        y = Tensor(rng.standard_normal((1, 64)))
        taps_t = {1: Tensor(rng.standard_normal((8, 32))), 2: Tensor(rng.standard_normal((8, 16)))}
        taps_s = {1: Tensor(rng.standard_normal((4, 32))), 2: Tensor(rng.standard_normal((4, 16)))}
        # make the projected taps match exactly by copying them through
        class Echo:
            def apply(self, i, tap):
                return taps_t[i]

        total, breakdown = distill.loss_student(y, y, Tensor(y.data.copy()), taps_s, taps_t, Echo())
        assert breakdown.total == 0.0

    def test_zero_taps_zero_projections(self, rng):
        proj = self._projections(rng, zero=True)
        y = Tensor(np.zeros((1, 16)))
        taps_t = {1: Tensor(rng.standard_normal((8, 8))), 2: Tensor(rng.standard_normal((8, 4)))}
        taps_s = {1: Tensor(np.zeros((4, 8))), 2: Tensor(np.zeros((4, 4)))}
        _, breakdown = distill.loss_student(y, y, y, taps_s, taps_t, proj)
        expected = float(np.mean(taps_t[1].data**2) + np.mean(taps_t[2].data**2))
        assert abs(breakdown.feature - expected) < 1e-12

    def test_composition_from_independent_terms(self, rng):
        proj = self._projections(rng)
        y = Tensor(rng.standard_normal((2, 1, 32)))
        yhat_s = Tensor(rng.standard_normal((2, 1, 32)))
        yhat_t = Tensor(rng.standard_normal((2, 1, 32)))
        taps_s = {1: Tensor(rng.standard_normal((2, 4, 16))), 2: Tensor(rng.standard_normal((2, 4, 8)))}
        taps_t = {1: Tensor(rng.standard_normal((2, 8, 16))), 2: Tensor(rng.standard_normal((2, 8, 8)))}
        total, breakdown = distill.loss_student(y, yhat_s, yhat_t, taps_s, taps_t, proj)
        a = float(np.mean((yhat_s.data - y.data) ** 2))
        b = float(np.mean((yhat_s.data - yhat_t.data) ** 2))
        c = 0.0
        for i in (1, 2):
            projected = proj.apply(i, taps_s[i])
            c += float(np.mean((taps_t[i].data - projected.data) ** 2))
        assert abs(breakdown.total - (0.5 * a + 0.5 * (b + 0.3 * c))) < 1e-10
        assert breakdown.composition_error() <= 1e-10


class TestTrainLoop:
    def test_smoke_run(self, dataset, tmp_path):
        train, val_pairs, bank = dataset
        cfg = OptimizerConfig(epochs=2, batch_size=8)
        run = distill.train(
            "teacher", train, val_pairs, bank, cfg,
            workdir=tmp_path, seed=3, teacher_config=TINY_TEACHER,
        )
        assert len(run.epoch_logs) == 2
        assert all(np.isfinite(row["train_total"]) for row in run.epoch_logs)
        assert (tmp_path / "teacher_best.edaw").exists()
        log_lines = (tmp_path / "teacher_log.jsonl").read_text().strip().split("\n")
        assert len(log_lines) == 2
        parsed = json.loads(log_lines[0])
        assert set(parsed) == {
            "epoch", "lr", "train_total", "train_recon",
            "train_response", "train_feature", "val_mae", "val_snr_imp",
        }

    def test_deterministic_replay(self, dataset, tmp_path):
        train, val_pairs, bank = dataset
        cfg = OptimizerConfig(epochs=2, batch_size=8)
        run_a = distill.train(
            "student", train, val_pairs, bank, cfg,
            workdir=tmp_path / "a", seed=5, teacher_config=TINY_TEACHER,
            student_config=tiny_student(),
        )
        run_b = distill.train(
            "student", train, val_pairs, bank, cfg,
            workdir=tmp_path / "b", seed=5, teacher_config=TINY_TEACHER,
            student_config=tiny_student(),
        )
        assert run_a.loss_sequence == run_b.loss_sequence

    def test_teacher_frozen_during_distillation(self, dataset, tmp_path):
        train, val_pairs, bank = dataset
        cfg = OptimizerConfig(epochs=1, batch_size=8)
        distill.train(
            "teacher", train, val_pairs, bank, cfg,
            workdir=tmp_path, seed=1, teacher_config=TINY_TEACHER,
        )
        teacher_path = tmp_path / "teacher_best.edaw"
        before = teacher_path.read_bytes()
        distill.train(
            "student_kd", train, val_pairs, bank, cfg,
            workdir=tmp_path, seed=1, teacher_weights=teacher_path,
            teacher_config=TINY_TEACHER, student_config=tiny_student(),
        )
        assert teacher_path.read_bytes() == before

    def test_resume_replays_next_epoch(self, dataset, tmp_path):
        train, val_pairs, bank = dataset
        cfg = OptimizerConfig(epochs=3, batch_size=8)
        full = distill.train(
            "student", train, val_pairs, bank, cfg,
            workdir=tmp_path / "full", seed=7, teacher_config=TINY_TEACHER,
            student_config=tiny_student(),
        )
        distill.train(
            "student", train, val_pairs, bank, cfg,
            workdir=tmp_path / "part", seed=7, teacher_config=TINY_TEACHER,
            student_config=tiny_student(), stop_after=2,
        )
        resumed = distill.train(
            "student", train, val_pairs, bank, cfg,
            workdir=tmp_path / "resumed", seed=7, teacher_config=TINY_TEACHER,
            student_config=tiny_student(),
            resume_from=tmp_path / "part" / "student_resume.npz",
        )
        assert len(resumed.epoch_logs) == 1
        assert abs(resumed.epoch_logs[0]["train_total"] - full.epoch_logs[2]["train_total"]) < 1e-9

    def test_kd_path_purely_additive(self, dataset, tmp_path, monkeypatch):
        train, val_pairs, bank = dataset
        cfg = OptimizerConfig(epochs=2, batch_size=8)
        distill.train(
            "teacher", train, val_pairs, bank, OptimizerConfig(epochs=1, batch_size=8),
            workdir=tmp_path, seed=2, teacher_config=TINY_TEACHER,
        )
        plain = distill.train(
            "student", train, val_pairs, bank, cfg,
            workdir=tmp_path / "plain", seed=2, teacher_config=TINY_TEACHER,
            student_config=tiny_student(),
        )
        monkeypatch.setattr(distill, "KD_WEIGHT", 0.0)
        zeroed = distill.train(
            "student_kd", train, val_pairs, bank, cfg,
            workdir=tmp_path / "zeroed", seed=2,
            teacher_weights=tmp_path / "teacher_best.edaw",
            teacher_config=TINY_TEACHER, student_config=tiny_student(),
        )
        assert np.allclose(plain.loss_sequence, zeroed.loss_sequence, atol=1e-12)

    def test_best_checkpoint_tracks_min_val_mae(self, dataset, tmp_path):
        train, val_pairs, bank = dataset
        cfg = OptimizerConfig(epochs=3, batch_size=8)
        run = distill.train(
            "student", train, val_pairs, bank, cfg,
            workdir=tmp_path, seed=9, teacher_config=TINY_TEACHER,
            student_config=tiny_student(),
        )
        maes = [row["val_mae"] for row in run.epoch_logs]
        assert run.best_epoch == int(np.argmin(maes))
        assert run.best_val_mae == min(maes)

    def test_kd_requires_teacher_weights(self, dataset, tmp_path):
        train, val_pairs, bank = dataset
        with pytest.raises(ConfigError):
            distill.train(
                "student_kd", train, val_pairs, bank,
                OptimizerConfig(epochs=1, batch_size=8), workdir=tmp_path, seed=0,
            )

    def test_composition_identity_on_logged_batches(self, dataset, tmp_path):
        train, val_pairs, bank = dataset
        cfg = OptimizerConfig(epochs=1, batch_size=8)
        distill.train(
            "teacher", train, val_pairs, bank, cfg,
            workdir=tmp_path, seed=4, teacher_config=TINY_TEACHER,
        )
        run = distill.train(
            "student_kd", train, val_pairs, bank, cfg,
            workdir=tmp_path, seed=4, teacher_weights=tmp_path / "teacher_best.edaw",
            teacher_config=TINY_TEACHER, student_config=tiny_student(),
        )
        # the loop itself asserts the identity per batch; spot check the log
        row = run.epoch_logs[0]
        assert row["train_response"] > 0.0
        assert row["train_feature"] > 0.0

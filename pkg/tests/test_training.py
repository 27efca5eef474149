"""Tests for checkpoints, the training loop and split evaluation."""

from pathlib import Path

import pytest
import torch

from textvideo_grounding.exceptions import (
    CheckpointError,
    ConfigMismatchError,
    DatasetError,
    TrainingDivergedError,
)
from textvideo_grounding.metrics import TOP_1X1, TOP_5X5
from textvideo_grounding.objective import LossConfig
from textvideo_grounding.synth import Split, generate_episodes
from textvideo_grounding.training import (
    BEST_NAME,
    LAST_NAME,
    Trainer,
    evaluate_split,
    load_checkpoint,
    predict_episodes,
    save_checkpoint,
)

from .conftest import box, make_episode, small_run_config, small_synth_config


def _split(name: str, n: int, seed: int) -> Split:
    episodes = generate_episodes(small_synth_config(), n, seed)
    return Split(Path(name), {"name": name}, episodes)


@pytest.fixture
def train_split() -> Split:
    return _split("train", 8, seed=1)


@pytest.fixture
def val_split() -> Split:
    return _split("val", 3, seed=2)


def _params(model) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


class TestCheckpoints:
    def test_round_trip_gives_identical_predictions(self, tmp_path, train_split, val_split):
        trainer = Trainer(small_run_config(), train_split, val_split)
        trainer.step()
        path = save_checkpoint(trainer.checkpoint(), tmp_path / "ckpt.pt")
        model = load_checkpoint(path, expected_hash=trainer.hash).build_model()
        before = predict_episodes(trainer.model, val_split.episodes, batch_size=2)
        after = predict_episodes(model, val_split.episodes, batch_size=2)
        assert [p.answer for p in before.values()] == [p.answer for p in after.values()]
        assert [p.grounding for p in before.values()] == [p.grounding for p in after.values()]

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.pt")

    def test_unknown_version(self, tmp_path, train_split):
        ckpt = Trainer(small_run_config(), train_split).checkpoint()
        ckpt.format_version = 99
        save_checkpoint(ckpt, tmp_path / "old.pt")
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "old.pt")

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.pt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_hash_mismatch(self, tmp_path, train_split):
        trainer = Trainer(small_run_config(), train_split)
        save_checkpoint(trainer.checkpoint(), tmp_path / "c.pt")
        with pytest.raises(ConfigMismatchError):
            load_checkpoint(tmp_path / "c.pt", expected_hash="0" * 16)

    def test_restore_rejects_other_config(self, train_split):
        ckpt = Trainer(small_run_config(), train_split).checkpoint()
        other = small_run_config()
        other.grounding.k1 = 3
        with pytest.raises(ConfigMismatchError):
            Trainer(other, train_split).restore(ckpt)


class TestTrainer:
    def test_empty_training_split(self):
        with pytest.raises(DatasetError):
            Trainer(small_run_config(), Split(Path("train"), {}, []))

    def test_batches_cycle_through_epochs(self, train_split):
        trainer = Trainer(small_run_config(batch_size=3), train_split)
        seen = [ep.id for _ in range(8) for ep in trainer.next_batch()]
        assert len(seen) == 24
        assert sorted(seen[:8]) == sorted(ep.id for ep in train_split.episodes)

    def test_fit_writes_checkpoints(self, tmp_path, train_split, val_split):
        trainer = Trainer(small_run_config(), train_split, val_split)
        result = trainer.fit(tmp_path)
        assert result.iterations == 6
        assert (tmp_path / BEST_NAME).exists() and (tmp_path / LAST_NAME).exists()
        assert load_checkpoint(result.last_path).iteration == 6
        assert 0.0 <= result.best_acc <= 100.0
        evals = [h for h in result.history if "val" in h]
        assert [h["iteration"] for h in evals] == [3, 6]
        losses = [h for h in result.history if "bce" in h]
        assert len(losses) == 6

    def test_fit_without_validation(self, tmp_path, train_split):
        result = Trainer(small_run_config(), train_split).fit(tmp_path, max_iterations=2)
        assert result.iterations == 2
        assert load_checkpoint(result.best_path).iteration == 2

    def test_zero_iterations_still_saves(self, tmp_path, train_split):
        result = Trainer(small_run_config(max_iterations=0), train_split).fit(tmp_path)
        assert result.iterations == 0
        assert result.last_path.exists()

    def test_resume_is_deterministic(self, tmp_path, train_split, val_split):
        cfg = small_run_config()
        straight = Trainer(cfg, train_split, val_split)
        straight.fit(tmp_path / "straight")

        Trainer(cfg, train_split, val_split).fit(tmp_path / "resumed", max_iterations=3)
        resumed = Trainer(cfg, train_split, val_split)
        resumed.fit(tmp_path / "resumed", resume=True)

        assert resumed.iteration == straight.iteration == 6
        a, b = _params(straight.model), _params(resumed.model)
        assert a.keys() == b.keys()
        assert all(torch.equal(a[k], b[k]) for k in a)
        assert resumed.history == straight.history

    def test_divergence_detected(self, train_split, monkeypatch):
        trainer = Trainer(small_run_config(), train_split)
        original = trainer.model.compute_losses

        def poisoned(*args, **kwargs):
            losses = original(*args, **kwargs)
            losses.total = losses.total * float("nan")
            return losses

        monkeypatch.setattr(trainer.model, "compute_losses", poisoned)
        with pytest.raises(TrainingDivergedError) as exc:
            trainer.step()
        assert exc.value.iteration == 0
        assert trainer.iteration == 0

    def test_learning_rate_schedule(self, train_split):
        trainer = Trainer(small_run_config(milestones=(2, 4), gamma=0.5), train_split)
        lrs = []
        for _ in range(5):
            trainer.step()
            lrs.append(trainer.scheduler.get_last_lr()[0])
        assert lrs == pytest.approx([1e-3, 5e-4, 5e-4, 2.5e-4, 2.5e-4])

    def test_overfits_single_episode(self):
        tokens = []
        for t in range(4):
            tokens.append((t, 1, "stop", box(0.4, 0.4, 0.5, 0.45)))
            tokens.append((t, 2, "exit", box(0.05, 0.05, 0.15, 0.1)))
        ep = make_episode(tokens, num_frames=4)
        split = Split(Path("mem"), {"name": "train"}, [ep])
        cfg = small_run_config(lr=5e-3, batch_size=1, max_iterations=300)
        cfg.loss = LossConfig(lam=0.0)
        trainer = Trainer(cfg, split)
        bce = [trainer.step().bce.item() for _ in range(300)]
        assert sum(bce[-10:]) / 10 < 0.05
        assert trainer.model.predict([ep])[0].answer == "stop"


class TestEvaluateSplit:
    def test_reports_per_regime(self, train_split, val_split):
        trainer = Trainer(small_run_config(), train_split)
        preds, reports = evaluate_split(trainer.model, val_split, [TOP_1X1, TOP_5X5], 2)
        assert set(preds) == {ep.id for ep in val_split.episodes}
        assert set(reports) == {TOP_1X1, TOP_5X5}
        for tau in (0.3, 0.5):
            assert reports[TOP_5X5].iou_hit_rate[tau] >= reports[TOP_1X1].iou_hit_rate[tau]

"""End-to-end training runs on the separable synthetic benchmark.

These train real models for thousands of iterations and are deselected by
default; run them with ``pytest -m slow``.
"""

import dataclasses
from pathlib import Path

import pytest

from textvideo_grounding.config import RunConfig, load_config
from textvideo_grounding.metrics import TOP_1X1, MetricReport
from textvideo_grounding.objective import LossConfig
from textvideo_grounding.synth import OcrNoise, Split, corrupt_ocr, derive_seed, generate_episodes
from textvideo_grounding.training import Trainer, evaluate_split

pytestmark = pytest.mark.slow

BENCHMARK = Path(__file__).parent.parent / "configs" / "benchmark.yaml"


def _config(**synth) -> RunConfig:
    cfg = load_config(BENCHMARK)
    cfg.optimizer.device = "cpu"
    cfg.synth = dataclasses.replace(cfg.synth, **synth)
    return cfg


def _split(cfg: RunConfig, name: str, n: int, index: int) -> Split:
    episodes = generate_episodes(cfg.synth, n, derive_seed(cfg.seed, index))
    return Split(Path(name), {"name": name}, episodes)


def _train(cfg: RunConfig, train: Split, iterations: int) -> Trainer:
    trainer = Trainer(cfg, train)
    for _ in range(iterations):
        trainer.step()
    return trainer


def _report(trainer: Trainer, test: Split) -> MetricReport:
    _, reports = evaluate_split(trainer.model, test, [TOP_1X1], batch_size=32)
    return reports[TOP_1X1]


class TestSeparableBenchmark:
    def test_reaches_target_accuracy_and_grounding(self):
        cfg = _config()
        train, test = _split(cfg, "train", 500, 0), _split(cfg, "test", 100, 2)
        report = _report(_train(cfg, train, cfg.optimizer.max_iterations), test)
        assert report.acc >= 90.0
        assert report.iou_hit_rate[0.5] >= 90.0


class TestAblationDirection:
    ITERATIONS = 1500

    def _medium(self, seed: int, **grounding) -> tuple[RunConfig, Split, Split]:
        cfg = _config(signal=3.0)
        cfg.seed = seed
        cfg.grounding = dataclasses.replace(cfg.grounding, **grounding)
        return cfg, _split(cfg, "train", 500, 0), _split(cfg, "test", 100, 2)

    def test_contrastive_loss_improves_grounding(self):
        gaps = []
        for seed in (0, 1, 2):
            cfg, train, test = self._medium(seed)
            with_cons = _report(_train(cfg, train, self.ITERATIONS), test)
            cfg.loss = LossConfig(tau=cfg.loss.tau, lam=0.0)
            without = _report(_train(cfg, train, self.ITERATIONS), test)
            gaps.append(with_cons.iou_hit_rate[0.5] - without.iou_hit_rate[0.5])
        assert sum(gaps) / len(gaps) >= 10.0

    @pytest.mark.parametrize("disabled", ["temporal", "spatial"])
    def test_grounding_stages_improve_gqa(self, disabled):
        cfg, train, test = self._medium(0)
        full = _report(_train(cfg, train, self.ITERATIONS), test)
        if disabled == "temporal":
            cfg.grounding.k1 = cfg.synth.num_frames
        else:
            cfg.grounding.k2 = cfg.synth.max_tokens_per_frame
        ablated = _report(_train(cfg, train, self.ITERATIONS), test)
        assert ablated.gqa[0.5] < full.gqa[0.5]


class TestOcrNoiseSweep:
    def test_accuracy_drops_while_grounding_holds(self):
        cfg = _config()
        train, test = _split(cfg, "train", 500, 0), _split(cfg, "test", 100, 2)
        trainer = _train(cfg, train, cfg.optimizer.max_iterations)

        reports = []
        for rate in (0.0, 0.2, 0.5):
            noise = OcrNoise(char_sub_rate=rate)
            noisy = [
                corrupt_ocr(ep, noise, derive_seed(cfg.seed + 7, i))[0]
                for i, ep in enumerate(test.episodes)
            ]
            reports.append(_report(trainer, Split(Path("test"), {"name": "test"}, noisy)))

        accs = [r.acc for r in reports]
        assert accs == sorted(accs, reverse=True)
        hits = [r.iou_hit_rate[0.5] for r in reports]
        assert all(abs(h - hits[0]) <= 3.0 for h in hits)

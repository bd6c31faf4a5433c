"""Training loop, dataset construction and model evaluation."""

import csv
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .bev_init import query_hits
from .config import Config
from .detector import Detector, LossReport, TrainSample, load_checkpoint, save_checkpoint, train_step
from .exceptions import ProjdetError
from .metrics import EvalReport, evaluate
from .optim import AdamW
from .synth import Frame, Scene, make_frame, training_scenes
from .temporal import SequenceRunner, sample_training_pair

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "total", "cls", "reg", "heatmap", "grad_norm")


def build_detector(config: Config) -> Detector:
    """Model with weights drawn from ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    return Detector(config.model, config.grid.to_spec(), config.rig.feature_channels, rng, config.temporal)


class SceneDataset:
    """
    Scenes generated from consecutive seeds with lazily rendered, cached frames.

    Args:
        config: Source of grid, rig, scene and rendering settings
        count: Number of scenes
        seed: Seed of the first scene
    """

    def __init__(self, config: Config, count: int, seed: int):
        self.config = config
        self.spec = config.grid.to_spec()
        rig = config.rig.build()
        self.scenes: List[Scene] = training_scenes(config.scene.to_spec(seed), self.spec, count, rig)
        self._frames: Dict[tuple, Frame] = {}

    @classmethod
    def from_scenes(cls, config: Config, scenes: Sequence[Scene]) -> "SceneDataset":
        dataset = cls(config, 0, config.seed)
        dataset.scenes = list(scenes)
        return dataset

    def __len__(self) -> int:
        return len(self.scenes)

    def timestamps(self, scene_index: int) -> np.ndarray:
        return self.scenes[scene_index].times()

    def frame(self, scene_index: int, frame_index: int) -> Frame:
        key = (scene_index, frame_index)
        if key not in self._frames:
            scene = self.scenes[scene_index]
            t = scene.times()[frame_index]
            rig = self.config.rig
            self._frames[key] = make_frame(scene, t, self.spec, tuple(rig.feature_size), rig.feature_channels,
                                           self.config.model.n_classes)
        return self._frames[key]

    def sequence(self, scene_index: int) -> List[Frame]:
        return [self.frame(scene_index, i) for i in range(len(self.timestamps(scene_index)))]


class Trainer:
    """
    Trains a detector on generated scenes.

    Args:
        config: Full configuration
        out_dir: Where ``loss.csv`` and checkpoints go; nothing is written when None
        detector: Existing model to continue training
    """

    def __init__(self, config: Config, out_dir: Optional[str] = None, detector: Optional[Detector] = None):
        self.config = config
        self.out_dir = out_dir
        self.detector = detector or build_detector(config)
        self.dataset = SceneDataset(config, config.train.n_scenes, config.seed)
        train = config.train
        self.optimizer = AdamW(self.detector.parameters(), lr=train.effective_lr(config.model.channels),
                               weight_decay=train.weight_decay, max_grad_norm=train.grad_clip)
        self._rng = np.random.default_rng(config.seed + 1)
        self.history: List[LossReport] = []

    def sample_batch(self) -> List[TrainSample]:
        batch = []
        for _ in range(self.config.train.batch_size):
            scene_index = int(self._rng.integers(len(self.dataset)))
            times = self.dataset.timestamps(scene_index)
            frame_index = int(self._rng.integers(len(times)))
            past = None
            if self.config.temporal.enabled:
                past_index = sample_training_pair(times, frame_index, self._rng, self.config.temporal.train_window)
                if past_index is not None:
                    past = self.dataset.frame(scene_index, past_index)
            batch.append(TrainSample(self.dataset.frame(scene_index, frame_index), past))
        return batch

    def run(self, steps: Optional[int] = None) -> List[LossReport]:
        """
        Train for ``steps`` optimizer steps (default ``train.steps``).

        Returns:
            One LossReport per step
        """
        steps = self.config.train.steps if steps is None else steps
        train = self.config.train
        if self.out_dir:
            os.makedirs(self.out_dir, exist_ok=True)
        start = len(self.history)
        for step in range(start, start + steps):
            report = train_step(self.detector, self.sample_batch(), self.optimizer, step)
            self.history.append(report)
            if train.log_every and (step + 1) % train.log_every == 0:
                logger.info("step %d loss %.4f (cls %.4f reg %.4f heatmap %.4f) grad norm %.3f", step + 1,
                            report.total, report.components.get("cls", 0.0), report.components.get("reg", 0.0),
                            report.components.get("heatmap", 0.0), report.grad_norm)
            if self.out_dir and train.checkpoint_every and (step + 1) % train.checkpoint_every == 0:
                self.save(os.path.join(self.out_dir, f"checkpoint-{step + 1:06d}"))
        if self.out_dir:
            write_loss_csv(os.path.join(self.out_dir, "loss.csv"), self.history)
            self.save(os.path.join(self.out_dir, "checkpoint"))
        return self.history

    def save(self, directory: str) -> str:
        return save_checkpoint(self.detector, directory, self.config.fingerprint(),
                               {"steps": len(self.history), "preset": self.config.preset})


def write_loss_csv(path: str, history: Sequence[LossReport]) -> str:
    try:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(LOSS_COLUMNS)
            for report in history:
                c = report.components
                writer.writerow([report.step, repr(report.total), repr(c.get("cls", 0.0)), repr(c.get("reg", 0.0)),
                                 repr(c.get("heatmap", 0.0)), repr(report.grad_norm)])
    except IOError as e:
        raise ProjdetError(f"Failed to write loss trace {path}: {str(e)}")
    return path


def load_detector(config: Config, checkpoint: str, check_fingerprint: bool = True) -> Detector:
    detector = build_detector(config)
    load_checkpoint(detector, checkpoint, config.fingerprint() if check_fingerprint else None)
    return detector


@dataclass
class Predictions:
    """Per-frame predictions, ground truth and heatmap selections of an evaluation run."""

    preds: List[list]
    gts: List[list]
    query_hits: int
    query_total: int


def predict_dataset(detector: Detector, dataset: SceneDataset, interval: Optional[float] = None,
                    score_floor: float = 0.0) -> Predictions:
    """Run every scene as a sequence with the memory bank and collect final-layer boxes."""
    temporal = detector.temporal
    interval = temporal.interval if interval is None else interval
    preds, gts = [], []
    hits_total, gt_total = 0, 0
    for scene_index in range(len(dataset)):
        frames = dataset.sequence(scene_index)
        runner = SequenceRunner(detector, interval, temporal.enabled, temporal.capacity, temporal.horizon)
        for frame, output in zip(frames, runner.run(frames)):
            preds.append([box for box in output.final.boxes() if box.score >= score_floor])
            gts.append(frame.boxes)
            hits, total = query_hits(output.selections, frame.boxes, detector.spec)
            hits_total += hits
            gt_total += total
    return Predictions(preds, gts, hits_total, gt_total)


def evaluate_model(detector: Detector, config: Config, dataset: Optional[SceneDataset] = None,
                   interval: Optional[float] = None) -> EvalReport:
    """
    Evaluate on held-out scenes (seeded ``seed + eval.seed_offset``).

    The report's extras carry the heatmap query recall.
    """
    dataset = dataset or SceneDataset(config, config.eval.n_scenes, config.seed + config.eval.seed_offset)
    result = predict_dataset(detector, dataset, interval, config.eval.score_floor)
    report = evaluate(result.preds, result.gts, config.eval.thresholds, config.eval.class_aware)
    report.extras["query_recall"] = result.query_hits / result.query_total if result.query_total else 1.0
    report.extras["frames"] = float(len(result.gts))
    logger.info("AP@2m %.3f ATE %.3f AVE %.3f recall %.3f query recall %.3f",
                report.ap_at_thresholds.get(2.0, 0.0), report.mean_ate, report.mean_ave, report.recall,
                report.extras["query_recall"])
    return report

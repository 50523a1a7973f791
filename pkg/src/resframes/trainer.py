"""Cross-entropy training with SGD, step learning-rate decay and JSON-lines logs."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .clip_pipeline import AugmentConfig, VideoDataset, make_batch, sample_seed
from .tensor_engine import sgd_step, softmax_cross_entropy

log = logging.getLogger(__name__)

MODES = ("scratch", "finetune")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "scratch"
    initial_lr: float = 0.1
    epochs: int = 100
    batch_size: int = 32
    milestones: tuple[int, ...] | None = None
    decay: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    clip_kind: str = "residual"
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.initial_lr < 0:
            raise ValueError("initial_lr must be nonnegative")
        if self.clip_kind not in ("rgb", "residual"):
            raise ValueError("clip_kind must be rgb or residual")
        if self.milestones is not None:
            object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))

    @property
    def schedule(self) -> tuple[int, ...]:
        """Decay epochs; defaults to 50% and 75% of the run (none before epoch 1)."""
        if self.milestones is not None:
            return self.milestones
        return tuple(m for m in (self.epochs // 2, (3 * self.epochs) // 4) if m > 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["milestones"] = list(self.milestones) if self.milestones is not None else None
        return d


PRESETS = {
    "scratch": TrainConfig(mode="scratch", initial_lr=0.1, epochs=100),
    "finetune": TrainConfig(mode="finetune", initial_lr=0.001, epochs=50),
}


def preset(name: str, **overrides) -> TrainConfig:
    return replace(PRESETS[name], **overrides)


def lr_at(epoch: int, config: TrainConfig) -> float:
    passed = sum(epoch >= m for m in config.schedule)
    return config.initial_lr * config.decay ** passed


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    top1: float
    top5: float
    lr: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _topk_hits(logits: np.ndarray, labels: np.ndarray, k: int) -> int:
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return int((order == labels[:, None]).any(axis=1).sum())


@dataclass
class Trainer:
    """Trains one network (one path) on one dataset.

    The input kind is ``frame`` for the 2D appearance net and the config's
    clip kind otherwise. Batch order and augmentation are functions of
    (seed, epoch, index) only, so results do not depend on ``workers``.
    """

    network: object
    dataset: VideoDataset
    config: TrainConfig
    aug: AugmentConfig = field(default_factory=AugmentConfig)
    log_path: str | Path | None = None
    checkpoint_path: str | Path | None = None
    run_config: dict | None = None
    start_epoch: int = 0

    @property
    def input_kind(self) -> str:
        return "frame" if self.network.config.input_kind == "frame" else self.config.clip_kind

    def run(self) -> list[EpochRecord]:
        cfg = self.config
        labels = self.dataset.labels
        if labels.size == 0:
            raise ValueError("empty dataset")
        if labels.min() < 0 or labels.max() >= self.network.num_classes:
            raise ValueError(f"labels must lie in [0, {self.network.num_classes})")
        k5 = min(5, self.network.num_classes)
        params = self.network.parameters()
        history = []
        if self.log_path is not None:
            Path(self.log_path).write_text("")
        for epoch in range(self.start_epoch, cfg.epochs):
            lr = lr_at(epoch, cfg)
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(self.dataset))
            total, hits1, hits5, seen = 0.0, 0, 0, 0
            for b, start in enumerate(range(0, len(order), cfg.batch_size)):
                idx = order[start:start + cfg.batch_size]
                seeds = [sample_seed(cfg.seed, self.aug.seed, epoch, int(i)) for i in idx]
                x, y = make_batch(self.dataset, idx, seeds, self.input_kind, self.aug,
                                  workers=cfg.workers)
                logits = self.network.forward(x, training=True)
                try:
                    loss, grad = softmax_cross_entropy(logits, y)
                except FloatingPointError as exc:
                    raise TrainingDiverged(f"non-finite logits at epoch {epoch} batch {b}, lr {lr}") from exc
                if not math.isfinite(loss):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch} batch {b}, lr {lr}")
                self.network.backward(grad)
                sgd_step(params, lr, cfg.momentum, cfg.weight_decay)
                total += loss * len(idx)
                hits1 += _topk_hits(logits, y, 1)
                hits5 += _topk_hits(logits, y, k5)
                seen += len(idx)
            rec = EpochRecord(epoch, total / seen, 100.0 * hits1 / seen, 100.0 * hits5 / seen, lr)
            history.append(rec)
            log.info("epoch %d loss %.4f top1 %.1f lr %g", epoch, rec.loss, rec.top1, lr)
            if self.log_path is not None:
                with open(self.log_path, "a", encoding="utf-8") as fh:
                    fh.write(rec.to_json() + "\n")
            if self.checkpoint_path is not None:
                save_checkpoint(self.network, self.checkpoint_path, epoch + 1, lr, self.run_config)
        return history


def train(network, dataset: VideoDataset, config: TrainConfig, aug: AugmentConfig | None = None,
          **kwargs) -> list[EpochRecord]:
    return Trainer(network, dataset, config, aug or AugmentConfig(seed=config.seed), **kwargs).run()

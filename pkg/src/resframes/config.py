"""Flat, JSON-serializable run configuration shared by every CLI command.

Precedence is built-in defaults, then a JSON file, then command-line flags.
Unknown keys are rejected at every layer.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .clip_pipeline import GEOMETRIES, AugmentConfig, ClipGeometry
from .model_zoo import ARCHS, ModelConfig
from .synthetic_data import PRESETS as SYNTH_PRESETS
from .synthetic_data import SynthConfig
from .trainer import PRESETS as TRAIN_PRESETS
from .trainer import TrainConfig


class RunConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # clip geometry: "paper" (170x128 resize, 112 crop) or "desk" (40x32, 28)
    geometry: str = "paper"
    # model
    arch: str = "micro3d"
    num_classes: int = 0  # 0: infer from the dataset labels
    delete_first_pool: bool = True
    width_multiplier: float = 1.0
    # training
    kind: str = "residual"
    preset: str = "scratch"
    epochs: int | None = None  # None: preset value
    lr: float | None = None  # None: preset value
    batch_size: int = 32
    milestones: list[int] | None = None  # None: 50% and 75% of the epochs
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    workers: int = 1
    # augmentation
    crop: str = "random"
    flip_prob: float = 0.5
    jitter_scales: list[float] = field(default_factory=lambda: [1.0, 0.875, 0.75])
    # evaluation
    n_clips: int = 16
    # synthetic data
    synth_preset: str = "motion-confound"
    n_train: int | None = None
    n_test: int | None = None
    confound_strength: float | None = None

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise RunConfigError(f"geometry must be one of {sorted(GEOMETRIES)}")
        if self.arch not in ARCHS:
            raise RunConfigError(f"arch must be one of {ARCHS}")
        if self.kind not in ("rgb", "residual"):
            raise RunConfigError("kind must be rgb or residual")
        if self.preset not in TRAIN_PRESETS:
            raise RunConfigError(f"preset must be one of {sorted(TRAIN_PRESETS)}")
        if self.synth_preset not in SYNTH_PRESETS:
            raise RunConfigError(f"synth_preset must be one of {sorted(SYNTH_PRESETS)}")
        if self.n_clips < 1 or self.workers < 1 or self.num_classes < 0:
            raise RunConfigError("n_clips and workers must be >= 1, num_classes >= 0")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict:
        return asdict(self)

    def merged(self, overrides: dict, source: str = "overrides") -> "RunConfig":
        unknown = sorted(set(overrides) - set(self.keys()))
        if unknown:
            raise RunConfigError(f"unknown config keys in {source}: {unknown}")
        try:
            return replace(self, **overrides)
        except (TypeError, ValueError) as exc:
            raise RunConfigError(f"{source}: {exc}") from exc

    @property
    def clip_geometry(self) -> ClipGeometry:
        return GEOMETRIES[self.geometry]

    def model_config(self, num_classes: int | None = None) -> ModelConfig:
        n = self.num_classes or num_classes
        if not n:
            raise RunConfigError("num_classes is 0 and no dataset was given to infer it")
        return ModelConfig(self.arch, n, self.delete_first_pool, self.width_multiplier)

    def train_config(self) -> TrainConfig:
        base = TRAIN_PRESETS[self.preset]
        return replace(
            base,
            initial_lr=base.initial_lr if self.lr is None else self.lr,
            epochs=base.epochs if self.epochs is None else self.epochs,
            batch_size=self.batch_size,
            milestones=self.milestones,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            seed=self.seed,
            clip_kind=self.kind,
            workers=self.workers,
        )

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(self.crop, self.flip_prob, tuple(self.jitter_scales), self.seed)

    def synth_config(self) -> SynthConfig:
        over = {"seed": self.seed}
        for key in ("n_train", "n_test", "confound_strength"):
            if getattr(self, key) is not None:
                over[key] = getattr(self, key)
        return replace(SYNTH_PRESETS[self.synth_preset], **over)


def load_run_config(path: str | Path | None, flags: dict) -> RunConfig:
    """Defaults < JSON file at ``path`` < non-None ``flags``."""
    cfg = RunConfig()
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise RunConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise RunConfigError(f"{path}: top level must be a JSON object")
        cfg = cfg.merged(data, str(path))
    return cfg.merged({k: v for k, v in flags.items() if v is not None}, "flags")

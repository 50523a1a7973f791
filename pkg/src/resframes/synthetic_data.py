"""Synthetic moving-sprite videos where motion or appearance carries the label.

Two generators:

* ``motion`` datasets: eight trajectory families of one antialiased ellipse
  with a random color per video. Training backgrounds can be tied to the
  label (``confound_strength``); test backgrounds never are, so a model that
  learned the background fails at test time.
* ``appearance`` datasets: trajectory families crossed with a light or dark
  sprite fill. Every scene is rendered twice, once per fill, over a
  background whose values are symmetric about mid-gray. The absolute
  sprite/background contrast, which is all a residual clip shows, then has the
  same distribution for both fills, while a single RGB frame shows the fill
  directly.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .clip_pipeline import FrameSequence, make_residual, save_frame_sequence, write_index

MOTION_FAMILIES = (
    "horizontal_sweep",
    "vertical_sweep",
    "diagonal_sweep",
    "circular",
    "oscillation",
    "expansion",
    "rotation",
    "random_walk",
)
APPEARANCE_FAMILIES = ("horizontal_sweep", "vertical_sweep", "circular", "rotation")
FILLS = ("light", "dark")

# Eight well separated background base colors (corners of a shrunken RGB cube).
_PALETTE = np.array(
    [[r, g, b] for r in (0.2, 0.8) for g in (0.2, 0.8) for b in (0.2, 0.8)], dtype=np.float64
)


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    kind: str = "motion"
    n_classes_motion: int = 8
    n_train: int = 200
    n_test: int = 100
    height: int = 64
    width: int = 64
    frames: int = 24
    background_mode: str = "fixed_per_class"
    sprite_set: tuple[str, ...] = ("ellipse",)
    confound_strength: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sprite_set", tuple(self.sprite_set))
        if self.kind not in ("motion", "appearance"):
            raise SynthError(f"kind must be motion or appearance, got {self.kind!r}")
        if self.frames < 17:
            raise SynthError("frames must be >= 17 so residual clips of 16 fit")
        if self.background_mode not in ("fixed_per_class", "random_per_video"):
            raise SynthError(f"unknown background_mode {self.background_mode!r}")
        if not 0.0 <= self.confound_strength <= 1.0:
            raise SynthError("confound_strength must lie in [0, 1]")
        limit = len(MOTION_FAMILIES) if self.kind == "motion" else len(APPEARANCE_FAMILIES)
        if not 1 <= self.n_classes_motion <= limit:
            raise SynthError(f"n_classes_motion must lie in [1, {limit}] for {self.kind}")
        if self.n_train < 1 or self.n_test < 1:
            raise SynthError("n_train and n_test must be positive")
        if min(self.height, self.width) < 32:
            raise SynthError("frames must be at least 32x32")

    @property
    def num_classes(self) -> int:
        return self.n_classes_motion * (2 if self.kind == "appearance" else 1)

    def class_names(self) -> list[str]:
        if self.kind == "motion":
            return list(MOTION_FAMILIES[: self.n_classes_motion])
        return [f"{f}/{fill}" for f in APPEARANCE_FAMILIES[: self.n_classes_motion] for fill in FILLS]


PRESETS = {
    "motion-confound": SynthConfig(kind="motion", background_mode="fixed_per_class", confound_strength=1.0),
    "motion-random": SynthConfig(kind="motion", background_mode="random_per_video", confound_strength=0.0),
    "appearance": SynthConfig(
        kind="appearance", n_classes_motion=4, n_train=100, n_test=50,
        background_mode="random_per_video", confound_strength=0.0, sprite_set=("light", "dark"),
    ),
}


# ---------------------------------------------------------------- rendering


def _texture(rng, h, w, amplitude):
    """Zero-mean sum of two oriented sinusoids plus one blob field."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    tex = np.zeros((h, w))
    for _ in range(2):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(0.08, 0.35)
        phase = rng.uniform(0, 2 * np.pi)
        tex += np.sin(freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    tex /= 2
    return amplitude * tex


def _color_texture(rng, h, w, base, amplitude=0.12):
    tex = np.stack([_texture(rng, h, w, amplitude) for _ in range(3)], axis=-1)
    return np.clip(base[None, None, :] + tex, 0, 1)


def background_bank(seed: int, n: int, h: int, w: int) -> list[np.ndarray]:
    """Static textured backgrounds; texture ``i`` has base color ``_PALETTE[i % 8]``."""
    out = []
    for i in range(n):
        rng = np.random.default_rng([seed, 7001, i])
        out.append(_color_texture(rng, h, w, _PALETTE[i % len(_PALETTE)]))
    return out


def _symmetric_background(rng, h, w):
    """Mid-gray background whose deviation from 0.5 is symmetrically distributed."""
    offset = rng.uniform(-0.15, 0.15, size=3)
    tex = np.stack([_texture(rng, h, w, 0.1) for _ in range(3)], axis=-1)
    return 0.5 + offset[None, None, :] + tex


def ellipse_coverage(h, w, cx, cy, a, b, angle):
    """Antialiased coverage in [0, 1] of an ellipse with semi-axes a, b."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx + 0.5 - cx, yy + 0.5 - cy
    c, s = np.cos(angle), np.sin(angle)
    u = (dx * c + dy * s) / a
    v = (-dx * s + dy * c) / b
    r = np.sqrt(u * u + v * v)
    # approximate signed distance to the boundary in pixels, one-pixel ramp
    dist = (r - 1.0) * np.sqrt(a * b)
    return np.clip(0.5 - dist, 0.0, 1.0)


def _trajectory(family: str, rng, t_len: int, h: int, w: int):
    """Per-frame (cx, cy, scale, angle) arrays for one video."""
    t = np.arange(t_len, dtype=np.float64)
    m = 12.0
    ones = np.ones(t_len)
    angle0 = rng.uniform(0, np.pi)
    scale = ones.copy()
    angle = angle0 * ones

    def sweep(extent, speed):
        span = speed * (t_len - 1)
        start = m + rng.uniform(0, max(extent - 2 * m - span, 0))
        path = start + speed * t
        return path if rng.random() < 0.5 else (2 * start + span) - path

    if family == "horizontal_sweep":
        cx = sweep(w, rng.uniform(1.2, 1.7))
        cy = rng.uniform(m, h - m) * ones
    elif family == "vertical_sweep":
        cy = sweep(h, rng.uniform(1.2, 1.7))
        cx = rng.uniform(m, w - m) * ones
    elif family == "diagonal_sweep":
        v = rng.uniform(0.9, 1.2)
        cx, cy = sweep(w, v), sweep(h, v)
    elif family == "circular":
        r = rng.uniform(9, 13)
        x0, y0 = rng.uniform(m + r, w - m - r), rng.uniform(m + r, h - m - r)
        omega = rng.uniform(0.3, 0.45) * rng.choice([-1, 1])
        phase = rng.uniform(0, 2 * np.pi)
        cx, cy = x0 + r * np.cos(omega * t + phase), y0 + r * np.sin(omega * t + phase)
    elif family == "oscillation":
        amp = rng.uniform(6, 9)
        period = rng.uniform(6, 9)
        theta = rng.uniform(0, np.pi)
        x0, y0 = rng.uniform(m + amp, w - m - amp), rng.uniform(m + amp, h - m - amp)
        d = amp * np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
        cx, cy = x0 + d * np.cos(theta), y0 + d * np.sin(theta)
    elif family == "expansion":
        cx, cy = rng.uniform(m + 4, w - m - 4) * ones, rng.uniform(m + 4, h - m - 4) * ones
        scale = np.linspace(0.55, 1.6, t_len)
        if rng.random() < 0.5:
            scale = scale[::-1].copy()
    elif family == "rotation":
        cx, cy = rng.uniform(m, w - m) * ones, rng.uniform(m, h - m) * ones
        angle = angle0 + rng.uniform(0.18, 0.3) * rng.choice([-1, 1]) * t
    elif family == "random_walk":
        steps = rng.normal(0, 1.8, size=(t_len, 2))
        steps[0] = (rng.uniform(m + 4, w - m - 4), rng.uniform(m + 4, h - m - 4))
        pos = np.cumsum(steps, axis=0)
        lo_hi = [(m, w - m), (m, h - m)]
        for k, (lo, hi) in enumerate(lo_hi):
            span = hi - lo
            p = np.mod(pos[:, k] - lo, 2 * span)
            pos[:, k] = lo + np.where(p > span, 2 * span - p, p)
        cx, cy = pos[:, 0], pos[:, 1]
    else:
        raise SynthError(f"unknown trajectory family {family!r}")
    return cx, cy, scale, angle


def render_video(background, color, traj, axes=(8.0, 4.0)):
    """Composite the sprite over a static background; returns frames and per-frame bboxes."""
    h, w, _ = background.shape
    cx, cy, scale, angle = traj
    frames, boxes = [], []
    for i in range(len(cx)):
        cov = ellipse_coverage(h, w, cx[i], cy[i], axes[0] * scale[i], axes[1] * scale[i], angle[i])
        img = background * (1 - cov[..., None]) + np.asarray(color)[None, None, :] * cov[..., None]
        frames.append(np.floor(np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8))
        ys, xs = np.nonzero(cov > 0.05)
        boxes.append([int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1]
                     if xs.size else [0, 0, 0, 0])
    return np.stack(frames), boxes


# ---------------------------------------------------------------- datasets


@dataclass
class SynthDataset:
    config: SynthConfig
    splits: dict[str, list[FrameSequence]]
    meta: dict = field(default_factory=dict)


def _split_code(split: str) -> int:
    return {"train": 1, "test": 2}[split]


def generate_motion_dataset(config: SynthConfig, out_dir=None) -> SynthDataset:
    if config.kind != "motion":
        raise SynthError("generate_motion_dataset needs kind='motion'")
    h, w, t_len = config.height, config.width, config.frames
    k = config.n_classes_motion
    n_bank = max(len(_PALETTE), k)
    bank = background_bank(config.seed, n_bank, h, w)
    splits, videos = {}, []
    for split, per_class in (("train", config.n_train), ("test", config.n_test)):
        seqs = []
        for label in range(k):
            for j in range(per_class):
                rng = np.random.default_rng([config.seed, _split_code(split), label, j])
                tied = (
                    split == "train"
                    and config.background_mode == "fixed_per_class"
                    and rng.random() < config.confound_strength
                )
                bg_id = label if tied else int(rng.integers(n_bank))
                color = rng.uniform(0.0, 1.0, size=3)
                traj = _trajectory(MOTION_FAMILIES[label], rng, t_len, h, w)
                axes = (8.0 * rng.uniform(0.9, 1.1), 4.0 * rng.uniform(0.9, 1.1))
                frames, boxes = render_video(bank[bg_id], color, traj, axes)
                vid = f"{split}_{label:02d}_{j:04d}"
                seqs.append(FrameSequence(frames, label, vid))
                videos.append({
                    "id": vid, "split": split, "label": label, "family": MOTION_FAMILIES[label],
                    "background": bg_id, "background_tied": bool(tied),
                    "sprite_color": [round(float(c), 6) for c in color], "bbox": boxes,
                })
        splits[split] = seqs
    meta = _meta(config, videos)
    ds = SynthDataset(config, splits, meta)
    if out_dir is not None:
        write_dataset(ds, out_dir)
    return ds


def generate_appearance_dataset(config: SynthConfig, out_dir=None) -> SynthDataset:
    """Same-motion pairs that differ only in sprite fill (light vs dark)."""
    if config.kind != "appearance":
        raise SynthError("generate_appearance_dataset needs kind='appearance'")
    h, w, t_len = config.height, config.width, config.frames
    splits, videos = {}, []
    bound, rgb_gap = 0.0, np.inf
    for split, per_class in (("train", config.n_train), ("test", config.n_test)):
        seqs = []
        for fam in range(config.n_classes_motion):
            for j in range(per_class):
                rng = np.random.default_rng([config.seed, _split_code(split), 100 + fam, j])
                background = _symmetric_background(rng, h, w)
                contrast = rng.uniform(0.3, 0.4)
                traj = _trajectory(APPEARANCE_FAMILIES[fam], rng, t_len, h, w)
                axes = (8.0 * rng.uniform(0.9, 1.1), 4.0 * rng.uniform(0.9, 1.1))
                twins = []
                for f, fill in enumerate(FILLS):
                    color = np.full(3, 0.5 + contrast if fill == "light" else 0.5 - contrast)
                    frames, boxes = render_video(background, color, traj, axes)
                    label = 2 * fam + f
                    vid = f"{split}_{label:02d}_{j:04d}"
                    seqs.append(FrameSequence(frames, label, vid))
                    twins.append(frames)
                    videos.append({
                        "id": vid, "split": split, "label": label,
                        "family": APPEARANCE_FAMILIES[fam], "fill": fill, "pair": f"{split}_{fam:02d}_{j:04d}",
                        "contrast": round(float(contrast), 6), "bbox": boxes,
                    })
                ra, rb = (make_residual(t.astype(np.float64), 1) / 255 for t in twins)
                bound = max(bound, float(np.abs(ra - rb).mean()))
                rgb_gap = min(rgb_gap, float(np.abs(twins[0].astype(np.float64) - twins[1]).mean() / 255))
        splits[split] = seqs
    meta = _meta(config, videos)
    meta["pair_residual_bound"] = bound
    meta["pair_rgb_min_difference"] = rgb_gap
    ds = SynthDataset(config, splits, meta)
    if out_dir is not None:
        write_dataset(ds, out_dir)
    return ds


def generate(config: SynthConfig, out_dir=None) -> SynthDataset:
    if config.kind == "motion":
        return generate_motion_dataset(config, out_dir)
    return generate_appearance_dataset(config, out_dir)


def _meta(config: SynthConfig, videos: list[dict]) -> dict:
    cfg = asdict(config)
    cfg["sprite_set"] = list(config.sprite_set)
    return {"config": cfg, "classes": config.class_names(), "videos": videos}


def write_dataset(ds: SynthDataset, out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for split, seqs in ds.splits.items():
            root = out / split
            root.mkdir(exist_ok=True)
            for seq in seqs:
                save_frame_sequence(seq, root / seq.id)
            write_index(root, [(s.id, s.id, s.label) for s in seqs])
        (out / "synth_meta.json").write_text(
            json.dumps(ds.meta, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise SynthError(f"cannot write dataset to {out}: {exc}") from exc
    return out


def load_meta(root: str | os.PathLike) -> dict:
    return json.loads((Path(root) / "synth_meta.json").read_text(encoding="utf-8"))


def preset(name: str, **overrides) -> SynthConfig:
    if name not in PRESETS:
        raise SynthError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)

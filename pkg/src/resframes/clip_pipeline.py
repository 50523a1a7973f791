"""Frame stores, resizing, residual clips and training/test clip sampling.

Frames live as ``(T, H, W, C)`` uint8 arrays; network inputs are
``(C, T, H, W)`` float32 clips. Every randomized function takes an integer
``rng_state`` and derives two independent streams from it, one for the
temporal draw and one for the spatial draws, so the spatial augmentation of
a clip does not depend on how its start frame was chosen.
"""
from __future__ import annotations

import csv
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import netpbm

_FRAME_RE = re.compile(r"^frame_(\d{5})\.(ppm|pgm)$")

CLIP_KINDS = ("rgb", "residual")
INPUT_KINDS = CLIP_KINDS + ("frame",)

DEFAULT_NORM = {"rgb": (0.5, 0.5), "residual": (0.0, 1.0), "frame": (0.5, 0.5)}


class PipelineError(ValueError):
    pass


@dataclass
class FrameSequence:
    frames: np.ndarray
    label: int = -1
    id: str = ""

    def __post_init__(self):
        f = self.frames
        if f.dtype != np.uint8 or f.ndim != 4 or f.shape[3] not in (1, 3):
            raise PipelineError(
                f"frames must be uint8 T x H x W x C with C in {{1,3}}, got {f.dtype} {f.shape}"
            )

    @property
    def length(self) -> int:
        return self.frames.shape[0]


@dataclass
class Clip:
    data: np.ndarray
    kind: str

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class AugmentConfig:
    crop: str = "random"
    flip_prob: float = 0.5
    jitter_scales: tuple[float, ...] = (1.0, 0.875, 0.75)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "jitter_scales", tuple(float(s) for s in self.jitter_scales))
        if self.crop not in ("random", "center"):
            raise ValueError(f"crop must be 'random' or 'center', got {self.crop!r}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must lie in [0, 1]")
        if not self.jitter_scales or min(self.jitter_scales) <= 0:
            raise ValueError("jitter_scales must be a nonempty list of positive factors")


TEST_AUGMENT = AugmentConfig(crop="center", flip_prob=0.0, jitter_scales=(1.0,))


@dataclass(frozen=True)
class ClipGeometry:
    """Clip length, resize target (width x height) and square crop side."""

    clip_len: int = 16
    resize_w: int = 170
    resize_h: int = 128
    crop_size: int = 112

    def __post_init__(self):
        if min(self.clip_len, self.resize_w, self.resize_h, self.crop_size) < 1:
            raise ValueError(f"geometry extents must be positive: {self}")
        if self.crop_size > min(self.resize_w, self.resize_h):
            raise ValueError("crop_size exceeds the resized frame")


PAPER_GEOMETRY = ClipGeometry()
# Same aspect and crop ratios, scaled down to fit CPU training.
DESK_GEOMETRY = ClipGeometry(clip_len=16, resize_w=40, resize_h=32, crop_size=28)
GEOMETRIES = {"paper": PAPER_GEOMETRY, "desk": DESK_GEOMETRY}


def _streams(rng_state: int):
    t, s = np.random.SeedSequence(int(rng_state)).spawn(2)
    return np.random.default_rng(t), np.random.default_rng(s)


def sample_seed(*keys: int) -> int:
    """Integer seed that is a pure function of its integer keys (e.g. seed, epoch, index)."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


# ---------------------------------------------------------------- frame store


def load_frame_sequence(path: str | os.PathLike, label: int = -1, id: str | None = None) -> FrameSequence:
    path = Path(path)
    if not path.is_dir():
        raise PipelineError(f"{path}: not a directory")
    found = {}
    for entry in os.listdir(path):
        m = _FRAME_RE.match(entry)
        if m:
            idx = int(m.group(1))
            if idx in found:
                raise PipelineError(f"{path}: frame index {idx} stored twice")
            found[idx] = entry
    if not found:
        raise PipelineError(f"{path}: no frame_%05d.ppm/.pgm files")
    for i in range(len(found)):
        if i not in found:
            raise PipelineError(f"{path}: missing frame index {i}")
    frames = [netpbm.read_image(path / found[i]) for i in range(len(found))]
    shape = frames[0].shape
    for i, f in enumerate(frames):
        if f.shape != shape:
            raise PipelineError(f"{path / found[i]}: shape {f.shape} differs from frame 0 {shape}")
    return FrameSequence(np.stack(frames), label, id if id is not None else path.name)


def save_frame_sequence(seq: FrameSequence, path: str | os.PathLike) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    ext = netpbm.extension_for(seq.frames.shape[3])
    for i, frame in enumerate(seq.frames):
        netpbm.write_image(path / f"frame_{i:05d}{ext}", frame)


# ---------------------------------------------------------------- resampling


def _axis_weights(n_in: int, n_out: int):
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_axis(a: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    """Linear resampling along one axis with the half-pixel-center convention."""
    n_in = a.shape[axis]
    if n_out < 1:
        raise PipelineError(f"target extent must be positive, got {n_out}")
    if n_in == n_out:
        return a
    i0, i1, f = _axis_weights(n_in, n_out)
    shape = [1] * a.ndim
    shape[axis] = n_out
    f = f.reshape(shape).astype(a.dtype if a.dtype.kind == "f" else np.float64)
    lo = np.take(a, i0, axis=axis)
    hi = np.take(a, i1, axis=axis)
    return lo * (1 - f) + hi * f


def resize_bilinear(seq: FrameSequence, w: int = 170, h: int = 128) -> FrameSequence:
    if w < 1 or h < 1:
        raise PipelineError(f"resize target must be positive, got {w}x{h}")
    _, fh, fw, _ = seq.frames.shape
    if (fh, fw) == (h, w):
        return seq
    out = resize_axis(seq.frames.astype(np.float64), 1, h)
    out = resize_axis(out, 2, w)
    # values are nonnegative, so floor(x + 0.5) rounds half away from zero
    out = np.floor(out + 0.5).clip(0, 255).astype(np.uint8)
    return FrameSequence(out, seq.label, seq.id)


# ---------------------------------------------------------------- residuals


def make_residual(stack: np.ndarray, clip_len: int = 16) -> np.ndarray:
    """Absolute difference of each frame with its successor along axis 0.

    ``stack`` holds at least ``clip_len + 1`` frames; the result has one
    frame fewer than the input.
    """
    stack = np.asarray(stack)
    if stack.shape[0] < clip_len + 1:
        raise PipelineError(
            f"residual stack needs {clip_len + 1} frames, got {stack.shape[0]}"
        )
    if stack.dtype.kind == "u":
        stack = stack.astype(np.int16)
    return np.abs(stack[:-1] - stack[1:])


# ---------------------------------------------------------------- normalization


def normalize(clip: Clip, mean, std) -> Clip:
    mean, std = _per_channel(clip, mean), _per_channel(clip, std)
    if np.any(std <= 0):
        raise PipelineError("normalization std must be positive")
    return Clip(((clip.data - mean) / std).astype(np.float32), clip.kind)


def denormalize(clip: Clip, mean, std) -> Clip:
    mean, std = _per_channel(clip, mean), _per_channel(clip, std)
    return Clip((clip.data * std + mean).astype(np.float32), clip.kind)


def _per_channel(clip: Clip, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float32).reshape(-1)
    c = clip.data.shape[0]
    if v.size == 1:
        v = np.repeat(v, c)
    if v.size != c:
        raise PipelineError(f"expected {c} per-channel values, got {v.size}")
    return v.reshape((c,) + (1,) * (clip.data.ndim - 1))


# ---------------------------------------------------------------- sampling


def _spatial(frames: np.ndarray, geometry: ClipGeometry, aug: AugmentConfig, rng) -> np.ndarray:
    """Jittered square crop, resize to crop_size, optional flip. (T,H,W,C) float."""
    _, h, w, _ = frames.shape
    scale = aug.jitter_scales[rng.integers(len(aug.jitter_scales))]
    side = int(min(max(1, round(geometry.crop_size * scale)), h, w))
    if aug.crop == "random":
        y0 = int(rng.integers(0, h - side + 1))
        x0 = int(rng.integers(0, w - side + 1))
    else:
        y0, x0 = (h - side) // 2, (w - side) // 2
    flip = rng.random() < aug.flip_prob
    out = frames[:, y0:y0 + side, x0:x0 + side]
    out = resize_axis(resize_axis(out, 1, geometry.crop_size), 2, geometry.crop_size)
    if flip:
        out = out[:, :, ::-1]
    return out


def _build_clip(seq, start, kind, geometry, aug, rng_space, norm) -> Clip:
    if kind not in CLIP_KINDS:
        raise PipelineError(f"clip kind must be one of {CLIP_KINDS}, got {kind!r}")
    seq = resize_bilinear(seq, geometry.resize_w, geometry.resize_h)
    n = geometry.clip_len + (kind == "residual")
    raw = seq.frames[start:start + n].astype(np.float32)
    if kind == "residual":
        # differences of integer-valued pixels are exact; scale to [0, 1] after
        stack = make_residual(raw, geometry.clip_len) / np.float32(255)
    else:
        stack = raw / np.float32(255)
    stack = _spatial(stack, geometry, aug, rng_space)
    clip = Clip(np.ascontiguousarray(stack.transpose(3, 0, 1, 2), dtype=np.float32), kind)
    mean, std = norm if norm is not None else DEFAULT_NORM[kind]
    return normalize(clip, mean, std)


def required_length(kind: str, clip_len: int = 16) -> int:
    return clip_len + (kind == "residual")


def sample_train_clip(
    seq: FrameSequence,
    kind: str,
    aug: AugmentConfig,
    rng_state: int,
    geometry: ClipGeometry = PAPER_GEOMETRY,
    norm=None,
) -> Clip:
    need = required_length(kind, geometry.clip_len)
    if seq.length < need:
        raise PipelineError(f"{seq.id or 'sequence'}: {kind} clip needs {need} frames, got {seq.length}")
    rng_t, rng_s = _streams(rng_state)
    start = int(rng_t.integers(0, seq.length - need + 1))
    return _build_clip(seq, start, kind, geometry, aug, rng_s, norm)


def center_clip(seq: FrameSequence, start: int, kind: str, geometry: ClipGeometry = PAPER_GEOMETRY, norm=None) -> Clip:
    """Center-cropped, unflipped clip starting at ``start``."""
    need = required_length(kind, geometry.clip_len)
    if start < 0 or start + need > seq.length:
        raise PipelineError(f"clip [{start}, {start + need}) outside sequence of {seq.length} frames")
    return _build_clip(seq, start, kind, geometry, TEST_AUGMENT, np.random.default_rng(0), norm)


def appearance_test_indices(n_frames: int, clip_len: int = 16, n_clips: int = 16) -> list[int]:
    """Frame indices for the appearance path at test time.

    Aligned with the motion-path clip starts when the video holds a full
    clip, otherwise spread uniformly over the available frames.
    """
    if n_frames < 1:
        raise PipelineError("empty sequence")
    length = clip_len if n_frames >= clip_len else 1
    if n_clips == 1:
        return [0]
    return [k * (n_frames - length) // (n_clips - 1) for k in range(n_clips)]


def sample_appearance_frame(
    seq: FrameSequence,
    index_policy="random",
    aug: AugmentConfig = TEST_AUGMENT,
    rng_state: int = 0,
    geometry: ClipGeometry = PAPER_GEOMETRY,
    norm=None,
) -> np.ndarray:
    """One frame as a normalized ``(C, crop, crop)`` image.

    ``index_policy`` is ``"random"`` (uniform frame, training) or an explicit
    frame index (test time, see :func:`appearance_test_indices`).
    """
    if seq.length < 1:
        raise PipelineError("empty sequence")
    rng_t, rng_s = _streams(rng_state)
    if index_policy == "random":
        k = int(rng_t.integers(0, seq.length))
    else:
        k = int(index_policy)
        if not 0 <= k < seq.length:
            raise PipelineError(f"frame index {k} outside sequence of {seq.length} frames")
    single = FrameSequence(seq.frames[k:k + 1], seq.label, seq.id)
    one = ClipGeometry(1, geometry.resize_w, geometry.resize_h, geometry.crop_size)
    clip = _build_clip(single, 0, "rgb", one, aug, rng_s, norm or DEFAULT_NORM["frame"])
    return clip.data[:, 0]


# ---------------------------------------------------------------- datasets


@dataclass
class VideoEntry:
    id: str
    path: Path
    label: int


def read_index(root: str | os.PathLike) -> list[VideoEntry]:
    root = Path(root)
    index = root / "index.csv"
    if not index.is_file():
        raise PipelineError(f"{root}: no index.csv")
    with open(index, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "path", "label"]:
            raise PipelineError(f"{index}: header must be id,path,label, got {reader.fieldnames}")
        return [VideoEntry(r["id"], root / r["path"], int(r["label"])) for r in reader]


def write_index(root: str | os.PathLike, rows) -> None:
    """Write ``index.csv`` from (id, relative_path, label) rows."""
    with open(Path(root) / "index.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "path", "label"])
        for row in rows:
            w.writerow(row)


@dataclass
class VideoDataset:
    """Videos listed in an index, resized once to the geometry and cached."""

    entries: list[VideoEntry]
    geometry: ClipGeometry = PAPER_GEOMETRY
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dir(cls, root, geometry: ClipGeometry = PAPER_GEOMETRY) -> "VideoDataset":
        return cls(read_index(root), geometry)

    @classmethod
    def from_sequences(cls, seqs, geometry: ClipGeometry = PAPER_GEOMETRY) -> "VideoDataset":
        ds = cls([VideoEntry(s.id, Path(), s.label) for s in seqs], geometry)
        for i, s in enumerate(seqs):
            ds._cache[i] = resize_bilinear(s, geometry.resize_w, geometry.resize_h)
        return ds

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.entries], dtype=np.int64)

    def sequence(self, i: int) -> FrameSequence:
        seq = self._cache.get(i)
        if seq is None:
            e = self.entries[i]
            raw = load_frame_sequence(e.path, e.label, e.id)
            seq = resize_bilinear(raw, self.geometry.resize_w, self.geometry.resize_h)
            self._cache[i] = seq
        return seq


def make_batch(
    dataset: VideoDataset,
    indices,
    seeds,
    input_kind: str,
    aug: AugmentConfig,
    norm=None,
    workers: int = 1,
):
    """Stack augmented samples into a network batch; returns (x, labels)."""
    if input_kind not in INPUT_KINDS:
        raise PipelineError(f"input kind must be one of {INPUT_KINDS}, got {input_kind!r}")
    g = dataset.geometry

    def one(args):
        i, s = args
        seq = dataset.sequence(int(i))
        if input_kind == "frame":
            return sample_appearance_frame(seq, "random", aug, s, g, norm)
        return sample_train_clip(seq, input_kind, aug, s, g, norm).data

    jobs = list(zip(indices, seeds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(one, jobs))
    else:
        samples = [one(j) for j in jobs]
    labels = dataset.labels[np.asarray(indices, dtype=np.int64)]
    return np.stack(samples), labels

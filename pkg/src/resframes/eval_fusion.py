"""Test-time clip accumulation, two-path fusion, accuracy and Grad-CAM."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import netpbm
from .clip_pipeline import (
    PAPER_GEOMETRY,
    ClipGeometry,
    FrameSequence,
    PipelineError,
    appearance_test_indices,
    center_clip,
    resize_axis,
    sample_appearance_frame,
)
from .tensor_engine import softmax


class FusionError(ValueError):
    pass


@dataclass
class PredictionSet:
    video_id: str
    clip_probs: np.ndarray
    probs: np.ndarray
    label: int = -1

    @classmethod
    def from_clip_probs(cls, video_id: str, clip_probs, label: int = -1) -> "PredictionSet":
        clip_probs = np.asarray(clip_probs, dtype=np.float64)
        return cls(video_id, clip_probs, clip_probs.mean(axis=0), label)


def sample_test_clips(t_total: int, clip_len: int = 16, n_clips: int = 16, residual: bool = False) -> list[int]:
    """Uniformly spaced clip starts covering the whole video."""
    length = clip_len + (1 if residual else 0)
    if t_total < length:
        raise PipelineError(
            f"video has {t_total} frames; at least {length} are required for "
            f"{'residual' if residual else 'rgb'} clips of {clip_len}"
        )
    if n_clips == 1:
        return [0]
    return [k * (t_total - length) // (n_clips - 1) for k in range(n_clips)]


def eval_inputs(seq: FrameSequence, kind: str, geometry: ClipGeometry = PAPER_GEOMETRY,
                n_clips: int = 16, norm=None) -> np.ndarray:
    """The stacked network inputs evaluated for one video."""
    if kind == "frame":
        idx = appearance_test_indices(seq.length, geometry.clip_len, n_clips)
        return np.stack([sample_appearance_frame(seq, i, geometry=geometry, norm=norm) for i in idx])
    starts = sample_test_clips(seq.length, geometry.clip_len, n_clips, kind == "residual")
    return np.stack([center_clip(seq, s, kind, geometry, norm).data for s in starts])


def predict_video(network, seq: FrameSequence, kind: str, geometry: ClipGeometry = PAPER_GEOMETRY,
                  n_clips: int = 16, norm=None) -> PredictionSet:
    """Average the softmax outputs of the uniformly sampled test inputs."""
    x = eval_inputs(seq, kind, geometry, n_clips, norm)
    logits = network.forward(x, training=False)
    return PredictionSet.from_clip_probs(seq.id, softmax(logits.astype(np.float64), axis=1), seq.label)


def two_path_fuse(motion: PredictionSet, appearance: PredictionSet) -> np.ndarray:
    if motion.video_id != appearance.video_id:
        raise FusionError(f"video ids differ: {motion.video_id!r} vs {appearance.video_id!r}")
    if motion.probs.shape != appearance.probs.shape:
        raise FusionError(f"class counts differ: {motion.probs.shape} vs {appearance.probs.shape}")
    return (motion.probs + appearance.probs) / 2


def _rank(probs: np.ndarray) -> np.ndarray:
    # stable sort of -p ranks ties by lower class index first
    return np.argsort(-np.asarray(probs), axis=-1, kind="stable")


def topk_accuracy(predictions, labels, k: int) -> float:
    """Percentage of videos whose label is among the ``k`` top-ranked classes."""
    probs = np.stack([p.probs if isinstance(p, PredictionSet) else np.asarray(p) for p in predictions])
    labels = np.asarray(labels)
    if k > probs.shape[1]:
        raise ValueError(f"k={k} exceeds class count {probs.shape[1]}")
    hit = (_rank(probs)[:, :k] == labels[:, None]).any(axis=1)
    return 100.0 * float(hit.mean())


def per_class_accuracy(predictions, labels) -> dict[int, float]:
    probs = np.stack([p.probs if isinstance(p, PredictionSet) else np.asarray(p) for p in predictions])
    labels = np.asarray(labels)
    top = _rank(probs)[:, 0]
    return {int(c): 100.0 * float((top[labels == c] == c).mean()) for c in np.unique(labels)}


# ---------------------------------------------------------------- reports


def build_report(predictions: list[PredictionSet], include_probs: bool = True, **extra) -> dict:
    labels = [p.label for p in predictions]
    k = len(predictions[0].probs)
    report = dict(extra)
    report.update({
        "num_videos": len(predictions),
        "num_classes": k,
        "top1": topk_accuracy(predictions, labels, 1),
        "top5": topk_accuracy(predictions, labels, min(5, k)),
        "per_class": {str(c): a for c, a in per_class_accuracy(predictions, labels).items()},
    })
    if include_probs:
        report["videos"] = [
            {"id": p.video_id, "label": int(p.label), "probs": [float(v) for v in p.probs]}
            for p in predictions
        ]
    return report


def report_predictions(report: dict) -> list[PredictionSet]:
    if "videos" not in report:
        raise FusionError("report has no per-video probabilities")
    out = []
    for v in report["videos"]:
        probs = np.asarray(v["probs"], dtype=np.float64)
        out.append(PredictionSet(v["id"], probs[None], probs, int(v["label"])))
    return out


def fuse_reports(motion: dict, appearance: dict) -> dict:
    a = {p.video_id: p for p in report_predictions(appearance)}
    fused = []
    for m in report_predictions(motion):
        if m.video_id not in a:
            raise FusionError(f"video {m.video_id!r} missing from appearance report")
        probs = two_path_fuse(m, a[m.video_id])
        fused.append(PredictionSet(m.video_id, probs[None], probs, m.label))
    if len(fused) != len(a):
        raise FusionError("reports cover different video sets")
    return build_report(fused, fused_from=["motion", "appearance"])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- Grad-CAM


def grad_cam_map(activations: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    """Rectified gradient-weighted channel sum, min-max scaled to [0, 1].

    ``activations`` and ``gradients`` are (C, ...) for a single sample.
    """
    a = np.asarray(activations, dtype=np.float64)
    g = np.asarray(gradients, dtype=np.float64)
    weights = g.reshape(g.shape[0], -1).mean(axis=1)
    cam = np.maximum(np.tensordot(weights, a, axes=(0, 0)), 0.0)
    lo, hi = cam.min(), cam.max()
    if hi - lo <= 0:
        return np.zeros_like(cam)
    return (cam - lo) / (hi - lo)


def grad_cam_3d(network, clip: np.ndarray, target_class: int, upsample: bool = False) -> np.ndarray:
    """Saliency volume over the network's last conv stage for one clip (C, T, H, W)."""
    x = np.asarray(clip, dtype=np.float32)[None]
    logits = network.forward(x, training=False, capture=network.cam_layer)
    seed = np.zeros_like(logits)
    seed[0, target_class] = 1.0
    network.backward(seed)
    network.zero_grad()
    act = network.captured["activation"][0]
    grad = network.captured["grad"][0]
    cam = grad_cam_map(act, grad)
    if upsample:
        for axis, n in enumerate(x.shape[2:]):
            cam = resize_axis(cam, axis, n)
    return cam


def trajectory_mask(boxes, frame_hw, geometry: ClipGeometry, start: int, residual: bool = True) -> np.ndarray:
    """Boolean (T, crop, crop) mask of sprite boxes in center-clip coordinates.

    ``boxes`` holds one ``[x0, y0, x1, y1]`` box per source frame of size
    ``frame_hw``. A residual frame spans two source frames, so it gets the
    union of both boxes.
    """
    h, w = frame_hw
    c = geometry.crop_size
    sy, sx = geometry.resize_h / h, geometry.resize_w / w
    oy, ox = (geometry.resize_h - c) // 2, (geometry.resize_w - c) // 2
    mask = np.zeros((geometry.clip_len, c, c), dtype=bool)
    for t in range(geometry.clip_len):
        for k in range(start + t, start + t + 1 + int(residual)):
            x0, y0, x1, y1 = boxes[k]
            if x1 <= x0 or y1 <= y0:
                continue
            r0 = int(np.clip(np.floor(y0 * sy) - oy, 0, c))
            r1 = int(np.clip(np.ceil(y1 * sy) - oy, 0, c))
            c0 = int(np.clip(np.floor(x0 * sx) - ox, 0, c))
            c1 = int(np.clip(np.ceil(x1 * sx) - ox, 0, c))
            mask[t, r0:r1, c0:c1] = True
    return mask


def inside_outside_ratio(cam: np.ndarray, mask: np.ndarray) -> float:
    """Mean saliency inside ``mask`` divided by the mean outside it."""
    if cam.shape != mask.shape:
        raise ValueError(f"cam {cam.shape} and mask {mask.shape} differ")
    if mask.all() or not mask.any():
        raise ValueError("mask must have both inside and outside voxels")
    inside, outside = float(cam[mask].mean()), float(cam[~mask].mean())
    return inside / outside if outside > 0 else float("inf")


def write_saliency(out_dir, cam: np.ndarray, clip_frames: np.ndarray | None = None) -> list[Path]:
    """Write ``cam_%05d.pgm`` heatmaps (and the matching input frames if given)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, plane in enumerate(cam):
        p = out_dir / f"cam_{t:05d}.pgm"
        netpbm.write_image(p, np.floor(np.clip(plane, 0, 1) * 255 + 0.5).astype(np.uint8))
        paths.append(p)
    if clip_frames is not None:
        for t, frame in enumerate(clip_frames):
            netpbm.write_image(out_dir / f"frame_{t:05d}{netpbm.extension_for(frame.shape[-1])}", frame)
    return paths


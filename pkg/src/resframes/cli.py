"""Command-line entry point: ``resframes <command> [flags]``.

Every failure prints one JSON line ``{"error": ..., "message": ...}`` to
stderr and exits nonzero. Reports are JSON, training logs are JSON lines.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import netpbm
from .checkpoint import apply_checkpoint, load_checkpoint, save_checkpoint
from .checks import run_suite
from .clip_pipeline import (
    GEOMETRIES,
    VideoDataset,
    center_clip,
    load_frame_sequence,
    make_residual,
)
from .config import RunConfig, RunConfigError, load_run_config
from .eval_fusion import (
    build_report,
    fuse_reports,
    grad_cam_3d,
    predict_video,
    sample_test_clips,
    write_json,
    write_saliency,
)
from .model_zoo import ARCHS, ModelConfig, build_network
from .synthetic_data import PRESETS as SYNTH_PRESETS
from .synthetic_data import generate
from .trainer import Trainer

log = logging.getLogger("resframes")

CHECKPOINT_NAME = "checkpoint.rclp"


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _fail("usage", message, code=2)


def _fail(kind: str, message: str, code: int = 1):
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    raise SystemExit(code)


def _split_dir(root: str, split: str) -> Path:
    """``root/split`` when it holds an index, otherwise ``root`` itself."""
    p = Path(root)
    if (p / split / "index.csv").is_file():
        return p / split
    if (p / "index.csv").is_file():
        return p
    raise CliError(f"{root}: no index.csv in it or in {split}/")


def _run_flags(args, keys) -> dict:
    return {k: getattr(args, k, None) for k in keys}


def _model_from_checkpoint(path):
    ckpt = load_checkpoint(path)
    if "model" not in ckpt.config:
        raise CliError(f"{path}: checkpoint has no model config")
    net = build_network(ModelConfig(**ckpt.config["model"]))
    apply_checkpoint(net, ckpt, with_optimizer=False)
    run = RunConfig().merged(ckpt.config.get("run", {}), f"{path} run config")
    return net, run, ckpt


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> dict:
    cfg = load_run_config(args.config, {"synth_preset": args.preset, "seed": args.seed,
                                        "n_train": args.n_train, "n_test": args.n_test})
    ds = generate(cfg.synth_config(), args.out)
    return {"out": str(args.out), "classes": ds.meta["classes"],
            "train": len(ds.splits["train"]), "test": len(ds.splits["test"])}


def cmd_train(args) -> dict:
    flags = _run_flags(args, ("arch", "kind", "preset", "epochs", "lr", "batch_size", "seed",
                              "workers", "geometry", "width_multiplier"))
    cfg = load_run_config(args.config, flags)
    data = VideoDataset.from_dir(_split_dir(args.dataset, "train"), cfg.clip_geometry)
    n_classes = int(data.labels.max()) + 1 if len(data) else 0
    model_cfg = cfg.model_config(n_classes)
    net = build_network(model_cfg, cfg.seed)
    start = 0
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        apply_checkpoint(net, ckpt, with_optimizer=True)
        start = ckpt.epoch if args.resume else 0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run_config = {"run": cfg.to_dict(), "model": model_cfg.to_dict()}
    (out / "config.json").write_text(json.dumps(run_config, indent=1, sort_keys=True) + "\n")
    trainer = Trainer(net, data, cfg.train_config(), cfg.augment_config(),
                      log_path=out / "train_log.jsonl", checkpoint_path=out / CHECKPOINT_NAME,
                      run_config=run_config, start_epoch=start)
    history = trainer.run()
    if not history:
        save_checkpoint(net, out / CHECKPOINT_NAME, start, 0.0, run_config)
    last = history[-1] if history else None
    return {"checkpoint": str(out / CHECKPOINT_NAME), "epochs_run": len(history),
            "final_loss": last.loss if last else None, "final_top1": last.top1 if last else None}


def cmd_eval(args) -> dict:
    net, run, _ = _model_from_checkpoint(args.checkpoint)
    geometry = GEOMETRIES[args.geometry] if args.geometry else run.clip_geometry
    kind = "frame" if net.config.input_kind == "frame" else run.kind
    n_clips = args.n_clips or run.n_clips
    data = VideoDataset.from_dir(_split_dir(args.dataset, "test"), geometry)
    preds = [predict_video(net, data.sequence(i), kind, geometry, n_clips) for i in range(len(data))]
    report = build_report(preds, arch=net.config.arch, kind=kind, n_clips=n_clips,
                          checkpoint=str(args.checkpoint))
    write_json(args.out, report)
    return {"out": str(args.out), "top1": report["top1"], "top5": report["top5"]}


def cmd_fuse(args) -> dict:
    reports = []
    for p in (args.motion_report, args.appearance_report):
        try:
            reports.append(json.loads(Path(p).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read report {p}: {exc}") from exc
    fused = fuse_reports(*reports)
    write_json(args.out, fused)
    return {"out": str(args.out), "top1": fused["top1"], "top5": fused["top5"]}


def cmd_dump_residual(args) -> dict:
    seq = load_frame_sequence(args.video)
    if seq.length < 2:
        raise CliError(f"{args.video}: need at least 2 frames for a residual")
    # (T-1, H, W, C) integer pixel differences, already within 0..255
    frames = make_residual(seq.frames, seq.length - 1).astype(np.uint8)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = netpbm.extension_for(frames.shape[-1])
    for t, f in enumerate(frames):
        netpbm.write_image(out / f"residual_{t:05d}{ext}", f)
    return {"out": str(out), "frames": int(frames.shape[0])}


def cmd_gradcheck(args) -> dict:
    names = None if args.arch == "all" else [args.arch]
    report = run_suite(names, tolerance=args.tolerance, seed=args.seed or 0)
    for line in report.lines():
        print(line)
    result = report.to_dict()
    if args.out:
        write_json(args.out, result)
    if not report.passed:
        raise CliError(f"gradcheck failed: max relative error {report.max_error:.3e}")
    return {"passed": True, "max_error": report.max_error, "checked": len(report.entries)}


def cmd_saliency(args) -> dict:
    net, run, _ = _model_from_checkpoint(args.checkpoint)
    if net.config.input_kind == "frame":
        raise CliError("saliency needs a 3D clip model")
    geometry = run.clip_geometry
    data = VideoDataset.from_dir(_split_dir(args.dataset, "test"), geometry)
    ids = [e.id for e in data.entries]
    if args.video_id not in ids:
        raise CliError(f"video {args.video_id!r} not in dataset")
    seq = data.sequence(ids.index(args.video_id))
    start = sample_test_clips(seq.length, geometry.clip_len, 1, run.kind == "residual")[0]
    clip = center_clip(seq, start, run.kind, geometry)
    target = seq.label if args.target is None else args.target
    cam = grad_cam_3d(net, clip.data, target, upsample=True)
    shown = center_clip(seq, start, "rgb", geometry)
    frames = np.floor(np.clip(shown.data * 0.5 + 0.5, 0, 1) * 255 + 0.5).astype(np.uint8)
    write_saliency(args.out, cam, frames.transpose(1, 2, 3, 0))
    return {"out": str(args.out), "target": int(target), "frames": int(cam.shape[0])}


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="resframes", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    g.add_argument("--preset", choices=sorted(SYNTH_PRESETS))
    g.add_argument("--seed", type=int)
    g.add_argument("--n-train", dest="n_train", type=int, help="videos per class")
    g.add_argument("--n-test", dest="n_test", type=int, help="videos per class")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one path and write a checkpoint")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--arch", choices=ARCHS)
    t.add_argument("--kind", choices=("rgb", "residual"))
    t.add_argument("--preset", choices=("scratch", "finetune"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--workers", type=int)
    t.add_argument("--geometry", choices=sorted(GEOMETRIES))
    t.add_argument("--width-multiplier", dest="width_multiplier", type=float)
    t.add_argument("--config")
    t.add_argument("--checkpoint", help="initial weights (finetuning or resuming)")
    t.add_argument("--resume", action="store_true", help="continue from the checkpoint's epoch")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True, help="report path (JSON)")
    e.add_argument("--geometry", choices=sorted(GEOMETRIES))
    e.add_argument("--n-clips", dest="n_clips", type=int)
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("fuse", help="average two reports' class probabilities")
    f.add_argument("motion_report")
    f.add_argument("appearance_report")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fuse)

    d = sub.add_parser("dump-residual", help="write residual frames of one video as images")
    d.add_argument("video", help="frame directory")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dump_residual)

    c = sub.add_parser("gradcheck", help="finite-difference gradient check")
    c.add_argument("--arch", choices=ARCHS + ("layers", "all"), default="all")
    c.add_argument("--tolerance", type=float, default=1e-3)
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("saliency", help="Grad-CAM maps for one test video")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--video-id", dest="video_id", required=True)
    s.add_argument("--target", type=int, help="class to explain (default: true label)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_saliency)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        result = args.func(args)
    except (CliError, RunConfigError) as exc:
        _fail(type(exc).__name__, str(exc))
    except (ValueError, OSError, KeyError, FloatingPointError) as exc:
        _fail(type(exc).__name__, str(exc).replace("\n", " "))
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())

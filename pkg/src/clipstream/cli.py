"""Command-line entry point: synth, train, render, eval, flicker, ablate."""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path

from . import checkpoint
from ._accel import set_threads
from .data import Dataset
from .evaluation import evaluate, report_bytes, run_variants, write_report
from .metrics import flicker, heatmap_image
from .pipeline import render_frame, render_time
from .rasterizer import Camera, save_png, to_uint8
from .scene import ContractViolation
from .synth import SceneSpec, generate
from .trainer import VARIANTS, TrainConfig, TrainLog, train_sequence

log = logging.getLogger("clipstream")


@contextmanager
def staged_dir(out):
    """Build a directory next to ``out`` and move it into place only on success."""
    out = Path(out)
    if out.exists() and any(out.iterdir()):
        raise FileExistsError(f"output directory {out} exists and is not empty")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=out.parent, prefix=f".{out.name}."))
    try:
        yield tmp
        if out.exists():
            out.rmdir()
        tmp.rename(out)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)


def _config(args) -> TrainConfig:
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _camera(spec: str, state) -> Camera:
    """Camera by index into the checkpoint's camera list, or from a JSON file."""
    try:
        idx = int(spec)
    except ValueError:
        return Camera.from_dict(json.loads(Path(spec).read_text()))
    cams = state.meta.get("cameras") or []
    if not 0 <= idx < len(cams):
        raise ValueError(f"camera index {idx} out of range (checkpoint has {len(cams)} cameras)")
    return Camera.from_dict(cams[idx])


def _save_png_atomic(path, img):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=path.parent) as d:
        tmp = Path(d) / path.name
        save_png(tmp, img)
        tmp.replace(path)


def cmd_synth(args):
    spec = SceneSpec.from_json(args.spec) if args.spec else SceneSpec()
    if args.seed is not None:
        spec.seed = args.seed
    with staged_dir(args.out) as tmp:
        ds = generate(spec, tmp)
    print(f"wrote {ds.frames} frames x {len(ds.cameras)} cameras to {args.out}")


def cmd_train(args):
    cfg = _config(args)
    ds = Dataset.load(args.data)
    tl = TrainLog()
    train_sequence(ds, cfg, args.out, resume=args.resume, log_=tl)
    if args.log:
        checkpoint.atomic_write_bytes(args.log, tl.to_csv().encode())
    print(f"trained {cfg.clip_count} clips ({cfg.variant}); checkpoint at {args.out}")


def cmd_render(args):
    state = checkpoint.load(args.ckpt)
    cam = _camera(args.camera, state)
    img = render_frame(state, cam, args.frame) if args.frame is not None else render_time(state, cam, args.time)
    _save_png_atomic(args.out, to_uint8(img))
    print(f"wrote {args.out}")


def cmd_eval(args):
    state = checkpoint.load(args.ckpt)
    ds = Dataset.load(args.data)
    report, heatmaps = evaluate(state, ds, args.cameras)
    write_report(report, heatmaps, args.out)
    print(f"mean held-out PSNR {report['mean_psnr']}; report at {args.out}")


def cmd_flicker(args):
    from .evaluation import static_masks

    state = checkpoint.load(args.ckpt)
    cam = _camera(args.camera, state)
    masks = None
    if args.data:
        if not args.camera.isdigit():
            raise ValueError("static masks need the camera given as a dataset index")
        masks = static_masks(Dataset.load(args.data), int(args.camera))
    rep = flicker(state, cam, masks)
    with staged_dir(args.out) as tmp:
        for (a, b), h in zip(rep.boundaries, rep.heatmaps):
            save_png(tmp / f"boundary_{a}_{b}.png", heatmap_image(h))
        (tmp / "flicker.json").write_bytes(report_bytes(rep.to_dict()))
    print(f"{len(rep.boundaries)} boundaries; mean residual {rep.mean_residual}")


def cmd_ablate(args):
    cfg = _config(args)
    ds = Dataset.load(args.data)
    variants = list(VARIANTS) if "all" in args.variant else args.variant
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = run_variants(ds, cfg, variants, out)
    for v, rep in reports.items():
        checkpoint.atomic_write_bytes(out / f"{v}.json", report_bytes(rep))
        print(f"{v:12s} held-out PSNR {rep['mean_psnr']}  static flicker {rep['mean_static_flicker']:.5f}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clipstream", description="Clip-stream dynamic Gaussian reconstruction")
    p.add_argument("--seed", type=int, default=None, help="override the config/scene seed")
    p.add_argument("--threads", type=int, default=None, help="numba worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic multiview dataset")
    s.add_argument("--spec", help="scene JSON (defaults to the bouncer scene)")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("train", help="train all clips in order")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="checkpoint path (rewritten after each clip)")
    s.add_argument("--log", help="CSV training log")
    s.add_argument("--resume", action="store_true", help="continue from --out if it exists")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("render", help="render one image")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--camera", required=True, help="camera index or camera JSON file")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--time", type=float, help="normalized global time in [0, 1]")
    g.add_argument("--frame", type=int, help="global frame index")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_render)

    s = sub.add_parser("eval", help="held-out metrics and flicker report")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--cameras", type=int, nargs="+", help="defaults to the dataset's test cameras")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("flicker", help="cross-clip residual heatmaps")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--camera", required=True)
    s.add_argument("--data", help="dataset, to restrict the static measure to unchanged pixels")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_flicker)

    s = sub.add_parser("ablate", help="train and evaluate ablation variants")
    s.add_argument("--variant", nargs="+", required=True, choices=list(VARIANTS) + ["all"])
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="working directory for checkpoints and reports")
    s.set_defaults(fn=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    set_threads(args.threads)
    try:
        args.fn(args)
    except (ValueError, KeyError, OSError, ContractViolation, FloatingPointError, json.JSONDecodeError) as e:
        print(f"clipstream {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Held-out evaluation reports and ablation sweeps."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from . import checkpoint
from .data import Dataset
from .metrics import dssim, dssim_luma, flicker, heatmap_image, psnr
from .pipeline import render_frame
from .rasterizer import save_png
from .trainer import TrainConfig, TrainLog, train_sequence

INF_SENTINEL = "inf"


def static_masks(dataset: Dataset, camera: int) -> dict:
    """Boundary index -> pixels whose ground truth is unchanged across that clip boundary."""
    m = dataset.frames_per_clip
    return {n: dataset.static_mask(camera, (n + 1) * m - 1, (n + 1) * m) for n in range(dataset.clip_count - 1)}


def _finite(x: float):
    return x if math.isfinite(x) else INF_SENTINEL


def evaluate(state, dataset: Dataset, cameras=None) -> tuple[dict, list]:
    """Per-view metrics on the held-out cameras plus flicker at each boundary.

    Returns (report, heatmaps) where heatmaps holds (camera, boundary, uint8 image).
    """
    cameras = list(dataset.test_cameras if cameras is None else cameras)
    if not cameras:
        raise ValueError("no evaluation cameras")
    per_view, psnrs = [], []
    for c in cameras:
        for f in range(dataset.frames):
            img = render_frame(state, dataset.cameras[c], f)
            gt = dataset.image(f, c)
            p = psnr(img, gt)
            psnrs.append(p)
            per_view.append({"camera": c, "frame": f, "psnr": _finite(p), "dssim1": dssim(img, gt),
                             "dssim2": dssim_luma(img, gt), "lpips": "n/a"})
    flick, heatmaps = [], []
    for c in cameras:
        rep = flicker(state, dataset.cameras[c], static_masks(dataset, c))
        flick.append({"camera": c, **rep.to_dict()})
        heatmaps += [(c, b[0], heatmap_image(h)) for b, h in zip(rep.boundaries, rep.heatmaps)]
    finite = [p for p in psnrs if math.isfinite(p)]
    report = {
        "cameras": cameras,
        "mean_psnr": _finite(float(np.mean(finite))) if len(finite) == len(psnrs) else INF_SENTINEL,
        "mean_dssim1": float(np.mean([v["dssim1"] for v in per_view])),
        "mean_dssim2": float(np.mean([v["dssim2"] for v in per_view])),
        "mean_flicker": float(np.mean([r for f in flick for r in f["mean_residual"]])) if flick[0]["boundaries"]
        else 0.0,
        "mean_static_flicker": float(np.mean([r for f in flick for r in f["static_mean_residual"]]))
        if flick[0]["boundaries"] else 0.0,
        "per_view": per_view,
        "flicker": flick,
    }
    return report, heatmaps


def report_bytes(report: dict) -> bytes:
    return (json.dumps(report, indent=1, sort_keys=True) + "\n").encode()


def write_report(report: dict, heatmaps: list, out_path) -> None:
    """JSON report plus ``<stem>_heatmap_cam{c}_b{n}.png`` next to it."""
    out_path = Path(out_path)
    for c, n, img in heatmaps:
        save_png(out_path.with_name(f"{out_path.stem}_heatmap_cam{c}_b{n}.png"), img)
    checkpoint.atomic_write_bytes(out_path, report_bytes(report))


def run_variants(dataset: Dataset, config: TrainConfig, variants, workdir, log_: TrainLog | None = None) -> dict:
    """Train each variant and evaluate it; every run resumes from one shared clip-0 checkpoint.

    Clip 0 is trained identically by all variants with per-clip fields, so it is
    trained once for them (and once more for the shared-field variant).
    Returns variant -> report.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    reports = {}
    for v in variants:
        cfg = config.replace(variant=v)
        # a field shared over the sequence runs on global time, so its clip 0 differs
        base = "shared-stf" if not cfg.per_clip_stf else "full"
        ref = workdir / f"clip0_{base}.ckpt"
        if not ref.exists():
            train_sequence(dataset, config.replace(variant=base), ref, log_=log_, stop_after=0)
        path = workdir / f"{v}.ckpt"
        path.write_bytes(ref.read_bytes())
        state = train_sequence(dataset, cfg, path, resume=True, log_=log_)
        reports[v], _ = evaluate(state, dataset)
    return reports

"""Multiview clip dataset: cameras, per-frame images, and per-clip candidate point clouds.

On-disk layout::

    cams.json                      cameras, frame/clip counts, test cameras
    clip_{n}/frame_{f}/cam_{c}.png global frame index f
    clip_{n}/points.ply            fused candidate points of clip n
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ply import read_points, write_points
from .rasterizer import Camera, load_png, save_png, to_uint8


@dataclass
class Dataset:
    cameras: list
    frames: int
    frames_per_clip: int
    images: dict  # (frame, cam) -> (H, W, 3) uint8
    points: list  # per clip: (positions (n, 3) float32, colors (n, 3) uint8 or None)
    test_cameras: list = field(default_factory=lambda: [0])

    @property
    def clip_count(self) -> int:
        return self.frames // self.frames_per_clip

    @property
    def train_cameras(self) -> list:
        return [c for c in range(len(self.cameras)) if c not in self.test_cameras]

    def clip_frames(self, n: int) -> range:
        return range(n * self.frames_per_clip, (n + 1) * self.frames_per_clip)

    def image(self, frame: int, cam: int) -> np.ndarray:
        return self.images[(frame, cam)].astype(np.float32) / 255.0

    def static_mask(self, cam: int, frame_a: int, frame_b: int) -> np.ndarray:
        """Pixels whose ground truth is identical in both frames."""
        return np.all(self.images[(frame_a, cam)] == self.images[(frame_b, cam)], axis=-1)

    def save(self, root) -> None:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        meta = {"frames": self.frames, "frames_per_clip": self.frames_per_clip, "test_cameras": self.test_cameras,
                "cameras": [c.to_dict() for c in self.cameras]}
        (root / "cams.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
        for n in range(self.clip_count):
            cdir = root / f"clip_{n}"
            cdir.mkdir(exist_ok=True)
            pos, col = self.points[n]
            write_points(cdir / "points.ply", pos, col)
            for f in self.clip_frames(n):
                fdir = cdir / f"frame_{f}"
                fdir.mkdir(exist_ok=True)
                for c in range(len(self.cameras)):
                    save_png(fdir / f"cam_{c}.png", self.images[(f, c)])

    @classmethod
    def load(cls, root) -> "Dataset":
        root = Path(root)
        meta = json.loads((root / "cams.json").read_text())
        cams = [Camera.from_dict(d) for d in meta["cameras"]]
        frames, fpc = int(meta["frames"]), int(meta["frames_per_clip"])
        if frames % fpc:
            raise ValueError("frame count is not a multiple of frames_per_clip")
        images, points = {}, []
        for n in range(frames // fpc):
            cdir = root / f"clip_{n}"
            points.append(read_points(cdir / "points.ply"))
            for f in range(n * fpc, (n + 1) * fpc):
                for c in range(len(cams)):
                    images[(f, c)] = to_uint8(load_png(cdir / f"frame_{f}" / f"cam_{c}.png"))
        return cls(cams, frames, fpc, images, points, list(meta.get("test_cameras", [0])))

"""Synthetic multiview dynamic scenes rendered with the package's own rasterizer."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .rasterizer import Camera, render, to_uint8
from .scene import TemporalGaussians


@dataclass
class SceneSpec:
    """Generator settings; defaults give the "bouncer" acceptance scene."""

    static_count: int = 200
    dynamic_count: int = 3
    cameras: int = 8
    frames: int = 30
    frames_per_clip: int = 10
    width: int = 64
    height: int = 64
    plane_half_size: float = 1.0
    static_scale: tuple = (0.07, 0.13)
    static_thickness: float = 0.015
    dynamic_scale: float = 0.11
    dynamic_height: float = 0.25
    dynamic_height_step: float = 0.25  # object i flies at dynamic_height + i * step
    trajectory: str = "circular"  # or "linear"
    orbit_radius: float = 0.55
    revolutions: float = 1.0  # over the whole sequence
    camera_radius: float = 3.2
    camera_height: float = 2.4
    fov_deg: float = 30.0
    noise_factor: float = 0.005  # candidate-point jitter, fraction of the bbox diagonal
    dynamic_samples: int = 4  # candidate points per dynamic Gaussian per frame
    dynamic_spread: float = 0.3  # their spread, fraction of dynamic_scale
    test_cameras: list = field(default_factory=lambda: [0])
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scene keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SceneSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _random_quats_about_z(rng, n):
    th = rng.uniform(0, np.pi, n)
    return np.stack([np.cos(th), np.zeros(n), np.zeros(n), np.sin(th)], axis=1)


@dataclass
class SyntheticScene:
    spec: SceneSpec
    static: TemporalGaussians
    dynamic: TemporalGaussians  # positions at t = 0
    phases: np.ndarray
    centers: np.ndarray
    waypoints: np.ndarray  # (d, 2, 3) for linear trajectories
    cameras: list

    def dynamic_positions(self, t: float) -> np.ndarray:
        s = self.spec
        if len(self.phases) == 0:
            return np.zeros((0, 3))
        if s.trajectory == "circular":
            ang = self.phases + 2 * np.pi * s.revolutions * t
            off = s.orbit_radius * np.stack([np.cos(ang), np.sin(ang), np.zeros_like(ang)], axis=1)
            return self.centers + off
        if s.trajectory == "linear":
            a, b = self.waypoints[:, 0], self.waypoints[:, 1]
            return a + (b - a) * t
        raise ValueError(f"unknown trajectory {s.trajectory!r}")

    def gaussians_at(self, t: float) -> TemporalGaussians:
        dyn = TemporalGaussians(self.dynamic_positions(t), self.dynamic.scales, self.dynamic.rotations,
                                self.dynamic.opacities, self.dynamic.colors)
        return TemporalGaussians.concat([self.static, dyn])

    def bbox(self):
        allp = np.concatenate([self.static.positions] + [self.dynamic_positions(f / self.spec.frames)
                                                         for f in range(self.spec.frames)])
        return allp.min(axis=0), allp.max(axis=0)


def build_scene(spec: SceneSpec) -> SyntheticScene:
    if spec.cameras < 2 or spec.frames < 2:
        raise ValueError("need at least 2 cameras and 2 frames")
    rng = np.random.default_rng(spec.seed)
    h = spec.plane_half_size
    n = spec.static_count
    pos = np.column_stack([rng.uniform(-h, h, (n, 2)), np.zeros(n)])
    sxy = rng.uniform(*spec.static_scale, (n, 2))
    scales = np.column_stack([sxy, np.full(n, spec.static_thickness)])
    colors = rng.uniform(0.1, 0.95, (n, 3))
    static = TemporalGaussians(pos, scales, _random_quats_about_z(rng, n), rng.uniform(0.7, 0.95, n), colors)

    d = spec.dynamic_count
    phases = 2 * np.pi * (np.arange(d) / max(d, 1)) + rng.uniform(0, 0.3, d)
    heights = spec.dynamic_height + spec.dynamic_height_step * np.arange(d)
    centers = np.column_stack([rng.uniform(-0.2, 0.2, (d, 2)), heights])
    ends = np.column_stack([rng.uniform(-h, h, (d, 2)), heights])
    starts = np.column_stack([rng.uniform(-h, h, (d, 2)), heights])
    waypoints = np.stack([starts, ends], axis=1)
    palette = np.array([[1.0, 0.15, 0.1], [0.1, 0.9, 0.2], [0.2, 0.3, 1.0], [1.0, 0.9, 0.1], [0.9, 0.2, 0.9]])
    dyn = TemporalGaussians(np.zeros((d, 3)), np.full((d, 3), spec.dynamic_scale), np.tile([1.0, 0, 0, 0], (d, 1)),
                            np.full(d, 0.95), palette[np.arange(d) % len(palette)])

    cams = []
    for c in range(spec.cameras):
        a = 2 * np.pi * c / spec.cameras
        eye = [spec.camera_radius * np.cos(a), spec.camera_radius * np.sin(a), spec.camera_height]
        cams.append(Camera.look_at(eye, [0, 0, 0], [0, 0, 1], spec.fov_deg, spec.width, spec.height))
    return SyntheticScene(spec, static, dyn, phases, centers, waypoints, cams)


def generate(spec: SceneSpec, out_dir=None) -> Dataset:
    """Render every (camera, frame) and sample noisy per-clip candidate clouds.

    Writes the dataset to ``out_dir`` when given.
    """
    s = spec
    if s.frames % s.frames_per_clip:
        raise ValueError("frames must be a multiple of frames_per_clip")
    scene = build_scene(s)
    rng = np.random.default_rng([s.seed, 1])
    lo, hi = scene.bbox()
    sigma = s.noise_factor * float(np.linalg.norm(hi - lo))

    images = {}
    for f in range(s.frames):
        g = scene.gaussians_at(f / s.frames)
        for c, cam in enumerate(scene.cameras):
            img, _ = render(g, cam)
            images[(f, c)] = to_uint8(img)

    static_rgb = to_uint8(scene.static.colors)
    dyn_rgb = to_uint8(scene.dynamic.colors)
    points = []
    for n in range(s.frames // s.frames_per_clip):
        frames = range(n * s.frames_per_clip, (n + 1) * s.frames_per_clip)
        k = s.dynamic_samples
        dyn = [np.repeat(scene.dynamic_positions(f / s.frames), k, axis=0) for f in frames]
        dyn = [p + rng.normal(0.0, s.dynamic_spread * s.dynamic_scale, p.shape) for p in dyn]
        pos = np.concatenate([scene.static.positions] + dyn)
        col = np.concatenate([static_rgb] + [np.repeat(dyn_rgb, k, axis=0)] * len(dyn))
        pos = pos + rng.normal(0.0, sigma, pos.shape)
        points.append((pos.astype(np.float32), col))

    ds = Dataset(scene.cameras, s.frames, s.frames_per_clip, images, points, list(s.test_cameras))
    if out_dir is not None:
        ds.save(out_dir)
        (Path(out_dir) / "scene.json").write_text(json.dumps(asdict(s), indent=1, sort_keys=True))
    return ds

"""Persistent scene data: anchors, Temporal Gaussians, clips, and the streamed state."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

FEATURE_DIM = 64


class ContractViolation(RuntimeError):
    """A caller broke a precondition that cannot be repaired locally."""


@dataclass(frozen=True)
class Anchor:
    position: np.ndarray
    static_feature: np.ndarray
    frozen: bool
    origin_clip: int


@dataclass
class AnchorSet:
    """Anchors stored column-wise; row order is insertion order, frozen prefix first."""

    positions: np.ndarray
    features: np.ndarray
    frozen: np.ndarray
    origin_clip: np.ndarray

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float32).reshape(-1, 3)
        n = len(self.positions)
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        if self.features.size != n * FEATURE_DIM:
            raise ValueError(f"static features must have {FEATURE_DIM} components per anchor")
        self.features = self.features.reshape(n, FEATURE_DIM)
        self.frozen = np.ascontiguousarray(self.frozen, dtype=bool).reshape(n)
        self.origin_clip = np.ascontiguousarray(self.origin_clip, dtype=np.int32).reshape(n)

    @classmethod
    def empty(cls) -> "AnchorSet":
        return cls(np.zeros((0, 3)), np.zeros((0, FEATURE_DIM)), np.zeros(0, bool), np.zeros(0, np.int32))

    @classmethod
    def from_points(cls, positions, origin_clip: int, features=None, frozen=False) -> "AnchorSet":
        positions = np.asarray(positions, dtype=np.float32).reshape(-1, 3)
        n = len(positions)
        if features is None:
            features = np.zeros((n, FEATURE_DIM), np.float32)
        return cls(positions, features, np.full(n, frozen), np.full(n, origin_clip, np.int32))

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> Anchor:
        return Anchor(self.positions[i], self.features[i], bool(self.frozen[i]), int(self.origin_clip[i]))

    def __iter__(self) -> Iterator[Anchor]:
        return (self[i] for i in range(len(self)))

    @property
    def num_frozen(self) -> int:
        return int(self.frozen.sum())

    def copy(self) -> "AnchorSet":
        return AnchorSet(self.positions.copy(), self.features.copy(), self.frozen.copy(), self.origin_clip.copy())

    def with_frozen(self, frozen: bool) -> "AnchorSet":
        out = self.copy()
        out.frozen[:] = frozen
        return out

    def check_invariants(self, current_clip: int | None = None) -> None:
        n_frozen = self.num_frozen
        if not self.frozen[:n_frozen].all():
            raise ContractViolation("frozen anchors must form a prefix")
        if len(np.unique(self.positions, axis=0)) != len(self):
            raise ContractViolation("duplicate anchor positions")
        if current_clip is not None and n_frozen and self.origin_clip[:n_frozen].max() >= current_clip:
            raise ContractViolation("frozen anchor originates from a clip not older than the current one")


@dataclass
class TemporalGaussians:
    """A batch of renderable primitives valid at one query time (arrays of length n)."""

    positions: np.ndarray  # (n, 3)
    scales: np.ndarray  # (n, 3), > 0
    rotations: np.ndarray  # (n, 4) unit quaternions (w, x, y, z)
    opacities: np.ndarray  # (n,)
    colors: np.ndarray  # (n, 3)

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def concat(cls, parts) -> "TemporalGaussians":
        parts = list(parts)
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                     ("positions", "scales", "rotations", "opacities", "colors")))

    def subset(self, idx) -> "TemporalGaussians":
        return TemporalGaussians(self.positions[idx], self.scales[idx], self.rotations[idx],
                                 self.opacities[idx], self.colors[idx])

    def covariances(self) -> np.ndarray:
        R = quat_to_rotmat(self.rotations)
        M = R * self.scales[:, None, :]
        return M @ np.swapaxes(M, 1, 2)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for unit quaternions in (w, x, y, z) order, shape (n, 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((len(q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass(frozen=True)
class ClipDescriptor:
    clip_index: int
    frame_start: int
    frame_stop: int  # exclusive
    total_frames: int

    @property
    def frame_range(self) -> range:
        return range(self.frame_start, self.frame_stop)

    @property
    def time_span(self) -> tuple[float, float]:
        return self.frame_start / self.total_frames, self.frame_stop / self.total_frames

    def local_time(self, t: float) -> float:
        """Renormalize a global time into [0, 1] within this clip."""
        t0, t1 = self.time_span
        return (t - t0) / (t1 - t0)

    def frame_time(self, frame: int) -> float:
        return frame / self.total_frames


def make_clips(clip_count: int, frames_per_clip: int) -> list[ClipDescriptor]:
    if clip_count < 1 or frames_per_clip < 1:
        raise ValueError("clip_count and frames_per_clip must be positive")
    total = clip_count * frames_per_clip
    return [ClipDescriptor(n, n * frames_per_clip, (n + 1) * frames_per_clip, total) for n in range(clip_count)]


def clip_for_time(t: float, clip_count: int) -> int:
    return int(min(max(np.floor(t * clip_count), 0), clip_count - 1))


def compose_positions(anchor_position, offsets, offset_scale) -> np.ndarray:
    """Neural Gaussian centers: anchor + offset * per-axis scale.

    Broadcasts over leading anchor dimensions, so ``anchor_position`` may be
    (3,) with offsets (k, 3), or (n, 3) with offsets (n, k, 3).
    """
    offset_scale = np.asarray(offset_scale, dtype=np.float64)
    if np.any(offset_scale <= 0):
        raise ValueError("offset_scale components must be positive")
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.shape[-2] < 1:
        raise ValueError("need at least one offset per anchor")
    anchor_position = np.asarray(anchor_position, dtype=np.float64)
    return anchor_position[..., None, :] + offsets * offset_scale


def merge_anchor_sets(base: AnchorSet, residual: AnchorSet) -> AnchorSet:
    """Frozen base followed by trainable residual anchors."""
    if len(base) and len(residual):
        b = {p.tobytes() for p in base.positions}
        if any(p.tobytes() in b for p in residual.positions):
            raise ContractViolation("residual anchor collides with a base anchor; was dedup skipped?")
    return AnchorSet(
        np.concatenate([base.positions, residual.positions]),
        np.concatenate([base.features, residual.features]),
        np.concatenate([np.ones(len(base), bool), np.zeros(len(residual), bool)]),
        np.concatenate([base.origin_clip, residual.origin_clip]),
    )


@dataclass
class SceneState:
    """The streamed representation after some number of trained clips.

    ``clip_decoders`` and ``clip_base_anchors`` stay empty for the full method;
    ablation variants that retrain inherited parts store their per-clip copies there.
    """

    reference_anchors: AnchorSet
    decoder: "DecoderHeads"  # noqa: F821
    clip_count: int
    frames_per_clip: int
    offset_scale: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    stf_registry: dict = field(default_factory=dict)
    residual_registry: dict = field(default_factory=dict)
    clip_decoders: dict = field(default_factory=dict)
    clip_base_anchors: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.offset_scale = np.asarray(self.offset_scale, dtype=np.float32).reshape(3)
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float32).reshape(3)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float32).reshape(3)

    @property
    def clips(self) -> list[ClipDescriptor]:
        return make_clips(self.clip_count, self.frames_per_clip)

    @property
    def trained_clips(self) -> list[int]:
        return sorted(self.stf_registry)

    def anchors_for_clip(self, n: int) -> AnchorSet:
        base = self.clip_base_anchors.get(n, self.reference_anchors)
        residual = self.residual_registry.get(n)
        if n == 0 or residual is None:
            return base
        return merge_anchor_sets(base, residual)

    def decoder_for_clip(self, n: int):
        return self.clip_decoders.get(n, self.decoder)

    def normalize_positions(self, positions: np.ndarray) -> np.ndarray:
        lo = self.bbox_min.astype(np.float64)
        extent = np.maximum(self.bbox_max.astype(np.float64) - lo, 1e-12)
        return (np.asarray(positions, dtype=np.float64) - lo) / extent

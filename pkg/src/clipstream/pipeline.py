"""Forward/backward composition for one clip: field -> decoder -> projection -> blending."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoder import DecoderHeads, decode, decode_backward
from .rasterizer import Camera, render, render_backward
from .scene import SceneState
from .stf import SpatioTemporalField, stf_backward, stf_forward


@dataclass
class ClipModel:
    """Everything needed to render one clip.

    ``positions`` and ``features`` cover all anchors of the clip (frozen prefix
    first); arrays may be float64 working copies during training.
    """

    positions: np.ndarray
    features: np.ndarray
    field: SpatioTemporalField
    decoder: DecoderHeads
    offset_scale: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray

    @property
    def extent(self) -> np.ndarray:
        return np.maximum(np.asarray(self.bbox_max, np.float64) - self.bbox_min, 1e-12)

    def normalized(self) -> np.ndarray:
        return (np.asarray(self.positions, np.float64) - self.bbox_min) / self.extent

    def decode_at(self, local_time: float):
        fd, sctx = stf_forward(self.field, self.normalized(), local_time)
        g, dctx = decode(self.decoder, self.features, fd, self.positions, self.offset_scale)
        return g, (sctx, dctx)

    def forward(self, camera: Camera, local_time: float):
        g, (sctx, dctx) = self.decode_at(local_time)
        img, rctx = render(g, camera)
        return img, (g, sctx, dctx, rctx)

    def active_ids(self, cache) -> np.ndarray:
        return cache[3][0].ids

    def backward(self, cache, d_image, d_scales_extra=None, want=("positions", "features", "field", "decoder")):
        """Gradients for the requested parameter groups.

        ``d_scales_extra`` is an (n_gaussians, 3) gradient added at the decoded
        scales (used by the volume regularizer).
        """
        g, sctx, dctx, rctx = cache
        d_pos, d_scale, d_rot, d_op, d_col = render_backward(g, rctx, d_image)
        if d_scales_extra is not None:
            d_scale = d_scale + d_scales_extra
        dec_grads, d_fs, d_fd, d_anchor = decode_backward(self.decoder, dctx, d_pos, d_scale, d_rot, d_op, d_col,
                                                          need_param_grads="decoder" in want)
        out = {}
        if "decoder" in want:
            out["decoder"] = dec_grads
        if "features" in want:
            out["features"] = d_fs
        need_field = "field" in want or "positions" in want
        if need_field:
            f_grads, d_norm = stf_backward(self.field, sctx, d_fd, grad_positions="positions" in want)
            if "field" in want:
                out["field"] = f_grads
            if "positions" in want:
                out["positions"] = d_anchor + d_norm / self.extent
        return out


def clip_model(state: SceneState, n: int) -> ClipModel:
    anchors = state.anchors_for_clip(n)
    return ClipModel(anchors.positions, anchors.features, state.stf_registry[n], state.decoder_for_clip(n),
                     state.offset_scale, state.bbox_min.astype(np.float64), state.bbox_max.astype(np.float64))


def field_time(frame: float, frames_per_clip: int, clip_count: int, shared: bool = False) -> float:
    """Time coordinate fed to the field for a (possibly fractional) global frame index.

    Per-clip fields see clip-local time (frame - nM) / M; one field shared by all
    clips sees global time frame / (N M) so clips do not alias onto each other.
    """
    if shared:
        return float(frame) / (frames_per_clip * clip_count)
    n = min(int(frame // frames_per_clip), clip_count - 1)
    return (frame - n * frames_per_clip) / frames_per_clip


def frame_local_time(state: SceneState, frame: int) -> tuple[int, float]:
    """(clip index, field time) for a global frame index."""
    n = min(frame // state.frames_per_clip, state.clip_count - 1)
    return n, field_time(frame, state.frames_per_clip, state.clip_count, bool(state.meta.get("shared_stf")))


def render_frame(state: SceneState, camera: Camera, frame: int) -> np.ndarray:
    n, t = frame_local_time(state, frame)
    img, _ = clip_model(state, n).forward(camera, t)
    return img


def render_time(state: SceneState, camera: Camera, t: float) -> np.ndarray:
    """Render at normalized global time t in [0, 1]."""
    total = state.clip_count * state.frames_per_clip
    frame = float(np.clip(t, 0.0, 1.0)) * total
    n = min(int(frame // state.frames_per_clip), state.clip_count - 1)
    ft = field_time(frame, state.frames_per_clip, state.clip_count, bool(state.meta.get("shared_stf")))
    img, _ = clip_model(state, n).forward(camera, float(np.clip(ft, 0.0, 1.0)))
    return img

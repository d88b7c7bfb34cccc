"""Attribute decoder: concatenated static/dynamic features -> k Temporal Gaussians per anchor."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import TwoLayerMLP
from .scene import FEATURE_DIM, TemporalGaussians, compose_positions

HEAD_ORDER = ("offset", "scale", "rotation", "opacity", "color")
HEAD_WIDTH = {"offset": 3, "scale": 3, "rotation": 4, "opacity": 1, "color": 3}
_IDENTITY_Q = np.array([1.0, 0.0, 0.0, 0.0])


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class DecoderHeads:
    def __init__(self, k: int, max_scale: float, rng: np.random.Generator | None = None, hidden: int = 64,
                 heads: dict | None = None, frozen: bool = False):
        if k < 1 or max_scale <= 0:
            raise ValueError("need k >= 1 and a positive max_scale")
        self.k = int(k)
        self.max_scale = float(max_scale)
        self.hidden = hidden
        self.frozen = frozen
        if heads is not None:
            self.heads = {name: heads[name] for name in HEAD_ORDER}
            return
        rng = rng if rng is not None else np.random.default_rng(0)
        self.heads = {name: TwoLayerMLP(2 * FEATURE_DIM, hidden, self.k * HEAD_WIDTH[name], rng=rng)
                      for name in HEAD_ORDER}

    def copy(self) -> "DecoderHeads":
        return DecoderHeads(self.k, self.max_scale, hidden=self.hidden, frozen=self.frozen,
                            heads={n: h.copy() for n, h in self.heads.items()})

    def param_arrays(self) -> dict:
        return {f"{n}.{p}": a for n in HEAD_ORDER for p, a in self.heads[n].params.items()}

    def set_param_arrays(self, arrays: dict) -> None:
        for key, a in arrays.items():
            n, p = key.split(".")
            self.heads[n].params[p] = a

    def zero_(self) -> "DecoderHeads":
        for h in self.heads.values():
            for a in h.params.values():
                a[...] = 0
        return self


@dataclass
class DecodeContext:
    n: int
    caches: dict
    raw: dict
    scales: np.ndarray
    quat_raw: np.ndarray
    quat_norm: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    offset_scale: np.ndarray


def decode(heads: DecoderHeads, static_features, dynamic_features, anchor_positions, offset_scale):
    """Decode k Gaussians for each of n anchors. Returns (TemporalGaussians, context)."""
    fs = np.asarray(static_features, dtype=np.float64).reshape(-1, FEATURE_DIM)
    fd = np.asarray(dynamic_features, dtype=np.float64).reshape(-1, FEATURE_DIM)
    mu = np.asarray(anchor_positions, dtype=np.float64).reshape(-1, 3)
    if not (len(fs) == len(fd) == len(mu)):
        raise ValueError("feature and position counts differ")
    if not (np.isfinite(fs).all() and np.isfinite(fd).all()):
        raise ValueError("non-finite feature input")
    n, k = len(fs), heads.k
    x = np.concatenate([fs, fd], axis=1)
    raw, caches = {}, {}
    for name in HEAD_ORDER:
        raw[name], caches[name] = heads.heads[name].forward(x)

    offsets = raw["offset"].reshape(n, k, 3)
    positions = compose_positions(mu, offsets, offset_scale).reshape(n * k, 3)
    scales = heads.max_scale * sigmoid(raw["scale"]).reshape(n * k, 3)
    q = raw["rotation"].reshape(n * k, 4) + _IDENTITY_Q
    qn = np.linalg.norm(q, axis=1, keepdims=True)
    degenerate = qn[:, 0] < 1e-12
    rotations = q / np.where(qn < 1e-12, 1.0, qn)
    rotations[degenerate] = _IDENTITY_Q
    opacities = sigmoid(raw["opacity"]).reshape(n * k)
    colors = sigmoid(raw["color"]).reshape(n * k, 3)
    g = TemporalGaussians(positions, scales, rotations, opacities, colors)
    ctx = DecodeContext(n, caches, raw, scales, q, qn, opacities, colors, np.asarray(offset_scale, np.float64))
    return g, ctx


def decode_static_only(heads, static_features, anchor_positions, offset_scale):
    fs = np.asarray(static_features, dtype=np.float64).reshape(-1, FEATURE_DIM)
    return decode(heads, fs, np.zeros_like(fs), anchor_positions, offset_scale)


def decode_dynamic_only(heads, dynamic_features, anchor_positions, offset_scale):
    fd = np.asarray(dynamic_features, dtype=np.float64).reshape(-1, FEATURE_DIM)
    return decode(heads, np.zeros_like(fd), fd, anchor_positions, offset_scale)


def decode_backward(heads: DecoderHeads, ctx: DecodeContext, d_positions, d_scales, d_rotations,
                    d_opacities, d_colors, need_param_grads=True):
    """Reverse of :func:`decode`.

    Returns (param_grads or None, d_static (n,64), d_dynamic (n,64), d_anchor_positions (n,3)).
    """
    n, k = ctx.n, heads.k
    dpos = np.asarray(d_positions, dtype=np.float64).reshape(n, k, 3)
    draw = {}
    draw["offset"] = (dpos * ctx.offset_scale).reshape(n, k * 3)
    s = ctx.scales / heads.max_scale
    draw["scale"] = (np.asarray(d_scales).reshape(n * k, 3) * heads.max_scale * s * (1 - s)).reshape(n, k * 3)
    dq = np.asarray(d_rotations, dtype=np.float64).reshape(n * k, 4)
    qn = np.where(ctx.quat_norm < 1e-12, np.inf, ctx.quat_norm)
    u = ctx.quat_raw / qn
    draw["rotation"] = ((dq - u * np.sum(dq * u, axis=1, keepdims=True)) / qn).reshape(n, k * 4)
    o = ctx.opacities
    draw["opacity"] = (np.asarray(d_opacities).reshape(n * k) * o * (1 - o)).reshape(n, k)
    c = ctx.colors
    draw["color"] = (np.asarray(d_colors).reshape(n * k, 3) * c * (1 - c)).reshape(n, k * 3)

    grads = {} if need_param_grads else None
    dx = np.zeros((n, 2 * FEATURE_DIM))
    for name in HEAD_ORDER:
        g, d = heads.heads[name].backward(ctx.caches[name], draw[name])
        dx += d
        if need_param_grads:
            grads.update({f"{name}.{p}": v for p, v in g.items()})
    d_anchor = dpos.sum(axis=1)
    return grads, dx[:, :FEATURE_DIM], dx[:, FEATURE_DIM:], d_anchor

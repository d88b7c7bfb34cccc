"""Clip-stream training: reference clip, source clips on top of it, and whole sequences."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import checkpoint
from .data import Dataset
from .decoder import DecoderHeads
from .dedup import CoverageField
from .kernels.adam import adam_step
from .metrics import ssim, ssim_with_grad
from .pipeline import ClipModel, field_time
from .scene import AnchorSet, ContractViolation, SceneState
from .stf import SpatioTemporalField

log = logging.getLogger(__name__)

VARIANTS = ("full", "no-rac", "no-di", "no-ai", "shared-stf", "independent")
LOG_COLUMNS = ("clip", "iteration", "L1", "SSIM", "Lv", "total", "position_lr")


@dataclass
class TrainConfig:
    lambda_ssim: float = 0.2
    lambda_v: float = 0.01
    reference_iterations: int = 10_000
    iterations_per_clip: int = 5_000  # each source clip
    frames_per_clip: int = 10
    clip_count: int = 3
    # position rates are multiples of the scene bounding-box diagonal
    lr_position_init: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_position_decay_steps: int = 0  # 0: decay over the clip's iterations
    lr_static_feature: float = 7.5e-3
    lr_stf_table: float = 1e-2
    lr_stf_mlp: float = 1e-3
    lr_decoder: float = 2e-3
    lr_final_ratio: float = 1.0  # non-position rates decay log-linearly to this fraction per clip
    k: int = 4
    offset_scale_factor: float = 0.01  # x bbox diagonal
    max_scale_factor: float = 0.05  # x bbox diagonal
    bbox_margin: float = 0.1
    feature_init_std: float = 0.01
    stf_levels: int = 8
    stf_base_resolution: int = 8
    stf_max_resolution: int = 128
    stf_log2_table_size: int = 16
    stf_features_per_entry: int = 4
    hidden_width: int = 64
    seed: int = 0
    variant: str = "full"
    log_every: int = 10

    def __post_init__(self):
        if not 0.0 <= self.lambda_ssim < 1.0:
            raise ValueError("lambda_ssim must lie in [0, 1)")
        if self.lambda_v < 0:
            raise ValueError("lambda_v must be non-negative")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not 0.0 < self.lr_final_ratio <= 1.0:
            raise ValueError("lr_final_ratio must lie in (0, 1]")
        if self.k < 1 or self.frames_per_clip < 1 or self.clip_count < 1:
            raise ValueError("k, frames_per_clip and clip_count must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **kw) -> "TrainConfig":
        return TrainConfig.from_dict({**self.to_dict(), **kw})

    # ablation gates, all derived from ``variant``
    @property
    def residual_compensation(self) -> bool:
        return self.variant != "no-rac"

    @property
    def decoder_inheritance(self) -> bool:
        return self.variant not in ("no-di", "independent")

    @property
    def anchor_inheritance(self) -> bool:
        return self.variant not in ("no-ai", "independent")

    @property
    def per_clip_stf(self) -> bool:
        return self.variant != "shared-stf"

    @property
    def independent(self) -> bool:
        return self.variant == "independent"


# --------------------------------------------------------------------------- loss


def compute_loss(rendered, ground_truth, active_scales, lambda_ssim: float, lambda_v: float):
    """Photometric + volume loss.

    Returns (total, parts, d_rendered, d_active_scales) where parts holds L1,
    SSIM, L_SSIM and Lv.
    """
    r = np.asarray(rendered, dtype=np.float64)
    g = np.asarray(ground_truth, dtype=np.float64)
    if r.shape != g.shape:
        raise ValueError(f"rendered {r.shape} and ground truth {g.shape} differ in shape")
    diff = r - g
    l1 = float(np.abs(diff).mean())
    d_l1 = np.sign(diff) / diff.size
    if lambda_ssim > 0:
        s, ds = ssim_with_grad(r, g)
    else:
        s, ds = ssim(r, g), np.zeros_like(r)
    l_ssim = 1.0 - s
    sc = np.asarray(active_scales, dtype=np.float64).reshape(-1, 3)
    # summed in extended precision and rounded once
    lv = float(np.prod(sc.astype(np.longdouble), axis=1).sum()) if len(sc) else 0.0
    d_sc = np.stack([sc[:, 1] * sc[:, 2], sc[:, 0] * sc[:, 2], sc[:, 0] * sc[:, 1]], axis=1)
    total = (1.0 - lambda_ssim) * l1 + lambda_ssim * l_ssim + lambda_v * lv
    d_r = (1.0 - lambda_ssim) * d_l1 - lambda_ssim * ds
    return total, {"L1": l1, "SSIM": s, "L_SSIM": l_ssim, "Lv": lv}, d_r, lambda_v * d_sc


# --------------------------------------------------------------------------- optimizer


class Adam:
    """Adam over named float64 arrays, updated in place."""

    def __init__(self, betas=(0.9, 0.999), eps=1e-15):
        self.b1, self.b2 = betas
        self.eps = eps
        self.groups: dict = {}
        self.steps = 0

    def add(self, name: str, param: np.ndarray, lr: float) -> None:
        if param.dtype != np.float64 or not param.flags.c_contiguous:
            raise ValueError(f"group {name}: parameters must be contiguous float64")
        self.groups[name] = {"param": param, "m": np.zeros(param.size), "v": np.zeros(param.size), "lr": lr}

    def set_lr(self, name: str, lr: float) -> None:
        self.groups[name]["lr"] = lr

    def references(self, arr: np.ndarray) -> bool:
        return any(np.shares_memory(g["param"], arr) for g in self.groups.values())

    def step(self, grads: dict) -> None:
        self.steps += 1
        for name, g in self.groups.items():
            grad = grads.get(name)
            if grad is None:
                continue
            adam_step(g["param"].reshape(-1), np.ascontiguousarray(grad, dtype=np.float64).reshape(-1),
                      g["m"], g["v"], g["lr"], self.b1, self.b2, self.eps, self.steps)


def expon_lr(step: int, lr_init: float, lr_final: float, max_steps: int) -> float:
    """Log-linear decay from lr_init to lr_final over max_steps, then flat."""
    if max_steps <= 0:
        return lr_init
    t = min(max(step / max_steps, 0.0), 1.0)
    return float(np.exp(np.log(lr_init) * (1 - t) + np.log(lr_final) * t))


# --------------------------------------------------------------------------- helpers


def _to64(obj):
    obj.set_param_arrays({k: np.array(v, dtype=np.float64, order="C") for k, v in obj.param_arrays().items()})
    return obj


def _to32(obj):
    obj.set_param_arrays({k: np.asarray(v, dtype=np.float32).copy() for k, v in obj.param_arrays().items()})
    return obj


def _unique_rows(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    _, idx = np.unique(pts, axis=0, return_index=True)
    return pts[np.sort(idx)]


def _clip_rng(cfg: TrainConfig, n: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, n])


def _new_field(cfg: TrainConfig, rng) -> SpatioTemporalField:
    return SpatioTemporalField.create(rng, cfg.stf_levels, cfg.stf_base_resolution, cfg.stf_max_resolution,
                                      cfg.stf_log2_table_size, cfg.stf_features_per_entry, cfg.hidden_width)


class TrainLog:
    def __init__(self):
        self.rows: list = []

    def add(self, clip, iteration, parts, total, lr):
        self.rows.append((clip, iteration, parts["L1"], parts["SSIM"], parts["Lv"], total, lr))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.rows:
            w.writerow([r[0], r[1]] + [repr(float(x)) for x in r[2:]])
        return buf.getvalue()

    def totals(self, clip: int) -> list:
        return [(r[1], r[5]) for r in self.rows if r[0] == clip]


def _check_dataset(dataset: Dataset, cfg: TrainConfig):
    if dataset.frames_per_clip != cfg.frames_per_clip or dataset.clip_count != cfg.clip_count:
        raise ValueError(f"config expects {cfg.clip_count} clips x {cfg.frames_per_clip} frames, dataset has "
                         f"{dataset.clip_count} x {dataset.frames_per_clip}")
    if not dataset.train_cameras:
        raise ValueError("dataset has no training cameras")


def _optimize(model: ClipModel, opt: Adam, want, grad_map, dataset: Dataset, n: int, iterations: int,
              cfg: TrainConfig, rng, diag: float, log_: TrainLog | None):
    pairs = [(c, f) for f in dataset.clip_frames(n) for c in dataset.train_cameras]
    decay = cfg.lr_position_decay_steps or iterations
    order, cursor = None, len(pairs)
    base_lr = {name: g["lr"] for name, g in opt.groups.items()}
    for it in range(iterations):
        if cursor >= len(pairs):
            order, cursor = rng.permutation(len(pairs)), 0
        cam, frame = pairs[order[cursor]]
        cursor += 1
        lr_pos = diag * expon_lr(it, cfg.lr_position_init, cfg.lr_position_final, decay)
        factor = expon_lr(it, 1.0, cfg.lr_final_ratio, decay)
        for name, base in base_lr.items():
            opt.set_lr(name, lr_pos if name == "positions" else base * factor)
        img, cache = model.forward(dataset.cameras[cam],
                                   field_time(frame, cfg.frames_per_clip, cfg.clip_count, not cfg.per_clip_stf))
        g = cache[0]
        ids = model.active_ids(cache)
        total, parts, d_img, d_sc = compute_loss(img, dataset.image(frame, cam), g.scales[ids],
                                                 cfg.lambda_ssim, cfg.lambda_v)
        if not np.isfinite(total):
            raise FloatingPointError(f"non-finite loss at clip {n} iteration {it}")
        d_extra = np.zeros_like(g.scales)
        d_extra[ids] = d_sc
        grads = model.backward(cache, d_img, d_extra, want=want)
        opt.step(grad_map(grads))
        if log_ is not None and (it % cfg.log_every == 0 or it == iterations - 1):
            log_.add(n, it, parts, total, lr_pos)


def _add_field_groups(opt: Adam, field: SpatioTemporalField, cfg: TrainConfig):
    for k, a in field.param_arrays().items():
        opt.add(f"field.{k}", a, cfg.lr_stf_table if k == "tables" else cfg.lr_stf_mlp)


def _add_decoder_groups(opt: Adam, dec: DecoderHeads, cfg: TrainConfig):
    for k, a in dec.param_arrays().items():
        opt.add(f"decoder.{k}", a, cfg.lr_decoder)


def _grad_mapper(row_slice: slice | None):
    def mapper(grads):
        out = {}
        if "positions" in grads:
            out["positions"] = grads["positions"][row_slice]
        if "features" in grads:
            out["features"] = grads["features"][row_slice]
        for k, v in grads.get("field", {}).items():
            out[f"field.{k}"] = v
        for k, v in (grads.get("decoder") or {}).items():
            out[f"decoder.{k}"] = v
        return out

    return mapper


# --------------------------------------------------------------------------- stages


def _fit_from_scratch(dataset, n, points, cfg, iterations, rng, bbox_min, bbox_max, offset_scale, max_scale,
                      log_):
    """Jointly optimize fresh anchors, features, field and decoder on clip n."""
    pos = np.array(_unique_rows(points), dtype=np.float64)
    if len(pos) == 0:
        raise ValueError("empty initial point cloud")
    feats = rng.normal(0.0, cfg.feature_init_std, (len(pos), 64))
    field = _to64(_new_field(cfg, rng))
    dec = _to64(DecoderHeads(cfg.k, max_scale, rng=rng, hidden=cfg.hidden_width))
    model = ClipModel(pos, feats, field, dec, offset_scale, bbox_min.astype(np.float64), bbox_max.astype(np.float64))
    opt = Adam()
    opt.add("positions", pos, 0.0)
    opt.add("features", feats, cfg.lr_static_feature)
    _add_field_groups(opt, field, cfg)
    _add_decoder_groups(opt, dec, cfg)
    diag = float(np.linalg.norm(bbox_max.astype(np.float64) - bbox_min))
    _optimize(model, opt, ("positions", "features", "field", "decoder"), _grad_mapper(slice(None)), dataset, n,
              iterations, cfg, rng, diag, log_)
    anchors = AnchorSet.from_points(pos.astype(np.float32), n, features=feats.astype(np.float32))
    return anchors, _to32(field), _to32(dec)


def scene_bounds(points, margin: float):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = margin * np.maximum(hi - lo, 1e-3)
    return (lo - pad).astype(np.float32), (hi + pad).astype(np.float32)


def train_reference_clip(dataset: Dataset, init_points, config: TrainConfig, log_: TrainLog | None = None
                         ) -> SceneState:
    """Train clip 0 from its fused point cloud; the returned reference parts are frozen."""
    cfg = config
    _check_dataset(dataset, cfg)
    pts = np.asarray(init_points, dtype=np.float32).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("empty init_points")
    bbox_min, bbox_max = scene_bounds(pts, cfg.bbox_margin)
    diag = float(np.linalg.norm(bbox_max.astype(np.float64) - bbox_min))
    offset_scale = np.full(3, cfg.offset_scale_factor * diag, dtype=np.float32)
    max_scale = cfg.max_scale_factor * diag
    rng = _clip_rng(cfg, 0)
    anchors, field, dec = _fit_from_scratch(dataset, 0, pts, cfg, cfg.reference_iterations, rng, bbox_min, bbox_max,
                                            offset_scale.astype(np.float64), max_scale, log_)
    dec.frozen = True
    state = SceneState(anchors.with_frozen(True), dec, cfg.clip_count, cfg.frames_per_clip, offset_scale,
                       bbox_min, bbox_max, meta={"variant": cfg.variant, "seed": cfg.seed,
                                                 "shared_stf": not cfg.per_clip_stf,
                                                 "cameras": [c.to_dict() for c in dataset.cameras],
                                                 "test_cameras": list(dataset.test_cameras)})
    state.stf_registry[0] = field
    return state


def train_source_clip(state: SceneState, dataset: Dataset, n: int, candidate_points, config: TrainConfig,
                      log_: TrainLog | None = None) -> SceneState:
    """Train source clip n on top of the frozen reference parts (mutates and returns ``state``)."""
    cfg = config
    if n < 1 or 0 not in state.stf_registry:
        raise ContractViolation("source clips need a trained reference clip and n >= 1")
    _check_dataset(dataset, cfg)
    rng = _clip_rng(cfg, n)
    diag = float(np.linalg.norm(state.bbox_max.astype(np.float64) - state.bbox_min))
    offset_scale = state.offset_scale.astype(np.float64)
    digest_before = checkpoint.frozen_digest(state)
    cand = np.asarray(candidate_points, dtype=np.float32).reshape(-1, 3)

    if cfg.independent:
        anchors, field, dec = _fit_from_scratch(dataset, n, cand, cfg, cfg.iterations_per_clip, rng, state.bbox_min,
                                                state.bbox_max, offset_scale, state.decoder.max_scale, log_)
        state.clip_base_anchors[n] = anchors
        state.clip_decoders[n] = dec
        state.residual_registry[n] = AnchorSet.empty()
        state.stf_registry[n] = field
        return state

    base = state.reference_anchors
    if cfg.residual_compensation and len(cand):
        keep = CoverageField.build(base.positions).sdf(cand) > 0.0
        residual_pts = _unique_rows(cand[keep])
    else:
        residual_pts = np.zeros((0, 3), np.float32)
    n0, nr = len(base), len(residual_pts)
    log.info("clip %d: %d candidates -> %d residual anchors", n, len(cand), nr)

    pos = np.concatenate([base.positions, residual_pts]).astype(np.float64)
    feats = np.concatenate([base.features, np.zeros((nr, 64), np.float32)]).astype(np.float64)
    if cfg.per_clip_stf:
        field = _to64(_new_field(cfg, rng))
    else:
        field = _to64(state.stf_registry[n - 1])
    dec = state.decoder if cfg.decoder_inheritance else _to64(
        DecoderHeads(cfg.k, state.decoder.max_scale, rng=rng, hidden=cfg.hidden_width))
    model = ClipModel(pos, feats, field, dec, offset_scale, state.bbox_min.astype(np.float64),
                      state.bbox_max.astype(np.float64))

    trainable = slice(None) if not cfg.anchor_inheritance else slice(n0, None)
    opt = Adam()
    want = ["field"]
    if pos[trainable].size:
        opt.add("positions", pos[trainable], 0.0)
        opt.add("features", feats[trainable], cfg.lr_static_feature)
        want += ["positions", "features"]
    _add_field_groups(opt, field, cfg)
    if not cfg.decoder_inheritance:
        _add_decoder_groups(opt, dec, cfg)
        want.append("decoder")
    if cfg.anchor_inheritance and (opt.references(base.positions) or opt.references(base.features)):
        raise ContractViolation("optimizer references a frozen tensor")
    _optimize(model, opt, tuple(want), _grad_mapper(trainable), dataset, n, cfg.iterations_per_clip, cfg, rng, diag,
              log_)

    state.residual_registry[n] = AnchorSet.from_points(pos[n0:].astype(np.float32), n,
                                                       features=feats[n0:].astype(np.float32))
    if not cfg.anchor_inheritance:
        state.clip_base_anchors[n] = AnchorSet(pos[:n0].astype(np.float32), feats[:n0].astype(np.float32),
                                               np.zeros(n0, bool), base.origin_clip.copy())
    if not cfg.decoder_inheritance:
        state.clip_decoders[n] = _to32(dec)
    _to32(field)
    if cfg.per_clip_stf:
        state.stf_registry[n] = field
    else:
        for m in range(n + 1):
            state.stf_registry[m] = field
    if checkpoint.frozen_digest(state) != digest_before:
        raise ContractViolation("frozen reference components changed during source-clip training")
    return state


def train_sequence(dataset: Dataset, config: TrainConfig, checkpoint_path=None, resume: bool = False,
                   log_: TrainLog | None = None, stop_after: int | None = None) -> SceneState:
    """Reference clip then every source clip in order, checkpointing after each clip.

    With ``resume`` and an existing checkpoint, already-trained clips are skipped.
    ``stop_after`` ends the run after that clip index (used to simulate interruption).
    """
    cfg = config
    _check_dataset(dataset, cfg)
    state = None
    if resume and checkpoint_path is not None and Path(checkpoint_path).exists():
        state = checkpoint.load(checkpoint_path)
        if state.clip_count != cfg.clip_count or state.frames_per_clip != cfg.frames_per_clip:
            raise ContractViolation("checkpoint does not match the configured clip layout")
        if bool(state.meta.get("shared_stf")) != (not cfg.per_clip_stf):
            raise ContractViolation("checkpoint and config disagree on whether the field is shared across clips")
        state.meta["variant"] = cfg.variant
        log.info("resuming after clip %d", max(state.stf_registry))
    if state is None:
        state = train_reference_clip(dataset, dataset.points[0][0], cfg, log_)
        if checkpoint_path is not None:
            checkpoint.save(state, checkpoint_path)
    if stop_after == 0:
        return state
    for n in range(max(state.stf_registry) + 1, cfg.clip_count):
        train_source_clip(state, dataset, n, dataset.points[n][0], cfg, log_)
        if checkpoint_path is not None:
            checkpoint.save(state, checkpoint_path)
        if stop_after is not None and n >= stop_after:
            break
    return state

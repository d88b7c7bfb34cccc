"""Binary checkpoint container for a SceneState.

Layout (all integers little-endian)::

    b"CLIPSTRM"  u32 version  u32 header_len  header (UTF-8 JSON, sorted keys)
    section*     tag[4]  u32 name_len  name  u64 payload_len  payload
    b"END_"

Sections, in this order:

    ANCH "reference"      anchor table of the reference clip
    DECO "reference"      shared decoder
    STF_ "clip/{n}"       one per trained clip, ascending n
    ANCH "residual/{n}"   residual anchors of source clip n
    ANCH "base/{n}"       per-clip base anchors (ablation variants only)
    DECO "clip/{n}"       per-clip decoders (ablation variants only)

Anchor table payload: u32 count, float32 positions (count*3), float32 features
(count*64), uint8 frozen flags (count), int32 origin clips (count).
Array payloads (``_put_array``): u32 ndim, u32 dims..., raw little-endian data.
Decoder payload: u32 k, f64 max_scale, u32 hidden, u8 frozen, then the heads in
order offset, scale, rotation, opacity, color, each as arrays w1 b1 w2 b2.
Field payload: arrays resolutions (int64) and tables, then MLP arrays w1 b1 w2 b2.
Floats are stored as float32, so a load reproduces a saved state bit-exactly.
"""
from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .decoder import HEAD_ORDER, DecoderHeads
from .nn import PARAM_NAMES, TwoLayerMLP
from .scene import AnchorSet, SceneState
from .stf import HashGrid4D, SpatioTemporalField

MAGIC = b"CLIPSTRM"
VERSION = 1


def _put_array(buf, arr, dtype):
    arr = np.ascontiguousarray(arr, dtype=dtype)
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(arr.tobytes())


def _get_array(buf, dtype):
    (ndim,) = struct.unpack("<I", buf.read(4))
    shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
    dt = np.dtype(dtype)
    n = int(np.prod(shape)) if ndim else 1
    return np.frombuffer(buf.read(n * dt.itemsize), dtype=dt).reshape(shape).copy()


def _anchors_payload(a: AnchorSet) -> bytes:
    b = io.BytesIO()
    b.write(struct.pack("<I", len(a)))
    b.write(np.ascontiguousarray(a.positions, "<f4").tobytes())
    b.write(np.ascontiguousarray(a.features, "<f4").tobytes())
    b.write(np.ascontiguousarray(a.frozen, "u1").tobytes())
    b.write(np.ascontiguousarray(a.origin_clip, "<i4").tobytes())
    return b.getvalue()


def _read_anchors(b) -> AnchorSet:
    (n,) = struct.unpack("<I", b.read(4))
    pos = np.frombuffer(b.read(n * 12), "<f4").reshape(n, 3)
    feat = np.frombuffer(b.read(n * 64 * 4), "<f4").reshape(n, 64)
    frozen = np.frombuffer(b.read(n), "u1").astype(bool)
    origin = np.frombuffer(b.read(n * 4), "<i4")
    return AnchorSet(pos.astype(np.float32), feat.astype(np.float32), frozen, origin.astype(np.int32))


def _mlp_write(b, mlp: TwoLayerMLP):
    for k in PARAM_NAMES:
        _put_array(b, mlp.params[k], "<f4")


def _mlp_read(b) -> TwoLayerMLP:
    params = {k: _get_array(b, "<f4").astype(np.float32) for k in PARAM_NAMES}
    n_in, n_hidden = params["w1"].shape
    return TwoLayerMLP(n_in, n_hidden, params["w2"].shape[1], params=params)


def _decoder_payload(d: DecoderHeads) -> bytes:
    b = io.BytesIO()
    b.write(struct.pack("<IdIB", d.k, d.max_scale, d.hidden, int(d.frozen)))
    for name in HEAD_ORDER:
        _mlp_write(b, d.heads[name])
    return b.getvalue()


def _read_decoder(b) -> DecoderHeads:
    k, max_scale, hidden, frozen = struct.unpack("<IdIB", b.read(17))
    heads = {name: _mlp_read(b) for name in HEAD_ORDER}
    return DecoderHeads(k, float(max_scale), hidden=hidden, heads=heads, frozen=bool(frozen))


def _stf_payload(f: SpatioTemporalField) -> bytes:
    b = io.BytesIO()
    _put_array(b, f.grid.resolutions, "<i8")
    _put_array(b, f.grid.tables, "<f4")
    _mlp_write(b, f.mlp)
    return b.getvalue()


def _read_stf(b) -> SpatioTemporalField:
    res = _get_array(b, "<i8").astype(np.int64)
    tables = _get_array(b, "<f4").astype(np.float32)
    return SpatioTemporalField(HashGrid4D(res, tables), _mlp_read(b))


def _section(out, tag: bytes, name: str, payload: bytes):
    nb = name.encode()
    out.write(tag)
    out.write(struct.pack("<I", len(nb)))
    out.write(nb)
    out.write(struct.pack("<Q", len(payload)))
    out.write(payload)


def to_bytes(state: SceneState) -> bytes:
    header = {
        "clip_count": state.clip_count,
        "frames_per_clip": state.frames_per_clip,
        "offset_scale": np.asarray(state.offset_scale, "<f4").tobytes().hex(),
        "bbox_min": np.asarray(state.bbox_min, "<f4").tobytes().hex(),
        "bbox_max": np.asarray(state.bbox_max, "<f4").tobytes().hex(),
        "meta": state.meta,
    }
    out = io.BytesIO()
    out.write(MAGIC)
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    out.write(struct.pack("<II", VERSION, len(hb)))
    out.write(hb)
    _section(out, b"ANCH", "reference", _anchors_payload(state.reference_anchors))
    _section(out, b"DECO", "reference", _decoder_payload(state.decoder))
    for n in sorted(state.stf_registry):
        _section(out, b"STF_", f"clip/{n}", _stf_payload(state.stf_registry[n]))
    for n in sorted(state.residual_registry):
        _section(out, b"ANCH", f"residual/{n}", _anchors_payload(state.residual_registry[n]))
    for n in sorted(state.clip_base_anchors):
        _section(out, b"ANCH", f"base/{n}", _anchors_payload(state.clip_base_anchors[n]))
    for n in sorted(state.clip_decoders):
        _section(out, b"DECO", f"clip/{n}", _decoder_payload(state.clip_decoders[n]))
    out.write(b"END_")
    return out.getvalue()


def from_bytes(data: bytes) -> SceneState:
    b = io.BytesIO(data)
    if b.read(8) != MAGIC:
        raise ValueError("not a checkpoint file")
    version, hlen = struct.unpack("<II", b.read(8))
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(b.read(hlen))
    vec = lambda h: np.frombuffer(bytes.fromhex(h), "<f4").astype(np.float32)  # noqa: E731
    sections = {}
    while True:
        tag = b.read(4)
        if tag == b"END_":
            break
        if len(tag) != 4:
            raise ValueError("truncated checkpoint")
        (nlen,) = struct.unpack("<I", b.read(4))
        name = b.read(nlen).decode()
        (plen,) = struct.unpack("<Q", b.read(8))
        sections[(tag, name)] = io.BytesIO(b.read(plen))
    state = SceneState(
        reference_anchors=_read_anchors(sections.pop((b"ANCH", "reference"))),
        decoder=_read_decoder(sections.pop((b"DECO", "reference"))),
        clip_count=int(header["clip_count"]),
        frames_per_clip=int(header["frames_per_clip"]),
        offset_scale=vec(header["offset_scale"]),
        bbox_min=vec(header["bbox_min"]),
        bbox_max=vec(header["bbox_max"]),
        meta=header["meta"],
    )
    for (tag, name), payload in sections.items():
        kind, n = name.split("/")
        n = int(n)
        if tag == b"STF_":
            state.stf_registry[n] = _read_stf(payload)
        elif tag == b"ANCH" and kind == "residual":
            state.residual_registry[n] = _read_anchors(payload)
        elif tag == b"ANCH" and kind == "base":
            state.clip_base_anchors[n] = _read_anchors(payload)
        elif tag == b"DECO":
            state.clip_decoders[n] = _read_decoder(payload)
        else:
            raise ValueError(f"unknown section {tag!r} {name}")
    state.stf_registry = dict(sorted(state.stf_registry.items()))
    if state.meta.get("shared_stf") and state.stf_registry:
        shared = state.stf_registry[max(state.stf_registry)]
        state.stf_registry = {n: shared for n in state.stf_registry}
    return state


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(state: SceneState, path) -> None:
    atomic_write_bytes(path, to_bytes(state))


def load(path) -> SceneState:
    return from_bytes(Path(path).read_bytes())


def frozen_digest(state: SceneState) -> str:
    """SHA-256 over the reference anchor positions, static features and decoder weights."""
    import hashlib

    h = hashlib.sha256()
    h.update(np.ascontiguousarray(state.reference_anchors.positions, "<f4").tobytes())
    h.update(np.ascontiguousarray(state.reference_anchors.features, "<f4").tobytes())
    for name in HEAD_ORDER:
        for k in PARAM_NAMES:
            h.update(np.ascontiguousarray(state.decoder.heads[name].params[k], "<f4").tobytes())
    return h.hexdigest()

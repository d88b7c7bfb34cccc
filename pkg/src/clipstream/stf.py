"""Per-clip spatio-temporal field: 4D hash grid followed by a two-layer MLP."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import hashgrid
from .nn import TwoLayerMLP
from .scene import FEATURE_DIM, ContractViolation


def level_resolutions(levels: int, base: int, finest: int) -> np.ndarray:
    if levels == 1:
        return np.array([base], dtype=np.int64)
    growth = np.exp((np.log(finest) - np.log(base)) / (levels - 1))
    res = np.floor(base * growth ** np.arange(levels) + 1e-9).astype(np.int64)
    for i in range(1, levels):  # keep strictly increasing when the ladder is crowded
        res[i] = max(res[i], res[i - 1] + 1)
    return res


@dataclass
class HashGrid4D:
    resolutions: np.ndarray
    tables: np.ndarray  # (L, T, F)
    clamp_count: int = 0

    def __post_init__(self):
        self.resolutions = np.asarray(self.resolutions, dtype=np.int64)
        L, T, _ = self.tables.shape
        if T & (T - 1):
            raise ValueError("table size must be a power of two")
        if len(self.resolutions) != L or np.any(np.diff(self.resolutions) <= 0):
            raise ValueError("resolutions must strictly increase, one per level")

    @classmethod
    def create(cls, levels=8, base_resolution=8, max_resolution=128, log2_table_size=16,
               features_per_entry=4, rng=None, init_range=1e-4) -> "HashGrid4D":
        rng = rng if rng is not None else np.random.default_rng(0)
        res = level_resolutions(levels, base_resolution, max_resolution)
        tables = rng.uniform(-init_range, init_range, (levels, 1 << log2_table_size, features_per_entry))
        return cls(res, tables.astype(np.float32))

    @property
    def levels(self) -> int:
        return self.tables.shape[0]

    @property
    def table_size(self) -> int:
        return self.tables.shape[1]

    @property
    def features_per_entry(self) -> int:
        return self.tables.shape[2]

    @property
    def output_dim(self) -> int:
        return self.levels * self.features_per_entry


def _clamp_inputs(grid: HashGrid4D, positions, times):
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    times = np.broadcast_to(np.asarray(times, dtype=np.float64), (len(positions),))
    x = np.concatenate([positions, times[:, None]], axis=1)
    inside = (x >= 0.0) & (x <= 1.0)
    n_bad = int((~inside.all(axis=1)).sum())
    if n_bad:
        grid.clamp_count += n_bad
        x = np.clip(x, 0.0, 1.0)
    return np.ascontiguousarray(x), inside


def hash_encode(grid: HashGrid4D, positions, times, tables=None) -> np.ndarray:
    """Encode normalized positions (n, 3) at times (n,) or scalar into (n, L*F) features."""
    x, _ = _clamp_inputs(grid, positions, times)
    tab = grid.tables if tables is None else tables
    return hashgrid.encode_forward(x, np.ascontiguousarray(tab, dtype=np.float64), grid.resolutions)


class SpatioTemporalField:
    """Dynamic-feature generator for one clip."""

    def __init__(self, grid: HashGrid4D, mlp: TwoLayerMLP):
        if mlp.n_out != FEATURE_DIM or mlp.n_in != grid.output_dim:
            raise ValueError("MLP must map the grid encoding to a 64-dim feature")
        self.grid = grid
        self.mlp = mlp

    @classmethod
    def create(cls, rng: np.random.Generator, levels=8, base_resolution=8, max_resolution=128,
               log2_table_size=16, features_per_entry=4, hidden=64) -> "SpatioTemporalField":
        grid = HashGrid4D.create(levels, base_resolution, max_resolution, log2_table_size,
                                 features_per_entry, rng=rng)
        mlp = TwoLayerMLP(grid.output_dim, hidden, FEATURE_DIM, rng=rng)
        return cls(grid, mlp)

    def copy(self) -> "SpatioTemporalField":
        grid = HashGrid4D(self.grid.resolutions.copy(), self.grid.tables.copy())
        return SpatioTemporalField(grid, self.mlp.copy())

    def param_arrays(self) -> dict:
        """Learnable arrays by name (tables plus MLP weights)."""
        out = {"tables": self.grid.tables}
        out.update({f"mlp.{k}": v for k, v in self.mlp.params.items()})
        return out

    def set_param_arrays(self, arrays: dict) -> None:
        self.grid.tables = arrays["tables"]
        for k in self.mlp.params:
            self.mlp.params[k] = arrays[f"mlp.{k}"]


@dataclass
class StfContext:
    field_id: int
    x: np.ndarray
    inside: np.ndarray
    mlp_cache: tuple


def stf_forward(field: SpatioTemporalField, positions, times):
    """Dynamic features (n, 64) for normalized positions and clip-local times.

    Returns (features, context); pass the context to :func:`stf_backward`.
    """
    x, inside = _clamp_inputs(field.grid, positions, times)
    enc = hashgrid.encode_forward(x, np.ascontiguousarray(field.grid.tables, dtype=np.float64),
                                  field.grid.resolutions)
    out, cache = field.mlp.forward(enc)
    return out, StfContext(id(field), x, inside, cache)


def stf_backward(field: SpatioTemporalField, ctx: StfContext, upstream, grad_positions=True):
    """Parameter gradients (dict keyed like ``param_arrays``) and d/d(normalized position).

    Hash-colliding entries accumulate additively. Coordinates that were clamped
    receive zero positional gradient.
    """
    if ctx.field_id != id(field):
        raise ContractViolation("backward context belongs to a different field")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (len(ctx.x), FEATURE_DIM):
        raise ContractViolation("upstream gradient shape does not match the forward pass")
    mlp_grads, denc = field.mlp.backward(ctx.mlp_cache, upstream)
    dtab, dx = hashgrid.encode_backward(ctx.x, np.ascontiguousarray(field.grid.tables, dtype=np.float64),
                                        field.grid.resolutions, np.ascontiguousarray(denc), grad_positions)
    grads = {"tables": dtab}
    grads.update({f"mlp.{k}": v for k, v in mlp_grads.items()})
    dpos = np.where(ctx.inside[:, :3], dx[:, :3], 0.0)
    return grads, dpos

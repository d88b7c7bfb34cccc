"""Residual anchor selection against a union-of-spheres coverage field.

Each reference point gets a sphere whose radius is the mean distance to its
three nearest neighbours; a candidate survives only if it lies strictly
outside every sphere.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

NEIGHBORS = 3


def _dist(q, c):
    # single shared formula so the indexed and brute-force paths round identically
    d = q - c
    return np.sqrt(np.sum(d * d, axis=-1))


def coverage_radius(point, all_points, default_radius: float | None = None) -> float:
    """Mean distance from ``point`` to its three nearest neighbours in ``all_points``.

    One zero-distance match (the point itself) is excluded. With fewer than four
    points the ``default_radius`` is returned instead.
    """
    pts = np.asarray(all_points, dtype=np.float64).reshape(-1, 3)
    p = np.asarray(point, dtype=np.float64).reshape(3)
    if len(pts) < NEIGHBORS + 1:
        log.warning("coverage_radius: %d points, falling back to default radius", len(pts))
        if default_radius is None:
            raise ValueError("fewer than 4 points and no default radius given")
        return float(default_radius)
    d = np.sort(_dist(p[None, :], pts))
    if d[0] == 0.0:
        d = d[1:]
    return float(d[:NEIGHBORS].mean())


def coverage_radii(points) -> np.ndarray:
    """Vectorized :func:`coverage_radius` for every point of the set (raw, may contain zeros)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    d, _ = cKDTree(pts).query(pts, k=NEIGHBORS + 1)
    return d[:, 1:].mean(axis=1)


@dataclass
class CoverageField:
    centers: np.ndarray
    radii: np.ndarray
    tree: cKDTree | None

    @classmethod
    def build(cls, points, fallback_radius: float = 1e-3) -> "CoverageField":
        """Spheres around ``points``; zero radii become the median positive radius."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            return cls(pts, np.zeros(0), None)
        if len(pts) < NEIGHBORS + 1:
            log.warning("coverage field over %d points; using fallback radius %g", len(pts), fallback_radius)
            radii = np.full(len(pts), float(fallback_radius))
        else:
            radii = coverage_radii(pts)
            positive = radii > 0
            if not positive.all():
                default = float(np.median(radii[positive])) if positive.any() else float(fallback_radius)
                log.info("coverage field: %d degenerate radii replaced by %g", (~positive).sum(), default)
                radii = np.where(positive, radii, default)
        return cls(pts, radii, cKDTree(pts))

    def __len__(self) -> int:
        return len(self.centers)

    def sdf(self, queries) -> np.ndarray:
        """Signed distance min_i(|q - c_i| - r_i) for each query row; +inf for an empty field."""
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if len(self.centers) == 0:
            return np.full(len(q), np.inf)
        if len(q) == 0:
            return np.zeros(0)
        d_nn, i_nn = self.tree.query(q, k=1)
        upper = d_nn - self.radii[i_nn]
        # every sphere that can beat `upper` has its center within upper + r_max
        reach = upper + self.radii.max()
        reach = reach + 1e-9 * np.maximum(1.0, np.abs(reach))
        out = np.empty(len(q))
        for j, cand in enumerate(self.tree.query_ball_point(q, reach)):
            cand = np.asarray(sorted(cand), dtype=np.int64)
            out[j] = np.min(_dist(q[j][None, :], self.centers[cand]) - self.radii[cand])
        return out


def sdf(field: CoverageField, query) -> float | np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    out = field.sdf(q)
    return float(out[0]) if q.ndim == 1 else out


def dedup_mask(candidates, base_points, field: CoverageField | None = None) -> np.ndarray:
    """Boolean keep-mask over candidates: True where the coverage sdf is strictly positive."""
    cand = np.asarray(candidates, dtype=np.float64).reshape(-1, 3)
    if field is None:
        field = CoverageField.build(base_points)
    return field.sdf(cand) > 0.0


def dedup(candidates, base_points, field: CoverageField | None = None):
    """Residual candidates (order preserved) and their indices into ``candidates``."""
    cand = np.asarray(candidates).reshape(-1, 3)
    keep = dedup_mask(cand, base_points, field)
    idx = np.nonzero(keep)[0]
    return cand[idx], idx

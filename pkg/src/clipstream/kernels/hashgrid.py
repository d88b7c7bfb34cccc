"""4D multiresolution hash-grid interpolation (forward and reverse mode).

Inputs are (n, 4) coordinates already clamped to [0, 1]. Each level uses a
vertex-aligned grid with ``res[l]`` cells per axis; the 16 corners of the
enclosing cell are hashed into a table of size T (power of two).
"""
import numpy as np

from .._accel import USE_NUMBA

PRIMES = np.array([73856093, 19349663, 83492791, 2654435761], dtype=np.uint64)


def _cell_np(x, r):
    pos = x * r
    cell = np.minimum(np.floor(pos), r - 1).astype(np.int64)
    return cell, pos - cell


def _corner_hashes_np(cell, mask):
    # cell: (n, 4) int64 -> (n, 16) uint64 indices
    n = len(cell)
    idx = np.zeros((n, 16), dtype=np.uint64)
    for c in range(16):
        h = np.zeros(n, dtype=np.uint64)
        for a in range(4):
            coord = (cell[:, a] + ((c >> a) & 1)).astype(np.uint64)
            h ^= coord * PRIMES[a]
        idx[:, c] = h & np.uint64(mask)
    return idx


def _corner_weights_np(frac):
    # frac: (n, 4) -> (n, 16) weights, (n, 16, 4) per-axis factors
    n = len(frac)
    fac = np.empty((n, 16, 4))
    for c in range(16):
        for a in range(4):
            fac[:, c, a] = frac[:, a] if (c >> a) & 1 else 1.0 - frac[:, a]
    return fac.prod(axis=2), fac


def encode_forward_np(x, tables, res):
    n = len(x)
    L, T, F = tables.shape
    out = np.empty((n, L * F))
    for lvl in range(L):
        cell, frac = _cell_np(x, res[lvl])
        idx = _corner_hashes_np(cell, T - 1)
        w, _ = _corner_weights_np(frac)
        ent = tables[lvl][idx.astype(np.int64)].astype(np.float64)  # (n, 16, F)
        out[:, lvl * F:(lvl + 1) * F] = np.einsum("nc,ncf->nf", w, ent)
    return out


def encode_backward_np(x, tables, res, dout, grad_x=True):
    n = len(x)
    L, T, F = tables.shape
    dtab = np.zeros((L, T, F))
    dx = np.zeros((n, 4))
    for lvl in range(L):
        r = res[lvl]
        cell, frac = _cell_np(x, r)
        idx = _corner_hashes_np(cell, T - 1).astype(np.int64)
        w, fac = _corner_weights_np(frac)
        g = dout[:, lvl * F:(lvl + 1) * F]
        contrib = w[:, :, None] * g[:, None, :]  # (n, 16, F)
        np.add.at(dtab[lvl], idx.reshape(-1), contrib.reshape(-1, F))
        if grad_x:
            ent = tables[lvl][idx].astype(np.float64)
            eg = np.einsum("ncf,nf->nc", ent, g)
            for a in range(4):
                others = np.ones((n, 16))
                for b in range(4):
                    if b != a:
                        others *= fac[:, :, b]
                sign = np.array([1.0 if (c >> a) & 1 else -1.0 for c in range(16)])
                dx[:, a] += r * np.einsum("nc,nc->n", eg, others * sign)
    return dtab, dx


if USE_NUMBA:
    import numba

    @numba.njit(cache=True)
    def _hash_nb(cell, c, mask, primes):
        h = np.uint64(0)
        for a in range(4):
            coord = np.uint64(cell[a] + ((c >> a) & 1))
            h ^= coord * primes[a]
        return np.int64(h & np.uint64(mask))

    @numba.njit(cache=True)
    def encode_forward_nb(x, tables, res):
        n = x.shape[0]
        L, T, F = tables.shape
        out = np.zeros((n, L * F))
        cell = np.empty(4, np.int64)
        frac = np.empty(4)
        for i in range(n):
            for lvl in range(L):
                r = res[lvl]
                for a in range(4):
                    pos = x[i, a] * r
                    ci = min(np.floor(pos), r - 1)
                    cell[a] = np.int64(ci)
                    frac[a] = pos - ci
                for c in range(16):
                    w = 1.0
                    for a in range(4):
                        w *= frac[a] if (c >> a) & 1 else 1.0 - frac[a]
                    j = _hash_nb(cell, c, T - 1, PRIMES)
                    for f in range(F):
                        out[i, lvl * F + f] += w * tables[lvl, j, f]
        return out

    @numba.njit(cache=True)
    def _encode_backward_nb(x, tables, res, dout, grad_x):
        n = x.shape[0]
        L, T, F = tables.shape
        dtab = np.zeros((L, T, F))
        dx = np.zeros((n, 4))
        cell = np.empty(4, np.int64)
        frac = np.empty(4)
        fac = np.empty(4)
        for i in range(n):
            for lvl in range(L):
                r = res[lvl]
                for a in range(4):
                    pos = x[i, a] * r
                    ci = min(np.floor(pos), r - 1)
                    cell[a] = np.int64(ci)
                    frac[a] = pos - ci
                for c in range(16):
                    w = 1.0
                    for a in range(4):
                        fac[a] = frac[a] if (c >> a) & 1 else 1.0 - frac[a]
                        w *= fac[a]
                    j = _hash_nb(cell, c, T - 1, PRIMES)
                    eg = 0.0
                    for f in range(F):
                        g = dout[i, lvl * F + f]
                        dtab[lvl, j, f] += w * g
                        eg += tables[lvl, j, f] * g
                    if grad_x:
                        for a in range(4):
                            o = 1.0
                            for b in range(4):
                                if b != a:
                                    o *= fac[b]
                            s = 1.0 if (c >> a) & 1 else -1.0
                            dx[i, a] += r * eg * o * s
        return dtab, dx

    def encode_backward_nb(x, tables, res, dout, grad_x=True):
        return _encode_backward_nb(x, tables, res, dout, grad_x)

    encode_forward = encode_forward_nb
    encode_backward = encode_backward_nb
else:
    encode_forward = encode_forward_np
    encode_backward = encode_backward_np

"""Front-to-back alpha compositing of depth-sorted 2D Gaussians and its exact reverse.

Splats arrive already depth-sorted. A splat touches pixel p only when p lies
inside its 3-sigma ellipse (power >= -4.5); alpha is clamped to ALPHA_MAX and a
pixel stops accumulating once transmittance would drop below T_MIN.
Pixel (row y, column x) has its center at (x + 0.5, y + 0.5).
"""
import numpy as np

from .._accel import USE_NUMBA

ALPHA_MAX = 0.999
T_MIN = 1e-4
POWER_CUTOFF = -4.5
TILE = 16


def conics(cov):
    a, b, c = cov[:, 0], cov[:, 1], cov[:, 2]
    det = a * c - b * b
    return np.stack([c / det, -b / det, a / det], axis=1)


# --------------------------------------------------------------------------- numpy


def _pixel_centers(H, W):
    ys, xs = np.mgrid[0:H, 0:W]
    return xs.reshape(-1) + 0.5, ys.reshape(-1) + 0.5


def _alphas_np(px, py, mean, conic, opacity):
    dx = px[:, None] - mean[None, :, 0]
    dy = py[:, None] - mean[None, :, 1]
    power = -0.5 * (conic[:, 0] * dx * dx + conic[:, 2] * dy * dy) - conic[:, 1] * dx * dy
    inside = power >= POWER_CUTOFF
    g = np.exp(np.minimum(power, 0.0))
    raw = opacity[None, :] * g
    alpha = np.where(inside, np.minimum(ALPHA_MAX, raw), 0.0)
    tincl = np.cumprod(1.0 - alpha, axis=1)
    used = inside & (tincl >= T_MIN)
    alpha = np.where(used, alpha, 0.0)
    t_after = np.cumprod(1.0 - alpha, axis=1)
    t_before = np.concatenate([np.ones((len(px), 1)), t_after[:, :-1]], axis=1)
    return dx, dy, g, raw, alpha, used, t_before, t_after


def rasterize_forward_np(mean, conic, color, opacity, H, W, chunk=4096):
    img = np.zeros((H * W, 3))
    final_t = np.ones(H * W)
    px_all, py_all = _pixel_centers(H, W)
    m = len(mean)
    if m == 0:
        return img.reshape(H, W, 3), final_t.reshape(H, W)
    for s in range(0, H * W, chunk):
        px, py = px_all[s:s + chunk], py_all[s:s + chunk]
        _, _, _, _, alpha, _, t_before, t_after = _alphas_np(px, py, mean, conic, opacity)
        img[s:s + chunk] = (alpha * t_before) @ color
        final_t[s:s + chunk] = t_after[:, -1]
    return img.reshape(H, W, 3), final_t.reshape(H, W)


def rasterize_backward_np(mean, conic, color, opacity, H, W, dimg, chunk=4096):
    m = len(mean)
    dmean = np.zeros((m, 2))
    dconic = np.zeros((m, 3))
    dcolor = np.zeros((m, 3))
    dop = np.zeros(m)
    if m == 0:
        return dmean, dconic, dcolor, dop
    px_all, py_all = _pixel_centers(H, W)
    dimg = dimg.reshape(-1, 3)
    for s in range(0, H * W, chunk):
        px, py, g_img = px_all[s:s + chunk], py_all[s:s + chunk], dimg[s:s + chunk]
        dx, dy, g, raw, alpha, used, t_before, _ = _alphas_np(px, py, mean, conic, opacity)
        w = alpha * t_before
        dcolor += w.T @ g_img
        contrib = w[:, :, None] * color[None, :, :]
        behind = np.cumsum(contrib[:, ::-1], axis=1)[:, ::-1] - contrib
        dC_dalpha = color[None] * t_before[:, :, None] - behind / (1.0 - alpha)[:, :, None]
        dalpha = np.einsum("pmc,pc->pm", dC_dalpha, g_img)
        dalpha = np.where(used & (raw <= ALPHA_MAX), dalpha, 0.0)
        dop += (dalpha * g).sum(axis=0)
        dpower = dalpha * opacity[None, :] * g
        dmean[:, 0] += (dpower * (conic[None, :, 0] * dx + conic[None, :, 1] * dy)).sum(axis=0)
        dmean[:, 1] += (dpower * (conic[None, :, 1] * dx + conic[None, :, 2] * dy)).sum(axis=0)
        dconic[:, 0] += (dpower * -0.5 * dx * dx).sum(axis=0)
        dconic[:, 1] += (dpower * -dx * dy).sum(axis=0)
        dconic[:, 2] += (dpower * -0.5 * dy * dy).sum(axis=0)
    return dmean, dconic, dcolor, dop


# --------------------------------------------------------------------------- tiling


def bin_tiles(mean, cov, H, W):
    """Per-tile lists of splat indices in input (depth) order.

    Returns (tile_start, tile_count, flat_list, n_tiles_x). A tile gets a splat
    when the splat's 3-sigma bounding box, padded by one pixel, overlaps it.
    """
    ntx, nty = (W + TILE - 1) // TILE, (H + TILE - 1) // TILE
    m = len(mean)
    if m == 0:
        z = np.zeros(ntx * nty, np.int64)
        return z, z.copy(), np.zeros(0, np.int64), ntx
    ex = 3.0 * np.sqrt(cov[:, 0]) + 1.0
    ey = 3.0 * np.sqrt(cov[:, 2]) + 1.0
    x0 = np.clip(np.floor((mean[:, 0] - ex) / TILE), 0, ntx - 1).astype(np.int64)
    x1 = np.clip(np.floor((mean[:, 0] + ex) / TILE), 0, ntx - 1).astype(np.int64)
    y0 = np.clip(np.floor((mean[:, 1] - ey) / TILE), 0, nty - 1).astype(np.int64)
    y1 = np.clip(np.floor((mean[:, 1] + ey) / TILE), 0, nty - 1).astype(np.int64)
    nx, ny = x1 - x0 + 1, y1 - y0 + 1
    counts = nx * ny
    owner = np.repeat(np.arange(m), counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    tx = x0[owner] + local % nx[owner]
    ty = y0[owner] + local // nx[owner]
    tile_id = ty * ntx + tx
    order = np.argsort(tile_id, kind="stable")
    flat = owner[order]
    tile_count = np.bincount(tile_id, minlength=ntx * nty).astype(np.int64)
    tile_start = np.concatenate([[0], np.cumsum(tile_count)[:-1]]).astype(np.int64)
    return tile_start, tile_count, flat, ntx


# --------------------------------------------------------------------------- numba


if USE_NUMBA:
    import numba

    @numba.njit(cache=True, parallel=True)
    def _forward_nb(mean, conic, color, opacity, H, W, tile_start, tile_count, flat, ntx):
        img = np.zeros((H, W, 3))
        final_t = np.ones((H, W))
        n_used = np.zeros((H, W), np.int64)
        ntiles = tile_start.shape[0]
        for tile in numba.prange(ntiles):
            tx, ty = tile % ntx, tile // ntx
            s, cnt = tile_start[tile], tile_count[tile]
            for y in range(ty * TILE, min(H, (ty + 1) * TILE)):
                for x in range(tx * TILE, min(W, (tx + 1) * TILE)):
                    px, py = x + 0.5, y + 0.5
                    T = 1.0
                    r = 0.0
                    g_ = 0.0
                    b = 0.0
                    last = 0
                    for jj in range(cnt):
                        i = flat[s + jj]
                        dx = px - mean[i, 0]
                        dy = py - mean[i, 1]
                        power = -0.5 * (conic[i, 0] * dx * dx + conic[i, 2] * dy * dy) - conic[i, 1] * dx * dy
                        if power < POWER_CUTOFF:
                            continue
                        alpha = min(ALPHA_MAX, opacity[i] * np.exp(min(power, 0.0)))
                        test_t = T * (1.0 - alpha)
                        if test_t < T_MIN:
                            break
                        w = alpha * T
                        r += w * color[i, 0]
                        g_ += w * color[i, 1]
                        b += w * color[i, 2]
                        T = test_t
                        last = jj + 1
                    img[y, x, 0] = r
                    img[y, x, 1] = g_
                    img[y, x, 2] = b
                    final_t[y, x] = T
                    n_used[y, x] = last
        return img, final_t, n_used

    @numba.njit(cache=True, parallel=True)
    def _backward_nb(mean, conic, color, opacity, H, W, tile_start, tile_count, flat, ntx,
                     final_t, n_used, dimg):
        m = mean.shape[0]
        ntiles = tile_start.shape[0]
        buf = np.zeros((ntiles, m, 9))  # dmean(2) dconic(3) dcolor(3) dop(1)
        for tile in numba.prange(ntiles):
            tx, ty = tile % ntx, tile // ntx
            s = tile_start[tile]
            for y in range(ty * TILE, min(H, (ty + 1) * TILE)):
                for x in range(tx * TILE, min(W, (tx + 1) * TILE)):
                    px, py = x + 0.5, y + 0.5
                    T = final_t[y, x]
                    g0, g1, g2 = dimg[y, x, 0], dimg[y, x, 1], dimg[y, x, 2]
                    acc0 = 0.0
                    acc1 = 0.0
                    acc2 = 0.0
                    last_a = 0.0
                    lc0 = 0.0
                    lc1 = 0.0
                    lc2 = 0.0
                    for jj in range(n_used[y, x] - 1, -1, -1):
                        i = flat[s + jj]
                        dx = px - mean[i, 0]
                        dy = py - mean[i, 1]
                        power = -0.5 * (conic[i, 0] * dx * dx + conic[i, 2] * dy * dy) - conic[i, 1] * dx * dy
                        if power < POWER_CUTOFF:
                            continue
                        G = np.exp(min(power, 0.0))
                        raw = opacity[i] * G
                        alpha = min(ALPHA_MAX, raw)
                        T = T / (1.0 - alpha)
                        w = alpha * T
                        buf[tile, i, 5] += w * g0
                        buf[tile, i, 6] += w * g1
                        buf[tile, i, 7] += w * g2
                        acc0 = last_a * lc0 + (1.0 - last_a) * acc0
                        acc1 = last_a * lc1 + (1.0 - last_a) * acc1
                        acc2 = last_a * lc2 + (1.0 - last_a) * acc2
                        lc0, lc1, lc2 = color[i, 0], color[i, 1], color[i, 2]
                        last_a = alpha
                        if raw > ALPHA_MAX:
                            continue
                        da = T * ((lc0 - acc0) * g0 + (lc1 - acc1) * g1 + (lc2 - acc2) * g2)
                        buf[tile, i, 8] += G * da
                        dp = da * raw
                        buf[tile, i, 0] += dp * (conic[i, 0] * dx + conic[i, 1] * dy)
                        buf[tile, i, 1] += dp * (conic[i, 1] * dx + conic[i, 2] * dy)
                        buf[tile, i, 2] += dp * -0.5 * dx * dx
                        buf[tile, i, 3] += dp * -dx * dy
                        buf[tile, i, 4] += dp * -0.5 * dy * dy
        out = np.zeros((m, 9))
        for tile in range(ntiles):
            out += buf[tile]
        return out

    def rasterize_forward_nb(mean, conic, color, opacity, H, W, tiles):
        img, final_t, n_used = _forward_nb(mean, conic, color, opacity, H, W, *tiles)
        return img, final_t, n_used

    def rasterize_backward_nb(mean, conic, color, opacity, H, W, tiles, final_t, n_used, dimg):
        out = _backward_nb(mean, conic, color, opacity, H, W, *tiles, final_t, n_used,
                           np.ascontiguousarray(dimg, dtype=np.float64))
        return out[:, 0:2].copy(), out[:, 2:5].copy(), out[:, 5:8].copy(), out[:, 8].copy()

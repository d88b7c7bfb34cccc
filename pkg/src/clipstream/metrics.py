"""Image quality metrics and the cross-clip flicker measure."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

C1 = 0.01 ** 2
C2 = 0.03 ** 2
WINDOW = 11
SIGMA = 1.5
HEATMAP_GAIN = 4.0
LUMA = np.array([0.299, 0.587, 0.114])


def _check_shapes(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"image shapes differ: {np.shape(a)} vs {np.shape(b)}")


@lru_cache(maxsize=32)
def blur_matrix(n: int) -> np.ndarray:
    """(n, n) operator applying the 1-D Gaussian window with mirror (half-sample) padding."""
    r = WINDOW // 2
    taps = np.exp(-0.5 * (np.arange(-r, r + 1) / SIGMA) ** 2)
    taps /= taps.sum()
    K = np.zeros((n, n))
    for i in range(n):
        for o, w in zip(range(-r, r + 1), taps):
            j = (i + o) % (2 * n)
            if j >= n:
                j = 2 * n - 1 - j
            K[i, j] += w
    return K


def _blur(x, Kh, Kw):
    # x: (H, W, C)
    return np.matmul(Kw, np.matmul(Kh, x.reshape(x.shape[0], -1)).reshape(x.shape))


def ssim_map(a, b):
    _check_shapes(a, b)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    Kh, Kw = blur_matrix(a.shape[0]), blur_matrix(a.shape[1])
    mu_a, mu_b = _blur(a, Kh, Kw), _blur(b, Kh, Kw)
    var_a = _blur(a * a, Kh, Kw) - mu_a ** 2
    var_b = _blur(b * b, Kh, Kw) - mu_b ** 2
    cov = _blur(a * b, Kh, Kw) - mu_a * mu_b
    num1, num2 = 2 * mu_a * mu_b + C1, 2 * cov + C2
    den1, den2 = mu_a ** 2 + mu_b ** 2 + C1, var_a + var_b + C2
    return (num1 * num2) / (den1 * den2), (Kh, Kw, mu_a, mu_b, num1, num2, den1, den2)


def ssim(a, b) -> float:
    """Mean SSIM over pixels and channels (11x11 Gaussian window, sigma 1.5, data range 1)."""
    return float(ssim_map(a, b)[0].mean())


def ssim_with_grad(x, y):
    """Mean SSIM(x, y) and its gradient with respect to x."""
    smap, (Kh, Kw, mu_x, mu_y, A1, A2, B1, B2) = ssim_map(x, y)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x, y = x[..., None], y[..., None]
    scale = 1.0 / smap.size
    denom = B1 * B2
    g_mu = scale * ((2 * mu_y * A2 - 2 * mu_y * A1) / denom - smap * (2 * mu_x / B1 - 2 * mu_x / B2))
    g_xx = scale * (-smap / B2)
    g_xy = scale * (2 * A1 / denom)
    # adjoint of the separable blur is the transposed operator
    bt = lambda g: _blur(g, Kh.T, Kw.T)  # noqa: E731
    grad = bt(g_mu) + 2 * x * bt(g_xx) + y * bt(g_xy)
    return float(smap.mean()), (grad[..., 0] if squeeze else grad)


def psnr(a, b) -> float:
    """10 log10(1 / MSE); +inf for identical images."""
    _check_shapes(a, b)
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def dssim(a, b) -> float:
    """Structural dissimilarity (1 - SSIM) / 2 over RGB."""
    return (1.0 - ssim(a, b)) / 2.0


def dssim_luma(a, b) -> float:
    """(1 - SSIM) / 2 computed on the luma channel only."""
    _check_shapes(a, b)
    return (1.0 - ssim(np.asarray(a) @ LUMA, np.asarray(b) @ LUMA)) / 2.0


# --------------------------------------------------------------------------- flicker


@dataclass
class FlickerReport:
    boundaries: list = field(default_factory=list)  # (n, n + 1) pairs
    mean_residual: list = field(default_factory=list)
    static_mean_residual: list = field(default_factory=list)
    heatmaps: list = field(default_factory=list)  # (H, W) arrays in [0, 1]

    def to_dict(self) -> dict:
        return {"boundaries": [list(b) for b in self.boundaries], "mean_residual": self.mean_residual,
                "static_mean_residual": self.static_mean_residual}


def residual_map(a, b) -> np.ndarray:
    _check_shapes(a, b)
    return np.clip(np.abs(np.asarray(a, np.float64) - np.asarray(b, np.float64)).mean(axis=-1), 0.0, 1.0)


def heatmap_image(residual) -> np.ndarray:
    return np.round(np.clip(residual * HEATMAP_GAIN, 0.0, 1.0) * 255.0).astype(np.uint8)


def flicker(state, camera, static_masks=None) -> FlickerReport:
    """Render both sides of every clip boundary from ``camera`` and measure the change.

    ``static_masks`` optionally maps boundary index -> boolean (H, W) mask of pixels
    whose ground truth does not change across that boundary.
    """
    from .pipeline import render_frame
    from .scene import ContractViolation

    report = FlickerReport()
    clips = state.clips
    for n in range(len(clips) - 1):
        if n not in state.stf_registry or n + 1 not in state.stf_registry:
            raise ContractViolation(f"clip {n} or {n + 1} has not been trained")
        a = render_frame(state, camera, clips[n].frame_stop - 1)
        b = render_frame(state, camera, clips[n + 1].frame_start)
        res = residual_map(a, b)
        report.boundaries.append((n, n + 1))
        report.mean_residual.append(float(res.mean()))
        if static_masks is not None and static_masks.get(n) is not None and static_masks[n].any():
            report.static_mean_residual.append(float(res[static_masks[n]].mean()))
        else:
            report.static_mean_residual.append(float(res.mean()))
        report.heatmaps.append(res)
    return report

"""Software Gaussian splatting: EWA projection, tile-binned alpha blending, and exact gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from ._accel import USE_NUMBA
from .kernels import raster as rk
from .scene import ContractViolation, TemporalGaussians, quat_to_rotmat

NEAR = 0.01
COV_DILATION = 0.3  # low-pass filter added to every projected covariance, in pixels^2


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray  # world -> camera rotation
    t: np.ndarray  # world -> camera translation
    width: int
    height: int

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if np.abs(self.R @ self.R.T - np.eye(3)).max() > 1e-6:
            raise ValueError("camera rotation is not orthonormal")

    @classmethod
    def look_at(cls, eye, target, up, fov_x_deg: float, width: int, height: int) -> "Camera":
        eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
        fwd = target - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])  # camera x right, y down, z forward
        fx = 0.5 * width / np.tan(np.radians(fov_x_deg) / 2)
        return cls(fx, fx, width / 2, height / 2, R, -R @ eye, width, height)

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def to_dict(self) -> dict:
        return {"fx": float(self.fx), "fy": float(self.fy), "cx": float(self.cx), "cy": float(self.cy),
                "R": self.R.tolist(), "t": self.t.tolist(), "width": int(self.width), "height": int(self.height)}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), d["R"], d["t"],
                   int(d["width"]), int(d["height"]))


@dataclass
class Splats2D:
    """Projected splats; ``ids`` index the Gaussians that survived culling."""

    mean2d: np.ndarray  # (m, 2)
    cov2d: np.ndarray  # (m, 3) as (a, b, c) of [[a, b], [b, c]], dilation included
    depth: np.ndarray  # (m,)
    color: np.ndarray  # (m, 3)
    opacity: np.ndarray  # (m,)
    ids: np.ndarray  # (m,)

    def __len__(self) -> int:
        return len(self.mean2d)


@dataclass
class ProjectContext:
    camera: Camera
    ids: np.ndarray
    pc: np.ndarray
    J: np.ndarray
    cov_cam: np.ndarray
    R: np.ndarray
    scales: np.ndarray
    n_input: int


def project(gaussians: TemporalGaussians, camera: Camera):
    """EWA-project Gaussians into ``camera``. Returns (Splats2D, ProjectContext)."""
    mu = np.asarray(gaussians.positions, dtype=np.float64)
    pc_all = mu @ camera.R.T + camera.t
    z = pc_all[:, 2]
    keep = z > NEAR
    ids = np.nonzero(keep)[0]
    pc = pc_all[ids]
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    fx, fy = camera.fx, camera.fy
    m = len(ids)
    J = np.zeros((m, 2, 3))
    J[:, 0, 0] = fx / z
    J[:, 0, 2] = -fx * x / (z * z)
    J[:, 1, 1] = fy / z
    J[:, 1, 2] = -fy * y / (z * z)
    R = quat_to_rotmat(np.asarray(gaussians.rotations, dtype=np.float64)[ids])
    s = np.asarray(gaussians.scales, dtype=np.float64)[ids]
    M = R * s[:, None, :]
    sigma = M @ np.swapaxes(M, 1, 2)
    cov_cam = camera.R @ sigma @ camera.R.T
    c2 = J @ cov_cam @ np.swapaxes(J, 1, 2)
    cov2d = np.stack([c2[:, 0, 0] + COV_DILATION, 0.5 * (c2[:, 0, 1] + c2[:, 1, 0]), c2[:, 1, 1] + COV_DILATION],
                     axis=1)
    mean2d = np.stack([fx * x / z + camera.cx, fy * y / z + camera.cy], axis=1)
    ex, ey = 3.0 * np.sqrt(cov2d[:, 0]), 3.0 * np.sqrt(cov2d[:, 2])
    on_screen = ((mean2d[:, 0] + ex > 0) & (mean2d[:, 0] - ex < camera.width)
                 & (mean2d[:, 1] + ey > 0) & (mean2d[:, 1] - ey < camera.height))
    sel = np.nonzero(on_screen)[0]
    splats = Splats2D(mean2d[sel], cov2d[sel], z[sel], np.asarray(gaussians.colors, np.float64)[ids[sel]],
                      np.asarray(gaussians.opacities, np.float64)[ids[sel]], ids[sel])
    ctx = ProjectContext(camera, ids[sel], pc[sel], J[sel], cov_cam[sel], R[sel], s[sel], len(mu))
    return splats, ctx


def _quat_grad(q, dR):
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = dR
    dw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    dx = 2 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1] - w * g[:, 1, 2]
              + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2])
    dy = 2 * (-2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0] + z * g[:, 1, 2]
              - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2])
    dz = 2 * (-2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0] - 2 * z * g[:, 1, 1]
              + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    return np.stack([dw, dx, dy, dz], axis=1)


def project_backward(ctx: ProjectContext, rotations, d_mean2d, d_cov2d):
    """Gradients w.r.t. the input Gaussians' positions, scales and (unit) rotations.

    Rows for culled Gaussians are zero.
    """
    cam = ctx.camera
    n = ctx.n_input
    d_pos, d_scale, d_rot = np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4))
    if len(ctx.ids) == 0:
        return d_pos, d_scale, d_rot
    pc, J, V = ctx.pc, ctx.J, ctx.cov_cam
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    fx, fy = cam.fx, cam.fy
    G2 = np.empty((len(pc), 2, 2))
    G2[:, 0, 0] = d_cov2d[:, 0]
    G2[:, 0, 1] = G2[:, 1, 0] = 0.5 * d_cov2d[:, 1]
    G2[:, 1, 1] = d_cov2d[:, 2]
    Jt = np.swapaxes(J, 1, 2)
    dV = Jt @ G2 @ J
    dJ = 2.0 * G2 @ J @ V
    dpc = np.zeros_like(pc)
    dpc[:, 0] = d_mean2d[:, 0] * fx / z - dJ[:, 0, 2] * fx / (z * z)
    dpc[:, 1] = d_mean2d[:, 1] * fy / z - dJ[:, 1, 2] * fy / (z * z)
    dpc[:, 2] = (-d_mean2d[:, 0] * fx * x / (z * z) - d_mean2d[:, 1] * fy * y / (z * z)
                 - dJ[:, 0, 0] * fx / (z * z) + dJ[:, 0, 2] * 2 * fx * x / z ** 3
                 - dJ[:, 1, 1] * fy / (z * z) + dJ[:, 1, 2] * 2 * fy * y / z ** 3)
    d_pos[ctx.ids] = dpc @ cam.R
    dSigma = cam.R.T @ dV @ cam.R
    dSigma = 0.5 * (dSigma + np.swapaxes(dSigma, 1, 2))
    M = ctx.R * ctx.scales[:, None, :]
    dM = 2.0 * dSigma @ M
    d_scale[ctx.ids] = np.einsum("nij,nij->nj", dM, ctx.R)
    dR = dM * ctx.scales[:, None, :]
    q = np.asarray(rotations, dtype=np.float64)[ctx.ids]
    d_rot[ctx.ids] = _quat_grad(q, dR)
    return d_pos, d_scale, d_rot


# --------------------------------------------------------------------------- blending


@dataclass
class BlendContext:
    order: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    conic: np.ndarray
    color: np.ndarray
    opacity: np.ndarray
    height: int
    width: int
    tiles: tuple | None
    final_t: np.ndarray
    n_used: np.ndarray | None


def _check_finite(splats: Splats2D):
    for name in ("mean2d", "cov2d", "color", "opacity", "depth"):
        if not np.isfinite(getattr(splats, name)).all():
            raise ValueError(f"non-finite splat {name}")


def depth_order(depth: np.ndarray) -> np.ndarray:
    """Ascending depth, ties broken by input index."""
    return np.lexsort((np.arange(len(depth)), depth))


def rasterize(splats: Splats2D, height: int, width: int, backend: str | None = None):
    """Composite splats front to back over a black background.

    Returns (image (H, W, 3) float64, BlendContext).
    """
    _check_finite(splats)
    use_nb = USE_NUMBA if backend is None else backend == "numba"
    order = depth_order(splats.depth)
    mean = np.ascontiguousarray(splats.mean2d[order], dtype=np.float64)
    cov = np.ascontiguousarray(splats.cov2d[order], dtype=np.float64)
    conic = np.ascontiguousarray(rk.conics(cov)) if len(cov) else np.zeros((0, 3))
    color = np.ascontiguousarray(splats.color[order], dtype=np.float64)
    opacity = np.ascontiguousarray(splats.opacity[order], dtype=np.float64)
    if use_nb:
        tiles = rk.bin_tiles(mean, cov, height, width)
        img, final_t, n_used = rk.rasterize_forward_nb(mean, conic, color, opacity, height, width, tiles)
    else:
        tiles, n_used = None, None
        img, final_t = rk.rasterize_forward_np(mean, conic, color, opacity, height, width)
    ctx = BlendContext(order, mean, cov, conic, color, opacity, height, width, tiles, final_t, n_used)
    return img, ctx


def rasterize_backward(ctx: BlendContext, image_gradient):
    """Gradients w.r.t. each input splat's mean2d, cov2d (a, b, c), color and opacity, in input order."""
    dimg = np.asarray(image_gradient, dtype=np.float64)
    if dimg.shape != (ctx.height, ctx.width, 3):
        raise ContractViolation("image gradient shape does not match the forward pass")
    if ctx.tiles is not None:
        dmean, dconic, dcolor, dop = rk.rasterize_backward_nb(ctx.mean, ctx.conic, ctx.color, ctx.opacity,
                                                              ctx.height, ctx.width, ctx.tiles, ctx.final_t,
                                                              ctx.n_used, dimg)
    else:
        dmean, dconic, dcolor, dop = rk.rasterize_backward_np(ctx.mean, ctx.conic, ctx.color, ctx.opacity,
                                                              ctx.height, ctx.width, dimg)
    dcov = conic_to_cov_grad(ctx.conic, dconic)
    m = len(ctx.order)
    out = [np.zeros((m, 2)), np.zeros((m, 3)), np.zeros((m, 3)), np.zeros(m)]
    for dst, src in zip(out, (dmean, dcov, dcolor, dop)):
        dst[ctx.order] = src
    return tuple(out)


def conic_to_cov_grad(conic, dconic):
    """Chain d(loss)/d(conic) back to d(loss)/d(cov) for the (a, b, c) parameterization."""
    A, B, C = conic[:, 0], conic[:, 1], conic[:, 2]
    gA, gB, gC = dconic[:, 0], dconic[:, 1] * 0.5, dconic[:, 2]
    # -(P G P) with P the (symmetric) conic matrix and G the symmetric upstream gradient
    m00 = -(A * A * gA + 2 * A * B * gB + B * B * gC)
    m01 = -(A * B * gA + (A * C + B * B) * gB + B * C * gC)
    m11 = -(B * B * gA + 2 * B * C * gB + C * C * gC)
    return np.stack([m00, 2 * m01, m11], axis=1)


def render(gaussians: TemporalGaussians, camera: Camera, backend: str | None = None):
    """Project and rasterize. Returns (image, (ProjectContext, BlendContext, Splats2D))."""
    splats, pctx = project(gaussians, camera)
    img, bctx = rasterize(splats, camera.height, camera.width, backend=backend)
    return img, (pctx, bctx, splats)


def render_backward(gaussians: TemporalGaussians, contexts, image_gradient):
    """Gradients w.r.t. Gaussian positions, scales, rotations, opacities, colors."""
    pctx, bctx, _ = contexts
    dmean, dcov, dcolor, dop = rasterize_backward(bctx, image_gradient)
    d_pos, d_scale, d_rot = project_backward(pctx, gaussians.rotations, dmean, dcov)
    n = len(gaussians)
    d_op, d_col = np.zeros(n), np.zeros((n, 3))
    d_op[pctx.ids] = dop
    d_col[pctx.ids] = dcolor
    return d_pos, d_scale, d_rot, d_op, d_col


# --------------------------------------------------------------------------- image io


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, img: np.ndarray) -> None:
    arr = img if img.dtype == np.uint8 else to_uint8(img)
    Image.fromarray(arr).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clipstream.kernels import raster as rk
from clipstream.rasterizer import (COV_DILATION, Camera, Splats2D, project, rasterize, rasterize_backward, render,
                                   to_uint8)
from clipstream.scene import ContractViolation, TemporalGaussians

import gradcheck
from conftest import front_camera


def gaussians(pos, scales, rots=None, op=None, col=None):
    n = len(pos)
    rots = np.tile([1.0, 0, 0, 0], (n, 1)) if rots is None else rots
    op = np.full(n, 0.8) if op is None else op
    col = np.full((n, 3), 0.5) if col is None else col
    return TemporalGaussians(np.asarray(pos, float), np.asarray(scales, float), np.asarray(rots, float),
                             np.asarray(op, float), np.asarray(col, float))


def splats(mean, cov, depth, color, opacity):
    n = len(mean)
    return Splats2D(np.asarray(mean, float), np.asarray(cov, float), np.asarray(depth, float),
                    np.asarray(color, float), np.asarray(opacity, float), np.arange(n))


def random_splats(seed, n=12, size=24):
    rng = np.random.default_rng(seed)
    a = rng.uniform(1, 20, n)
    c = rng.uniform(1, 20, n)
    b = rng.uniform(-0.8, 0.8, n) * np.sqrt(a * c)
    return splats(rng.uniform(0, size, (n, 2)), np.column_stack([a, b, c]), rng.permutation(n) + 1.0,
                  rng.uniform(size=(n, 3)), rng.uniform(0.1, 0.99, n))


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(0.0, 1.0, 0, 0, np.eye(3), np.zeros(3), 4, 4)
    with pytest.raises(ValueError):
        Camera(1.0, 1.0, 0, 0, 2 * np.eye(3), np.zeros(3), 4, 4)
    cam = Camera.look_at([3, 0, 2], [0, 0, 0], [0, 0, 1], 40, 32, 24)
    assert Camera.from_dict(cam.to_dict()).to_dict() == cam.to_dict()
    np.testing.assert_allclose(cam.center, [3, 0, 2])


def test_isotropic_on_axis_projection():
    cam = Camera(20.0, 30.0, 4, 4, np.eye(3), np.zeros(3), 8, 8)
    a, z = 0.3, 2.5
    s, _ = project(gaussians([[0, 0, z]], [[a, a, a]]), cam)
    np.testing.assert_allclose(s.cov2d[0], [(20 * a / z) ** 2 + COV_DILATION, 0, (30 * a / z) ** 2 + COV_DILATION],
                               rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(s.mean2d[0], [4, 4])


def test_behind_and_offscreen_culled():
    cam = front_camera()
    s, _ = project(gaussians([[0, 0, -1.0], [0, 0, 0.005], [50, 0, 1.0], [0, 0, 2.0]], np.full((4, 3), 0.1)), cam)
    assert list(s.ids) == [3]


@settings(max_examples=25, deadline=None)
@given(q=st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_isotropic_rotation_invariant(q):
    cam = front_camera()
    q = np.array(q) / np.linalg.norm(q)
    base, _ = project(gaussians([[0.1, -0.1, 2.0]], [[0.2, 0.2, 0.2]]), cam)
    rot, _ = project(gaussians([[0.1, -0.1, 2.0]], [[0.2, 0.2, 0.2]], rots=[q]), cam)
    np.testing.assert_allclose(rot.cov2d, base.cov2d, rtol=1e-10, atol=1e-12)


def test_opaque_singleton():
    s = splats([[2.5, 1.5]], [[1.0, 0.0, 1.0]], [1.0], [[0.2, 0.4, 0.6]], [1.0])
    img, _ = rasterize(s, 4, 4)
    np.testing.assert_allclose(img[1, 2], [0.2, 0.4, 0.6], atol=1e-3)


def test_two_layer_composite():
    s = splats([[0.5, 0.5], [0.5, 0.5]], [[1, 0, 1], [1, 0, 1]], [1.0, 2.0], [[1, 0, 0], [0, 1, 0]], [0.5, 1.0])
    img, _ = rasterize(s, 1, 1)
    np.testing.assert_allclose(img[0, 0], [0.5, 0.5, 0.0], atol=1e-3)


def test_empty_is_black():
    img, ctx = rasterize(splats(np.zeros((0, 2)), np.zeros((0, 3)), [], np.zeros((0, 3)), []), 5, 7)
    assert img.shape == (5, 7, 3) and not img.any()
    assert not any(g.any() for g in rasterize_backward(ctx, np.ones((5, 7, 3))))


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        rasterize(splats([[np.nan, 0]], [[1, 0, 1]], [1.0], [[1, 1, 1]], [0.5]), 4, 4)


def test_zero_gradient_and_color_derivative():
    s = splats([[1.5, 1.5]], [[2.0, 0.3, 1.5]], [1.0], [[0.3, 0.3, 0.3]], [0.7])
    img, ctx = rasterize(s, 4, 4)
    assert not any(g.any() for g in rasterize_backward(ctx, np.zeros((4, 4, 3))))
    g = np.zeros((4, 4, 3))
    g[2, 3, 1] = 1.0
    _, _, dcolor, _ = rasterize_backward(ctx, g)
    conic = rk.conics(s.cov2d)[0]
    dx, dy = 3.5 - 1.5, 2.5 - 1.5
    alpha = 0.7 * math.exp(-0.5 * (conic[0] * dx * dx + conic[2] * dy * dy) - conic[1] * dx * dy)
    assert dcolor[0, 1] == pytest.approx(alpha, rel=1e-12)
    assert dcolor[0, 0] == 0 and dcolor[0, 2] == 0


def test_backward_shape_mismatch():
    _, ctx = rasterize(random_splats(0), 8, 8)
    with pytest.raises(ContractViolation):
        rasterize_backward(ctx, np.zeros((8, 9, 3)))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), perm_seed=st.integers(0, 10_000))
def test_permutation_invariance(seed, perm_seed):
    s = random_splats(seed)
    p = np.random.default_rng(perm_seed).permutation(len(s))
    t = splats(s.mean2d[p], s.cov2d[p], s.depth[p], s.color[p], s.opacity[p])
    np.testing.assert_array_equal(rasterize(s, 24, 24)[0], rasterize(t, 24, 24)[0])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_transmittance_bounds(seed):
    img, ctx = rasterize(random_splats(seed, n=30), 24, 24)
    assert np.all((ctx.final_t >= 0) & (ctx.final_t <= 1))
    assert np.all(img >= 0) and np.all(img <= 1 + 1e-12)


def reference_blend(s, H, W):
    """Per-pixel loop over every splat with no tiling at all."""
    order = np.lexsort((np.arange(len(s)), s.depth))
    conic = rk.conics(s.cov2d[order])
    img = np.zeros((H, W, 3))
    for y in range(H):
        for x in range(W):
            T = 1.0
            for j, i in enumerate(order):
                dx, dy = x + 0.5 - s.mean2d[i, 0], y + 0.5 - s.mean2d[i, 1]
                power = -0.5 * (conic[j, 0] * dx * dx + conic[j, 2] * dy * dy) - conic[j, 1] * dx * dy
                if power < rk.POWER_CUTOFF:
                    continue
                alpha = min(rk.ALPHA_MAX, s.opacity[i] * math.exp(min(power, 0.0)))
                if T * (1 - alpha) < rk.T_MIN:
                    break
                img[y, x] += alpha * T * s.color[i]
                T *= 1 - alpha
    return img


@pytest.mark.parametrize("seed", range(3))
def test_matches_untiled_reference(seed):
    s = random_splats(seed, n=25, size=40)
    np.testing.assert_allclose(rasterize(s, 40, 37)[0], reference_blend(s, 40, 37), rtol=0, atol=1e-12)


@pytest.mark.parametrize("x0,y0", [(5, 3), (16, 16), (11, 29)])
def test_crop_consistency(x0, y0):
    # the crop puts tile borders somewhere else relative to the content
    s = random_splats(7, n=25, size=40)
    full, _ = rasterize(s, 40, 40)
    shifted = splats(s.mean2d - [x0, y0], s.cov2d, s.depth, s.color, s.opacity)
    crop, _ = rasterize(shifted, 40 - y0, 40 - x0)
    np.testing.assert_allclose(crop, full[y0:, x0:], rtol=0, atol=1e-12)


def test_render_deterministic():
    g, cam, _ = gradcheck.micro_scene(3)
    np.testing.assert_array_equal(render(g, cam)[0], render(g, cam)[0])


@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(seed):
    errs = gradcheck.rasterizer_errors(seed)
    assert max(errs.values()) < gradcheck.RTOL, errs


def test_to_uint8_rounds_and_clips():
    np.testing.assert_array_equal(to_uint8(np.array([-0.1, 0.5, 1.2])), [0, 128, 255])

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clipstream.metrics import (C1, dssim, dssim_luma, flicker, heatmap_image, psnr, residual_map, ssim,
                                ssim_with_grad)
from clipstream.pipeline import render_frame
from clipstream.scene import ContractViolation
from clipstream.synth import SceneSpec, generate
from clipstream.trainer import TrainConfig, train_sequence

from conftest import TINY_SCENE, TINY_TRAIN

images = st.integers(0, 10_000).map(lambda s: np.random.default_rng(s).uniform(size=(12, 13, 3)))


def test_psnr_identical_is_infinite():
    a = np.random.default_rng(0).uniform(size=(4, 4, 3))
    assert psnr(a, a) == math.inf


def test_psnr_black_vs_gray():
    assert psnr(np.zeros((8, 8, 3)), np.full((8, 8, 3), 0.5)) == pytest.approx(10 * math.log10(4), abs=1e-12)
    assert psnr(np.zeros((8, 8, 3)), np.full((8, 8, 3), 0.5)) == pytest.approx(6.02, abs=5e-3)


def test_psnr_log_law():
    rng = np.random.default_rng(1)
    base = np.full((16, 16, 3), 0.5)
    noise = rng.choice([-1.0, 1.0], size=base.shape)
    eps = 0.1
    assert psnr(base + noise * eps / 10, base) - psnr(base + noise * eps, base) == pytest.approx(20.0, abs=1e-9)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))
    with pytest.raises(ValueError):
        dssim(np.zeros((2, 2, 3)), np.zeros((3, 2, 3)))


@pytest.mark.parametrize("m1,m2", [(0.2, 0.7), (0.0, 1.0), (0.5, 0.5)])
def test_ssim_on_constant_images(m1, m2):
    a, b = np.full((15, 15, 3), m1), np.full((15, 15, 3), m2)
    want = (2 * m1 * m2 + C1) / (m1 ** 2 + m2 ** 2 + C1)
    assert ssim(a, b) == pytest.approx(want, rel=1e-9)


@settings(max_examples=20, deadline=None)
@given(a=images, b=images)
def test_dssim_properties(a, b):
    assert dssim(a, a) == pytest.approx(0.0, abs=1e-12)
    assert dssim(a, b) == pytest.approx(dssim(b, a), abs=1e-12)
    assert 0.0 <= dssim(a, b) <= 1.0
    assert 0.0 <= dssim_luma(a, b) <= 1.0


def test_ssim_gradient():
    rng = np.random.default_rng(3)
    x, y = rng.uniform(size=(9, 10, 3)), rng.uniform(size=(9, 10, 3))
    _, g = ssim_with_grad(x, y)
    h = 1e-5
    for idx in [(0, 0, 0), (4, 5, 1), (8, 9, 2), (3, 0, 2)]:
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        assert g[idx] == pytest.approx((ssim(xp, y) - ssim(xm, y)) / (2 * h), rel=1e-5)


def test_residual_and_heatmap():
    a = np.zeros((2, 2, 3))
    b = np.full((2, 2, 3), 0.1)
    np.testing.assert_allclose(residual_map(a, b), 0.1)
    np.testing.assert_array_equal(heatmap_image(np.array([[0.1, 0.5]])), [[102, 255]])


@pytest.fixture(scope="module")
def tiny_state(tiny_dataset):
    return train_sequence(tiny_dataset, TrainConfig(**TINY_TRAIN))


def test_flicker_report(tiny_state, tiny_dataset):
    rep = flicker(tiny_state, tiny_dataset.cameras[0])
    assert rep.boundaries == [(0, 1), (1, 2)]
    assert all(0 <= r <= 1 for r in rep.mean_residual)
    assert all(h.min() >= 0 and h.max() <= 1 for h in rep.heatmaps)
    again = flicker(tiny_state, tiny_dataset.cameras[0])
    assert again.to_dict() == rep.to_dict()


def test_identical_render_has_zero_residual(tiny_state, tiny_dataset):
    cam = tiny_dataset.cameras[1]
    assert not residual_map(render_frame(tiny_state, cam, 3), render_frame(tiny_state, cam, 3)).any()


def test_single_clip_has_no_boundaries():
    ds = generate(SceneSpec(**{**TINY_SCENE, "frames": 2}))
    state = train_sequence(ds, TrainConfig(**{**TINY_TRAIN, "clip_count": 1}))
    rep = flicker(state, ds.cameras[0])
    assert rep.boundaries == [] and rep.mean_residual == []


def test_untrained_clip_rejected(tiny_dataset):
    state = train_sequence(tiny_dataset, TrainConfig(**TINY_TRAIN), stop_after=0)
    with pytest.raises(ContractViolation):
        flicker(state, tiny_dataset.cameras[0])

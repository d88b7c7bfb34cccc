import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from clipstream.decoder import DecoderHeads, decode, decode_dynamic_only, decode_static_only
from clipstream.scene import FEATURE_DIM

import gradcheck

SCALE = np.array([0.1, 0.1, 0.1])


def heads(seed=0, k=3):
    return DecoderHeads(k, 0.2, rng=np.random.default_rng(seed), hidden=16)


def test_zero_heads_constant_output(rng):
    h = heads().zero_()
    g, _ = decode(h, rng.normal(size=(4, FEATURE_DIM)), rng.normal(size=(4, FEATURE_DIM)), rng.normal(size=(4, 3)),
                  SCALE)
    assert len(g) == 12
    np.testing.assert_array_equal(g.opacities, 0.5)
    np.testing.assert_array_equal(g.colors, 0.5)
    np.testing.assert_array_equal(g.rotations, np.tile([1.0, 0, 0, 0], (12, 1)))


def test_offsets_compose_with_anchor(rng):
    h = heads(k=2).zero_()
    h.heads["offset"].params["b2"][...] = [1, 0, 0, 0, 2, 0]
    mu = np.array([[1.0, 2.0, 3.0]])
    g, _ = decode(h, np.zeros((1, FEATURE_DIM)), np.zeros((1, FEATURE_DIM)), mu, [0.5, 1, 1])
    np.testing.assert_allclose(g.positions, [[1.5, 2, 3], [1, 4, 3]])


@settings(max_examples=30, deadline=None)
@given(fs=arrays(np.float64, (2, FEATURE_DIM), elements=st.floats(-50, 50)),
       fd=arrays(np.float64, (2, FEATURE_DIM), elements=st.floats(-50, 50)))
def test_output_invariants(fs, fd):
    g, _ = decode(heads(), fs, fd, np.zeros((2, 3)), SCALE)
    np.testing.assert_allclose(np.linalg.norm(g.rotations, axis=1), 1.0, atol=1e-6)
    assert np.all(g.scales > 0) and np.all(g.scales <= 0.2)
    assert np.all((g.opacities >= 0) & (g.opacities <= 1))
    assert np.all((g.colors >= 0) & (g.colors <= 1))


def test_rejects_non_finite(rng):
    fs = rng.normal(size=(1, FEATURE_DIM))
    bad = fs.copy()
    bad[0, 3] = np.nan
    with pytest.raises(ValueError):
        decode(heads(), fs, bad, np.zeros((1, 3)), SCALE)
    with pytest.raises(ValueError):
        decode(heads(), fs, np.zeros((2, FEATURE_DIM)), np.zeros((1, 3)), SCALE)


def _same(a, b):
    for name in ("positions", "scales", "rotations", "opacities", "colors"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_static_and_dynamic_only(rng):
    h = heads()
    f = rng.normal(size=(3, FEATURE_DIM))
    mu = rng.normal(size=(3, 3))
    z = np.zeros_like(f)
    _same(decode_static_only(h, f, mu, SCALE)[0], decode(h, f, z, mu, SCALE)[0])
    _same(decode_dynamic_only(h, f, mu, SCALE)[0], decode(h, z, f, mu, SCALE)[0])
    _same(decode_dynamic_only(h, z, mu, SCALE)[0], decode_static_only(h, z, mu, SCALE)[0])


def test_deterministic(rng):
    h = heads()
    f = rng.normal(size=(3, FEATURE_DIM))
    _same(decode(h, f, f, np.zeros((3, 3)), SCALE)[0], decode(h, f, f, np.zeros((3, 3)), SCALE)[0])


def test_copy_is_independent():
    h = heads()
    c = h.copy()
    h.heads["color"].params["b2"][...] += 1
    assert not np.array_equal(c.heads["color"].params["b2"], h.heads["color"].params["b2"])


@pytest.mark.parametrize("seed", range(3))
def test_render_through_decode_gradients(seed):
    errs = gradcheck.decoder_errors(seed)
    assert max(errs.values()) < gradcheck.RTOL, errs

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from clipstream import checkpoint
from clipstream.scene import (FEATURE_DIM, AnchorSet, ContractViolation, clip_for_time, compose_positions,
                              make_clips, merge_anchor_sets)
from clipstream.trainer import train_sequence

finite = st.floats(-100, 100, allow_nan=False, width=64)


def test_compose_identity_scale():
    out = compose_positions([0, 0, 0], [[1, 0, 0]], [1, 1, 1])
    np.testing.assert_array_equal(out, [[1, 0, 0]])


def test_compose_zero_offsets_collapse():
    out = compose_positions([1, 2, 3], np.zeros((2, 3)), [5, 5, 5])
    np.testing.assert_array_equal(out, [[1, 2, 3], [1, 2, 3]])


def test_compose_componentwise_scale():
    out = compose_positions([0, 0, 0], [[1, 1, 1]], [2, 3, 4])
    np.testing.assert_array_equal(out, [[2, 3, 4]])


@pytest.mark.parametrize("scale", [[0, 1, 1], [1, -1, 1]])
def test_compose_rejects_nonpositive_scale(scale):
    with pytest.raises(ValueError):
        compose_positions([0, 0, 0], [[1, 0, 0]], scale)


def test_compose_rejects_empty_offsets():
    with pytest.raises(ValueError):
        compose_positions([0, 0, 0], np.zeros((0, 3)), [1, 1, 1])


@settings(max_examples=60, deadline=None)
@given(mu=arrays(np.float64, 3, elements=finite), off=arrays(np.float64, (3, 3), elements=finite),
       scale=arrays(np.float64, 3, elements=st.floats(0.01, 10)), a=st.floats(-10, 10))
def test_compose_linear_in_offsets(mu, off, scale, a):
    lhs = compose_positions(mu, a * off, scale) - mu
    rhs = a * (compose_positions(mu, off, scale) - mu)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-7)


def _anchors(n, origin=0, offset=0.0):
    return AnchorSet.from_points(np.arange(3 * n, dtype=float).reshape(n, 3) + offset, origin)


def test_merge_empty_residual():
    m = merge_anchor_sets(_anchors(3), AnchorSet.empty())
    assert len(m) == 3 and m.frozen.all()


def test_merge_flags_order():
    m = merge_anchor_sets(_anchors(3), _anchors(2, 1, offset=100))
    assert list(m.frozen) == [True, True, True, False, False]
    assert list(m.origin_clip) == [0, 0, 0, 1, 1]


def test_merge_empty_base():
    m = merge_anchor_sets(AnchorSet.empty(), _anchors(7, 1))
    assert len(m) == 7 and not m.frozen.any()


def test_merge_collision_is_contract_violation():
    with pytest.raises(ContractViolation):
        merge_anchor_sets(_anchors(3), _anchors(1))


def test_anchor_feature_width_checked():
    with pytest.raises(ValueError):
        AnchorSet(np.zeros((2, 3)), np.zeros((2, FEATURE_DIM - 1)), np.zeros(2, bool), np.zeros(2))


def test_frozen_prefix_invariant():
    a = merge_anchor_sets(_anchors(2), _anchors(2, 1, offset=50))
    a.check_invariants(current_clip=1)
    a.frozen[:] = [False, True, True, False]
    with pytest.raises(ContractViolation):
        a.check_invariants()


def test_clip_layout():
    clips = make_clips(3, 10)
    assert [c.frame_range for c in clips] == [range(0, 10), range(10, 20), range(20, 30)]
    assert clips[1].local_time(clips[1].frame_time(15)) == pytest.approx(0.5)
    assert clip_for_time(1.0, 3) == 2 and clip_for_time(0.0, 3) == 0


def test_checkpoint_round_trip_bit_exact(tiny_dataset, tiny_config, tmp_path):
    state = train_sequence(tiny_dataset, tiny_config)
    blob = checkpoint.to_bytes(state)
    back = checkpoint.from_bytes(blob)
    assert checkpoint.to_bytes(back) == blob
    np.testing.assert_array_equal(back.reference_anchors.positions, state.reference_anchors.positions)
    for n in state.stf_registry:
        np.testing.assert_array_equal(back.stf_registry[n].grid.tables, state.stf_registry[n].grid.tables)
        np.testing.assert_array_equal(back.anchors_for_clip(n).features, state.anchors_for_clip(n).features)
    assert back.meta == state.meta


def test_checkpoint_rejects_garbage(tmp_path):
    with pytest.raises(ValueError):
        checkpoint.from_bytes(b"not a checkpoint at all")


def test_reference_anchors_persist_in_every_clip(tiny_dataset, tiny_config):
    state = train_sequence(tiny_dataset, tiny_config)
    a0 = state.reference_anchors
    for n in state.trained_clips:
        an = state.anchors_for_clip(n)
        assert len(an) >= len(a0)
        np.testing.assert_array_equal(an.positions[:len(a0)], a0.positions)

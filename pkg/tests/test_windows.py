"""Windowing and segmentation: anchors, round trips, padding properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from filterlab.neural.windows import (
    STD_FLOOR,
    desegment,
    make_windows,
    n_segments,
    segment,
    segment_and_normalize,
    window_anchors,
)
from filterlab.systems import Trajectory


def _traj(t=200, m=2, n=2, seed=0):
    rng = np.random.default_rng(seed)
    return Trajectory(
        states=rng.normal(size=(t, m)),
        observations=rng.normal(size=(t, n)),
        seed=seed,
    )


def test_anchor_count_stride_one():
    anchors = window_anchors(200, 40, 1)
    assert anchors[0] == 39
    assert anchors[-1] == 199
    assert len(anchors) == 161  # T_traj - T + 1


def test_anchor_count_stride_window():
    np.testing.assert_array_equal(
        window_anchors(200, 40, 40), [39, 79, 119, 159, 199]
    )


def test_anchors_too_short():
    with pytest.raises(ValueError):
        window_anchors(30, 40, 1)
    # exactly T long admits a single window
    assert list(window_anchors(40, 40, 1)) == [39]


def test_make_windows_alignment():
    traj = _traj()
    wb = make_windows(traj, 40, stride=17)
    assert wb.obs_windows.shape == (len(wb.alignment), 40, 2)
    assert wb.state_targets.shape == wb.obs_windows.shape[:2] + (2,)
    for k, a in enumerate(wb.alignment):
        np.testing.assert_array_equal(
            wb.obs_windows[k], traj.observations[a - 39 : a + 1]
        )
        np.testing.assert_array_equal(
            wb.state_targets[k], traj.states[a - 39 : a + 1]
        )


def test_make_windows_rejects_bad_stride():
    with pytest.raises(ValueError):
        make_windows(_traj(), 40, stride=0)


@given(
    t=st.integers(min_value=1, max_value=512),
    length=st.integers(min_value=1, max_value=512),
)
@settings(max_examples=300, deadline=None)
def test_segment_count_identity(t, length):
    ns, pad = n_segments(t, length)
    assert ns * length == t + pad
    assert 0 <= pad < length
    assert ns >= 1


def test_segment_raw_roundtrip_bit_exact():
    rng = np.random.default_rng(0)
    win = rng.normal(size=(40, 3))
    segs = segment(win, 20)
    assert segs.shape == (2, 20, 3)
    np.testing.assert_array_equal(segs.reshape(40, 3), win)
    # uneven split pads the tail with exact zeros
    segs = segment(win, 17)
    assert segs.shape == (3, 17, 3)
    np.testing.assert_array_equal(segs.reshape(-1, 3)[:40], win)
    np.testing.assert_array_equal(segs.reshape(-1, 3)[40:], 0.0)


def test_normalized_roundtrip():
    rng = np.random.default_rng(1)
    win = rng.normal(2.0, 5.0, size=(40, 4))
    for seg_len in (40, 20, 7):
        batch = segment_and_normalize(win, seg_len)
        back = desegment(batch, 40)
        np.testing.assert_allclose(back, win, atol=1e-12)


def test_normalized_segments_are_zero_mean_unit_std():
    rng = np.random.default_rng(2)
    win = rng.normal(3.0, 10.0, size=(40, 2))
    batch = segment_and_normalize(win, 20)
    np.testing.assert_allclose(batch.segments.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(batch.segments.std(axis=1), 1.0, atol=1e-12)


def test_padding_applied_after_normalization():
    rng = np.random.default_rng(3)
    win = rng.normal(size=(10, 2))
    batch = segment_and_normalize(win, 8)
    assert batch.pad_len == 6
    np.testing.assert_array_equal(batch.segments[1, 2:], 0.0)
    # stats of the second segment come from the 2 unpadded rows only
    np.testing.assert_allclose(batch.norm_stats[1, 0], win[8:].mean(axis=0))


def test_constant_channel_hits_std_floor():
    win = np.ones((20, 2))
    batch = segment_and_normalize(win, 10)
    assert np.all(np.isfinite(batch.segments))
    np.testing.assert_array_equal(batch.norm_stats[:, 1, :], STD_FLOOR)
    np.testing.assert_allclose(desegment(batch, 20), win, atol=1e-12)


def test_segment_len_validation():
    with pytest.raises(ValueError):
        segment_and_normalize(np.zeros((10, 2)), 0)

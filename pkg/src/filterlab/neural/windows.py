"""Moving-horizon windowing and multi-channel segmentation.

A window pairs the observations y_{t-T+1..t} with the co-timed state
targets x_{t-T+1..t}, anchored at the window's last observation time t, so
block i of the estimate spans the same steps as observation segment i.
Windows are split along time into ceil(T/L) segments that keep the channel
axis intact; each segment is z-scored per channel and the final partial
segment is zero-padded after normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..systems import Trajectory

STD_FLOOR = 1e-6


@dataclass
class WindowBatch:
    obs_windows: np.ndarray  # (B, T, N)
    state_targets: np.ndarray  # (B, T, M)
    window_len: int
    alignment: np.ndarray  # (B,) anchor index of each window's last observation


@dataclass
class SegmentBatch:
    segments: np.ndarray  # (N_s, L, N), normalized, final segment padded
    norm_stats: np.ndarray  # (N_s, 2, N): per-segment per-channel (mean, std)
    pad_len: int


def window_anchors(traj_len: int, window_len: int, stride: int) -> np.ndarray:
    """Anchor indices t (0-based, last observation of the window) for which
    the window y_{t-T+1..t} lies inside the trajectory."""
    first = window_len - 1
    last = traj_len - 1
    if last < first:
        raise ValueError(
            f"trajectory of length {traj_len} too short for window {window_len}"
        )
    return np.arange(first, last + 1, stride)


def make_windows(traj: Trajectory, window_len: int, stride: int = 1) -> WindowBatch:
    """Slice a trajectory into (observation window, state target) pairs."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    anchors = window_anchors(len(traj), window_len, stride)
    obs = np.stack(
        [traj.observations[a - window_len + 1 : a + 1] for a in anchors]
    )
    targets = np.stack([traj.states[a - window_len + 1 : a + 1] for a in anchors])
    return WindowBatch(
        obs_windows=obs,
        state_targets=targets,
        window_len=window_len,
        alignment=anchors,
    )


def n_segments(window_len: int, segment_len: int) -> tuple[int, int]:
    """(N_s, pad_len) with N_s * L == T + pad_len and 0 <= pad_len < L."""
    ns = math.ceil(window_len / segment_len)
    return ns, ns * segment_len - window_len


def segment(win: np.ndarray, segment_len: int) -> np.ndarray:
    """Split a (T, N) window into (N_s, L, N) raw segments, zero-padded."""
    t, n = win.shape
    ns, pad = n_segments(t, segment_len)
    padded = np.concatenate([win, np.zeros((pad, n))], axis=0) if pad else win
    return padded.reshape(ns, segment_len, n)


def segment_and_normalize(win: np.ndarray, segment_len: int) -> SegmentBatch:
    """Segment a window and z-score each segment per channel.

    Statistics are computed on the unpadded rows only; padding is applied
    after normalization so pad rows are exact zeros.
    """
    win = np.asarray(win, dtype=float)
    if segment_len < 1:
        raise ValueError("segment_len must be >= 1")
    t, n = win.shape
    ns, pad = n_segments(t, segment_len)
    segments = np.zeros((ns, segment_len, n))
    stats = np.empty((ns, 2, n))
    for i in range(ns):
        chunk = win[i * segment_len : min((i + 1) * segment_len, t)]
        mean = chunk.mean(axis=0)
        std = np.maximum(chunk.std(axis=0), STD_FLOOR)
        stats[i, 0], stats[i, 1] = mean, std
        segments[i, : chunk.shape[0]] = (chunk - mean) / std
    return SegmentBatch(segments=segments, norm_stats=stats, pad_len=pad)


def desegment(batch: SegmentBatch, window_len: int) -> np.ndarray:
    """Invert segment_and_normalize: de-normalize, stitch, strip padding."""
    ns, seg_len, n = batch.segments.shape
    raw = batch.segments * batch.norm_stats[:, 1:2, :] + batch.norm_stats[:, 0:1, :]
    return raw.reshape(ns * seg_len, n)[:window_len]

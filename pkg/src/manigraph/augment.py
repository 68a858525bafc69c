"""Trajectory smoothing and data augmentation over demonstrations."""

from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np

from .demonstrations import Demonstration, Frame
from .errors import ConfigError
from .relations import RelationThresholds, mirror_bit_order
from .vocab import Vocab

log = logging.getLogger(__name__)


def _rebuild(demo: Demonstration, positions: np.ndarray, labels: np.ndarray, frame_ids=None) -> Demonstration:
    if frame_ids is None:
        frame_ids = [fr.frame_id for fr in demo.frames]
    frames = [
        Frame(
            frame_id=int(frame_ids[i]),
            positions=positions[i],
            right=(int(labels[i, 0, 0]), int(labels[i, 0, 1])),
            left=(int(labels[i, 1, 0]), int(labels[i, 1, 1])),
        )
        for i in range(len(frame_ids))
    ]
    return replace(demo, frames=frames)


def _labels_array(demo: Demonstration) -> np.ndarray:
    return np.array([[fr.right, fr.left] for fr in demo.frames], dtype=np.int64)


def smooth(
    demo: Demonstration,
    window: int,
    thresholds: RelationThresholds = RelationThresholds(),
) -> Demonstration:
    """Centered moving average per object per axis; truncated at the endpoints.

    Labels are annotations and carry over unchanged; relations are recomputed
    from the smoothed positions.
    """
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"smoothing window must be odd and >= 1, got {window}")
    if window == 1:
        return demo
    positions = demo.positions_array()
    length = positions.shape[0]
    half = window // 2
    csum = np.cumsum(positions, axis=0)
    smoothed = np.empty_like(positions)
    for i in range(length):
        lo, hi = max(0, i - half), min(length, i + half + 1)
        total = csum[hi - 1] - (csum[lo - 1] if lo > 0 else 0)
        smoothed[i] = total / (hi - lo)
    out = _rebuild(demo, smoothed, _labels_array(demo))
    out.compute_relations(thresholds)
    return out


def _swap_hand_objects(labels: np.ndarray, vocab: Vocab) -> np.ndarray:
    swapped = labels.copy()
    right_mask = labels[..., 1] == vocab.right_hand
    left_mask = labels[..., 1] == vocab.left_hand
    swapped[..., 1][right_mask] = vocab.left_hand
    swapped[..., 1][left_mask] = vocab.right_hand
    return swapped


def augment_mirror(demo: Demonstration) -> Demonstration:
    """Mirror about the x=0 plane: the right-hand stream becomes the left's.

    Positions have x negated, the hand nodes exchange classes, the per-hand
    label streams swap, and the left_of/right_of relation bits swap columns.
    """
    vocab = demo.vocab
    positions = demo.positions_array().copy()
    positions[:, :, 0] = -positions[:, :, 0]

    labels = _labels_array(demo)[:, ::-1, :]  # right stream <-> left stream
    labels = _swap_hand_objects(labels, vocab)

    roster = list(demo.roster)
    node_r = roster.index(vocab.right_hand)
    node_l = roster.index(vocab.left_hand)
    roster[node_r], roster[node_l] = roster[node_l], roster[node_r]

    bit_order = mirror_bit_order()
    out = _rebuild(demo, positions, labels)
    out = replace(out, roster=tuple(roster), source=demo.source + "|mirror" if demo.source else "mirror")
    for src, dst in zip(demo.frames, out.frames):
        dst.relations = None if src.relations is None else src.relations[:, bit_order]
    return out


def augment_resample(
    demo: Demonstration,
    rate: float,
    min_length: int | None = None,
    thresholds: RelationThresholds = RelationThresholds(),
) -> Demonstration | None:
    """Linear temporal resampling; rate > 1 yields more frames (slower playback).

    Labels come from the nearest source frame; frame ids are renumbered from 0.
    Returns None (with a warning) when the result would be shorter than
    ``min_length``.
    """
    if rate <= 0:
        raise ConfigError("resample rate must be positive")
    positions = demo.positions_array()
    length = positions.shape[0]
    new_len = int(np.floor((length - 1) * rate)) + 1
    if min_length is not None and new_len < min_length:
        log.warning(
            "resample rate %.3f shortens %s to %d < %d frames; skipping",
            rate, demo.source or demo.task_id, new_len, min_length,
        )
        return None
    src = np.arange(new_len, dtype=np.float64) / rate
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, length - 1)
    frac = (src - lo)[:, None, None]
    new_positions = positions[lo] * (1.0 - frac) + positions[hi] * frac
    nearest = np.clip(np.rint(src).astype(int), 0, length - 1)
    labels = _labels_array(demo)[nearest]
    out = _rebuild(demo, new_positions, labels, frame_ids=np.arange(new_len))
    out = replace(out, source=f"{demo.source}|resample{rate:.2f}" if demo.source else f"resample{rate:.2f}")
    out.compute_relations(thresholds)
    return out

"""Pairwise semantic relations computed from object center coordinates.

Axis convention (documented in the dataset schema): +x = right, +y = away
from the demonstrator, +z = up. An edge (v, w) describes w relative to v,
e.g. ``right_of`` on edge (v, w) means w lies right of v.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError

STATIC_LABELS = (
    "contact",
    "left_of",
    "right_of",
    "above",
    "below",
    "in_front_of",
    "behind",
)
DYNAMIC_LABELS = (
    "getting_close",
    "moving_apart",
    "stable_distance",
    "moving_together",
)
RELATION_LABELS = STATIC_LABELS + DYNAMIC_LABELS

CONTACT = RELATION_LABELS.index("contact")
LEFT_OF = RELATION_LABELS.index("left_of")
RIGHT_OF = RELATION_LABELS.index("right_of")
ABOVE = RELATION_LABELS.index("above")
BELOW = RELATION_LABELS.index("below")
IN_FRONT_OF = RELATION_LABELS.index("in_front_of")
BEHIND = RELATION_LABELS.index("behind")
GETTING_CLOSE = RELATION_LABELS.index("getting_close")
MOVING_APART = RELATION_LABELS.index("moving_apart")
STABLE_DISTANCE = RELATION_LABELS.index("stable_distance")
MOVING_TOGETHER = RELATION_LABELS.index("moving_together")

# Index pairs that swap when the edge direction is reversed.
ANTISYMMETRIC_PAIRS = ((LEFT_OF, RIGHT_OF), (ABOVE, BELOW), (IN_FRONT_OF, BEHIND))
SYMMETRIC_LABELS = (CONTACT, GETTING_CLOSE, MOVING_APART, STABLE_DISTANCE, MOVING_TOGETHER)


@dataclass(frozen=True)
class RelationThresholds:
    """Distances in meters; ``velocity`` is per sampled step."""

    axis: float = 0.03
    contact: float = 0.05
    velocity: float = 0.005
    min_move: float = 0.01
    direction_cos: float = 0.8

    def __post_init__(self) -> None:
        for name in ("axis", "contact", "velocity", "min_move"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"threshold {name} must be positive")

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "contact": self.contact,
            "velocity": self.velocity,
            "min_move": self.min_move,
            "direction_cos": self.direction_cos,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RelationThresholds":
        return cls(**data)


def edge_pairs(n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Sender/receiver index arrays for the complete bidirectional graph.

    Ordered pairs are enumerated sender-major: (0,1), (0,2), ..., (1,0), ...
    """
    idx = np.arange(n_nodes)
    senders = np.repeat(idx, n_nodes - 1)
    receivers = np.concatenate([np.delete(idx, i) for i in range(n_nodes)]) if n_nodes > 1 else np.zeros(0, dtype=int)
    return senders, receivers


def edge_position(sender: int, receiver: int, n_nodes: int) -> int:
    """Position of ordered pair (sender, receiver) in the edge_pairs order."""
    if sender == receiver or not (0 <= sender < n_nodes and 0 <= receiver < n_nodes):
        raise InputError(f"invalid edge ({sender}, {receiver}) for {n_nodes} nodes")
    offset = receiver if receiver < sender else receiver - 1
    return sender * (n_nodes - 1) + offset


def reversed_edge_order(n_nodes: int) -> np.ndarray:
    """Permutation mapping each edge index to the index of its reversed edge."""
    senders, receivers = edge_pairs(n_nodes)
    return np.array(
        [edge_position(int(r), int(s), n_nodes) for s, r in zip(senders, receivers)],
        dtype=np.int64,
    )


def mirror_bit_order() -> np.ndarray:
    """Column permutation applied to relation vectors when the scene is mirrored."""
    order = np.arange(len(RELATION_LABELS))
    order[LEFT_OF], order[RIGHT_OF] = RIGHT_OF, LEFT_OF
    return order


def extract_relations(
    pos_now: np.ndarray,
    pos_prev: np.ndarray | None,
    thresholds: RelationThresholds = RelationThresholds(),
) -> np.ndarray:
    """Multi-hot relation matrix [M x d_E] for all ordered node pairs.

    ``pos_prev`` is the previous sampled step's positions; when absent all
    dynamic bits are zero except ``stable_distance``.
    """
    pos_now = np.asarray(pos_now, dtype=np.float64)
    if pos_now.ndim != 2 or pos_now.shape[1] != 3:
        raise InputError(f"pos_now must be [N x 3], got {pos_now.shape}")
    if not np.isfinite(pos_now).all():
        raise InputError("pos_now contains non-finite values")
    n = pos_now.shape[0]
    if pos_prev is not None:
        pos_prev = np.asarray(pos_prev, dtype=np.float64)
        if pos_prev.shape != pos_now.shape:
            raise InputError(f"pos_prev shape {pos_prev.shape} != pos_now shape {pos_now.shape}")
        if not np.isfinite(pos_prev).all():
            raise InputError("pos_prev contains non-finite values")

    senders, receivers = edge_pairs(n)
    out = np.zeros((len(senders), len(RELATION_LABELS)), dtype=np.uint8)

    diff = pos_now[receivers] - pos_now[senders]  # receiver relative to sender
    dist_now = np.linalg.norm(diff, axis=1)
    out[:, CONTACT] = dist_now < thresholds.contact
    out[:, RIGHT_OF] = diff[:, 0] > thresholds.axis
    out[:, LEFT_OF] = diff[:, 0] < -thresholds.axis
    out[:, BEHIND] = diff[:, 1] > thresholds.axis
    out[:, IN_FRONT_OF] = diff[:, 1] < -thresholds.axis
    out[:, ABOVE] = diff[:, 2] > thresholds.axis
    out[:, BELOW] = diff[:, 2] < -thresholds.axis

    if pos_prev is None:
        out[:, STABLE_DISTANCE] = 1
        return out

    dist_prev = np.linalg.norm(pos_prev[receivers] - pos_prev[senders], axis=1)
    delta = dist_now - dist_prev
    out[:, GETTING_CLOSE] = delta < -thresholds.velocity
    out[:, MOVING_APART] = delta > thresholds.velocity
    out[:, STABLE_DISTANCE] = np.abs(delta) <= thresholds.velocity

    move = pos_now - pos_prev
    move_norm = np.linalg.norm(move, axis=1)
    dots = np.einsum("md,md->m", move[senders], move[receivers])
    norms = move_norm[senders] * move_norm[receivers]
    both_moving = (move_norm[senders] > thresholds.min_move) & (move_norm[receivers] > thresholds.min_move)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(norms > 0, dots / np.maximum(norms, 1e-300), 0.0)
    out[:, MOVING_TOGETHER] = both_moving & (cos > thresholds.direction_cos)
    return out

"""Stacking graph slices into torch tensors (fixed node count per batch)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import InputError
from .relations import edge_pairs
from .slices import GraphSlice


@dataclass
class GraphBatch:
    x_v: torch.Tensor  # [B,N,H,d_V]
    x_e: torch.Tensor  # [B,M,H,d_E]
    u: torch.Tensor  # [B,d_U]
    frame_ids: torch.Tensor  # [B,H] int64
    senders: torch.Tensor  # [M] int64
    receivers: torch.Tensor  # [M] int64
    current_pairs: torch.Tensor  # [B,2,2]
    history_pairs: torch.Tensor  # [B,2,n_past,2]
    history_starts: torch.Tensor  # [B,2,n_past]
    next_pair: torch.Tensor  # [B,2,2]
    future_pair: torch.Tensor  # [B,2,2]
    horizon_actions: torch.Tensor  # [B,2,P]
    horizon_objects: torch.Tensor  # [B,2,P]
    motion_targets: torch.Tensor  # [B,N,P,3]
    t: torch.Tensor  # [B]

    @property
    def size(self) -> int:
        return self.x_v.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.x_v.shape[1]

    def to(self, dtype: torch.dtype) -> "GraphBatch":
        floats = dict(
            x_v=self.x_v.to(dtype),
            x_e=self.x_e.to(dtype),
            u=self.u.to(dtype),
            motion_targets=self.motion_targets.to(dtype),
        )
        return GraphBatch(
            **floats,
            frame_ids=self.frame_ids,
            senders=self.senders,
            receivers=self.receivers,
            current_pairs=self.current_pairs,
            history_pairs=self.history_pairs,
            history_starts=self.history_starts,
            next_pair=self.next_pair,
            future_pair=self.future_pair,
            horizon_actions=self.horizon_actions,
            horizon_objects=self.horizon_objects,
            t=self.t,
        )


def batch_from_slices(slices: list[GraphSlice], dtype: torch.dtype = torch.float32) -> GraphBatch:
    if not slices:
        raise InputError("cannot batch zero slices")
    n = slices[0].n_nodes
    if any(s.n_nodes != n for s in slices):
        raise InputError("all slices in one batch must share the node count")
    senders, receivers = edge_pairs(n)

    def stack(attr: str, as_dtype=None) -> torch.Tensor:
        arr = np.stack([getattr(s, attr) for s in slices])
        t = torch.from_numpy(arr)
        return t.to(as_dtype) if as_dtype is not None else t

    return GraphBatch(
        x_v=stack("x_v", dtype),
        x_e=stack("x_e", dtype),
        u=stack("u", dtype),
        frame_ids=stack("history_frame_ids"),
        senders=torch.from_numpy(senders).long(),
        receivers=torch.from_numpy(receivers).long(),
        current_pairs=stack("current_pairs"),
        history_pairs=stack("history_pairs"),
        history_starts=stack("history_starts"),
        next_pair=stack("next_pair"),
        future_pair=stack("future_pair"),
        horizon_actions=stack("horizon_actions"),
        horizon_objects=stack("horizon_objects"),
        motion_targets=stack("motion_targets", dtype),
        t=torch.tensor([s.t for s in slices], dtype=torch.int64),
    )


def group_by_nodes(slices: list[GraphSlice]) -> dict[int, list[GraphSlice]]:
    """Split a mixed-roster batch into same-node-count groups."""
    groups: dict[int, list[GraphSlice]] = {}
    for s in slices:
        groups.setdefault(s.n_nodes, []).append(s)
    return groups

"""Multi-stage prediction heads.

Stage 1 predicts the immediate next (action, object) pair per hand from the
current pair and the time-averaged global embedding; stage 2 predicts the
following semantic pair from stage 1's output. Both feed the query sequence
for two transformer decoders: one attends to the global embeddings for
horizon action/object logits, the other to node embeddings for per-object
motion over the horizon.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .batching import GraphBatch
from .encoder import GraphEmbeddings
from .nn.attention import CrossAttentionLayer
from .nn.mlp import Mlp2
from .nn.rope import rope_rotate


@dataclass
class PredictionBundle:
    """All forecast outputs; hand axis ordered (right, left)."""

    next_action_logits: torch.Tensor  # [B,2,|A|]
    next_object_logits: torch.Tensor  # [B,2,|O|]
    future_action_logits: torch.Tensor  # [B,2,|A|]
    future_object_logits: torch.Tensor  # [B,2,|O|]
    horizon_action_logits: torch.Tensor  # [B,2,P,|A|]
    horizon_object_logits: torch.Tensor  # [B,2,P,|O|]
    motions: torch.Tensor  # [B,N,P,3], standardized coordinates


def _pair_onehots(pairs: torch.Tensor, n_actions: int, n_objects: int, dtype: torch.dtype) -> torch.Tensor:
    """[..., 2] integer (action, object) pairs -> concatenated one-hots [..., |A|+|O|]."""
    actions = F.one_hot(pairs[..., 0], n_actions).to(dtype)
    objects = F.one_hot(pairs[..., 1], n_objects).to(dtype)
    return torch.cat([actions, objects], dim=-1)


class PairClassifier(nn.Module):
    """Shared 2-layer trunk with four linear heads (right/left action/object)."""

    def __init__(self, d_in: int, d_mp: int, n_actions: int, n_objects: int, negative_slope: float):
        super().__init__()
        self.trunk = Mlp2(d_in, d_mp, d_mp, negative_slope)
        self.act = nn.LeakyReLU(negative_slope)
        self.action_heads = nn.ModuleList(nn.Linear(d_mp, n_actions) for _ in range(2))
        self.object_heads = nn.ModuleList(nn.Linear(d_mp, n_objects) for _ in range(2))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        hidden = self.act(self.trunk(x))
        actions = torch.stack([head(hidden) for head in self.action_heads], dim=1)
        objects = torch.stack([head(hidden) for head in self.object_heads], dim=1)
        return actions, objects


class QueryBuilder(nn.Module):
    """Per hand: n_past history pair tokens + next token + future token.

    Tokens are linear embeddings of pair one-hots, RoPE-rotated by their start
    frames (history = true starts, next = t+1, future = t+P). The right-hand
    block precedes the left-hand block in the returned sequence.
    """

    def __init__(self, n_actions: int, n_objects: int, d_mp: int, horizon: int, rope_base: float):
        super().__init__()
        self.embed = nn.Linear(n_actions + n_objects, d_mp)
        self.n_actions = n_actions
        self.n_objects = n_objects
        self.horizon = horizon
        self.rope_base = rope_base

    def forward(
        self,
        history_pairs: torch.Tensor,  # [B,2,n_past,2]
        history_starts: torch.Tensor,  # [B,2,n_past]
        next_pairs: torch.Tensor,  # [B,2,2]
        future_pairs: torch.Tensor,  # [B,2,2]
        t: torch.Tensor,  # [B]
        dtype: torch.dtype,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        pairs = torch.cat(
            [history_pairs, next_pairs.unsqueeze(2), future_pairs.unsqueeze(2)], dim=2
        )  # [B,2,n_past+2,2]
        features = _pair_onehots(pairs, self.n_actions, self.n_objects, dtype)
        tokens = self.embed(features)  # [B,2,T,d]
        ids = torch.cat(
            [
                history_starts,
                (t + 1).view(-1, 1, 1).expand(-1, 2, 1),
                (t + self.horizon).view(-1, 1, 1).expand(-1, 2, 1),
            ],
            dim=2,
        )  # [B,2,T]
        b, _, seq, d = tokens.shape
        tokens = tokens.reshape(b, 2 * seq, d)
        ids = ids.reshape(b, 2 * seq)
        return rope_rotate(tokens, ids, self.rope_base), ids


class HorizonDecoder(nn.Module):
    """Cross-attends queries to the global embedding sequence; pools each hand's
    token block and projects to per-step action/object logits."""

    def __init__(
        self,
        d_mp: int,
        n_actions: int,
        n_objects: int,
        horizon: int,
        layers: int,
        heads: int,
        ff_mult: int,
        negative_slope: float,
        rope_base: float,
    ):
        super().__init__()
        self.layers = nn.ModuleList(
            CrossAttentionLayer(d_mp, heads, ff_mult, negative_slope, rope_base)
            for _ in range(layers)
        )
        self.horizon = horizon
        self.n_actions = n_actions
        self.n_objects = n_objects
        self.action_heads = nn.ModuleList(nn.Linear(d_mp, horizon * n_actions) for _ in range(2))
        self.object_heads = nn.ModuleList(nn.Linear(d_mp, horizon * n_objects) for _ in range(2))

    def forward(
        self,
        queries: torch.Tensor,  # [B,2T,d]
        query_ids: torch.Tensor,
        glob: torch.Tensor,  # [B,H,d]
        frame_ids: torch.Tensor,  # [B,H]
    ) -> tuple[torch.Tensor, torch.Tensor]:
        x = queries
        for layer in self.layers:
            x = layer(x, glob, query_ids, frame_ids)
        half = x.shape[1] // 2
        pooled = torch.stack([x[:, :half].mean(dim=1), x[:, half:].mean(dim=1)], dim=1)  # [B,2,d]
        actions = torch.stack(
            [self.action_heads[i](pooled[:, i]) for i in range(2)], dim=1
        ).view(-1, 2, self.horizon, self.n_actions)
        objects = torch.stack(
            [self.object_heads[i](pooled[:, i]) for i in range(2)], dim=1
        ).view(-1, 2, self.horizon, self.n_objects)
        return actions, objects


class MotionDecoder(nn.Module):
    """Cross-attends queries to all node-step tokens, then emits each object's
    horizon trajectory from the pooled context and that object's mean embedding."""

    def __init__(
        self,
        d_mp: int,
        horizon: int,
        layers: int,
        heads: int,
        ff_mult: int,
        negative_slope: float,
        rope_base: float,
    ):
        super().__init__()
        self.layers = nn.ModuleList(
            CrossAttentionLayer(d_mp, heads, ff_mult, negative_slope, rope_base)
            for _ in range(layers)
        )
        self.horizon = horizon
        self.head = Mlp2(2 * d_mp, d_mp, horizon * 3, negative_slope)

    def forward(
        self,
        queries: torch.Tensor,
        query_ids: torch.Tensor,
        nodes: torch.Tensor,  # [B,N,H,d]
        frame_ids: torch.Tensor,
    ) -> torch.Tensor:
        b, n, h, d = nodes.shape
        memory = nodes.reshape(b, n * h, d)
        memory_ids = frame_ids.unsqueeze(1).expand(b, n, h).reshape(b, n * h)
        x = queries
        for layer in self.layers:
            x = layer(x, memory, query_ids, memory_ids)
        context = x.mean(dim=1)  # [B,d]
        per_node = torch.cat([context.unsqueeze(1).expand(b, n, d), nodes.mean(dim=2)], dim=-1)
        return self.head(per_node).view(b, n, self.horizon, 3)


class TaskGraphDecoder(nn.Module):
    def __init__(
        self,
        n_actions: int,
        n_objects: int,
        d_mp: int,
        horizon: int,
        layers: int = 2,
        heads: int = 4,
        ff_mult: int = 4,
        negative_slope: float = 0.01,
        rope_base: float = 10000.0,
    ):
        super().__init__()
        self.n_actions = n_actions
        self.n_objects = n_objects
        d_pairs = 2 * (n_actions + n_objects)
        self.next_pair = PairClassifier(d_pairs + d_mp, d_mp, n_actions, n_objects, negative_slope)
        self.future_pair = PairClassifier(d_pairs + d_mp, d_mp, n_actions, n_objects, negative_slope)
        self.queries = QueryBuilder(n_actions, n_objects, d_mp, horizon, rope_base)
        self.horizon_decoder = HorizonDecoder(
            d_mp, n_actions, n_objects, horizon, layers, heads, ff_mult, negative_slope, rope_base
        )
        self.motion_decoder = MotionDecoder(
            d_mp, horizon, layers, heads, ff_mult, negative_slope, rope_base
        )

    def _pairs_input(self, pairs: torch.Tensor, g_bar: torch.Tensor) -> torch.Tensor:
        onehots = _pair_onehots(pairs, self.n_actions, self.n_objects, g_bar.dtype)
        return torch.cat([onehots.flatten(start_dim=1), g_bar], dim=-1)

    def forward(
        self,
        batch: GraphBatch,
        emb: GraphEmbeddings,
        teacher_forcing: bool = False,
    ) -> PredictionBundle:
        g_bar = emb.glob.mean(dim=1)  # [B,d]

        next_a, next_o = self.next_pair(self._pairs_input(batch.current_pairs, g_bar))
        if teacher_forcing:
            next_pairs = batch.next_pair
        else:
            next_pairs = torch.stack([next_a.argmax(dim=-1), next_o.argmax(dim=-1)], dim=-1)

        future_a, future_o = self.future_pair(self._pairs_input(next_pairs, g_bar))
        if teacher_forcing:
            future_pairs = batch.future_pair
        else:
            future_pairs = torch.stack([future_a.argmax(dim=-1), future_o.argmax(dim=-1)], dim=-1)

        queries, query_ids = self.queries(
            batch.history_pairs, batch.history_starts, next_pairs, future_pairs, batch.t, g_bar.dtype
        )
        horizon_a, horizon_o = self.horizon_decoder(queries, query_ids, emb.glob, batch.frame_ids)
        motions = self.motion_decoder(queries, query_ids, emb.nodes, batch.frame_ids)
        return PredictionBundle(
            next_action_logits=next_a,
            next_object_logits=next_o,
            future_action_logits=future_a,
            future_object_logits=future_o,
            horizon_action_logits=horizon_a,
            horizon_object_logits=horizon_o,
            motions=motions,
        )

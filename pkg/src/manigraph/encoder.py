"""Scene-graph encoders: the iterative message-passing encoder plus four
reference variants (identifier-only tied-weight MPNN, node-only relational
blocks, a flat token transformer, and no encoder at all) behind one interface.

Every encoder maps a :class:`GraphBatch` to node [B,N,H,d], edge [B,M,H,d],
and global [B,H,d] embedding tensors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
from torch import nn

from .batching import GraphBatch
from .errors import ConfigError
from .nn.attention import TransformerBlock
from .nn.rope import rope_rotate

VARIANTS = ("mpnn", "dreher", "rgcn", "transformer", "none")


@dataclass(frozen=True)
class EncoderConfig:
    variant: str = "mpnn"
    d_mp: int = 64
    iterations: int = 3  # message-passing iterations K
    temporal_heads: int = 2
    negative_slope: float = 0.01
    rope_base: float = 10000.0
    ff_mult: int = 4
    dreher_iterations: int = 10  # tied-weight iterations
    rgcn_blocks: int = 20
    transformer_layers: int = 8
    transformer_heads: int = 16

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown encoder variant {self.variant!r}; choose from {VARIANTS}")
        if self.d_mp <= 0:
            raise ConfigError("d_mp must be positive")
        if self.variant in ("mpnn", "dreher", "rgcn") and self.iterations < 1:
            raise ConfigError("graph encoders need iterations >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        return cls(**data)


class GraphEmbeddings(NamedTuple):
    nodes: torch.Tensor  # [B,N,H,d]
    edges: torch.Tensor  # [B,M,H,d]
    glob: torch.Tensor  # [B,H,d]


class InputEmbedding(nn.Module):
    """Separate linear maps into d_mp, global tiling over H, RoPE by frame id."""

    def __init__(
        self,
        d_v: int,
        d_e: int,
        d_u: int,
        cfg: EncoderConfig,
        zero_coords: bool = False,
        freeze_edge_global: bool = False,
    ):
        super().__init__()
        self.node_proj = nn.Linear(d_v, cfg.d_mp)
        self.edge_proj = nn.Linear(d_e, cfg.d_mp)
        self.global_proj = nn.Linear(d_u, cfg.d_mp)
        self.rope_base = cfg.rope_base
        self.zero_coords = zero_coords
        if freeze_edge_global:
            for proj in (self.edge_proj, self.global_proj):
                nn.init.zeros_(proj.weight)
                nn.init.zeros_(proj.bias)
                proj.weight.requires_grad_(False)
                proj.bias.requires_grad_(False)

    def forward(self, batch: GraphBatch, with_rope: bool = True) -> GraphEmbeddings:
        x_v = batch.x_v
        if self.zero_coords:
            x_v = torch.cat([x_v[..., :-3], torch.zeros_like(x_v[..., -3:])], dim=-1)
        h = self.node_proj(x_v)  # [B,N,H,d]
        f = self.edge_proj(batch.x_e)  # [B,M,H,d]
        g = self.global_proj(batch.u).unsqueeze(1).expand(-1, h.shape[2], -1)  # [B,H,d]
        if with_rope:
            ids = batch.frame_ids
            h = rope_rotate(h, ids.unsqueeze(1), self.rope_base)
            f = rope_rotate(f, ids.unsqueeze(1), self.rope_base)
            g = rope_rotate(g, ids, self.rope_base)
        return GraphEmbeddings(nodes=h, edges=f, glob=g)


class MpnnIteration(nn.Module):
    """One edge -> node -> global update round, each residual.

    Edge update: f += a(W1 [a(W2 f); a(W3 [h_sender; h_receiver]); g]).
    Node update aggregates the mean of its updated incoming edges; the global
    update aggregates node and edge means. All aggregations are arithmetic means.
    """

    def __init__(self, d: int, negative_slope: float):
        super().__init__()
        self.edge_pre = nn.Linear(d, d)
        self.edge_pair = nn.Linear(2 * d, d)
        self.edge_out = nn.Linear(3 * d, d)
        self.node_self = nn.Linear(d, d)
        self.node_agg = nn.Linear(d, d)
        self.node_out = nn.Linear(3 * d, d)
        self.glob_self = nn.Linear(d, d)
        self.glob_out = nn.Linear(3 * d, d)
        self.act = nn.LeakyReLU(negative_slope)

    def forward(
        self,
        emb: GraphEmbeddings,
        senders: torch.Tensor,
        receivers: torch.Tensor,
        residual: bool = True,
    ) -> GraphEmbeddings:
        h, f, g = emb
        n_nodes = h.shape[1]
        a = self.act
        g_e = g.unsqueeze(1).expand(-1, f.shape[1], -1, -1)

        h_s = h.index_select(1, senders)
        h_r = h.index_select(1, receivers)
        edge_in = torch.cat([a(self.edge_pre(f)), a(self.edge_pair(torch.cat([h_s, h_r], dim=-1))), g_e], dim=-1)
        edge_msg = a(self.edge_out(edge_in))
        f_new = f + edge_msg if residual else edge_msg

        incoming = torch.zeros_like(h)
        incoming.index_add_(1, receivers, f_new)
        counts = torch.bincount(receivers, minlength=n_nodes).clamp(min=1)
        incoming = incoming / counts.to(h.dtype).view(1, -1, 1, 1)
        g_n = g.unsqueeze(1).expand(-1, n_nodes, -1, -1)
        node_in = torch.cat([a(self.node_self(h)), a(self.node_agg(incoming)), g_n], dim=-1)
        node_msg = a(self.node_out(node_in))
        h_new = h + node_msg if residual else node_msg

        glob_in = torch.cat([a(self.glob_self(g)), h_new.mean(dim=1), f_new.mean(dim=1)], dim=-1)
        glob_msg = a(self.glob_out(glob_in))
        g_new = g + glob_msg if residual else glob_msg
        return GraphEmbeddings(nodes=h_new, edges=f_new, glob=g_new)


class TemporalAttention(nn.Module):
    """Self-attention over the H steps of each node and each edge sequence."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.node_block = TransformerBlock(
            cfg.d_mp, cfg.temporal_heads, cfg.ff_mult, cfg.negative_slope, cfg.rope_base
        )
        self.edge_block = TransformerBlock(
            cfg.d_mp, cfg.temporal_heads, cfg.ff_mult, cfg.negative_slope, cfg.rope_base
        )

    @staticmethod
    def _per_sequence(block: TransformerBlock, x: torch.Tensor, frame_ids: torch.Tensor) -> torch.Tensor:
        b, n, h, d = x.shape
        flat = x.reshape(b * n, h, d)
        ids = frame_ids.unsqueeze(1).expand(b, n, h).reshape(b * n, h)
        return block(flat, ids).reshape(b, n, h, d)

    def forward(self, emb: GraphEmbeddings, frame_ids: torch.Tensor) -> GraphEmbeddings:
        return GraphEmbeddings(
            nodes=self._per_sequence(self.node_block, emb.nodes, frame_ids),
            edges=self._per_sequence(self.edge_block, emb.edges, frame_ids),
            glob=emb.glob,
        )


class MpnnEncoder(nn.Module):
    """K rounds of message passing, each followed by temporal self-attention."""

    def __init__(self, d_v: int, d_e: int, d_u: int, cfg: EncoderConfig):
        super().__init__()
        self.embed = InputEmbedding(d_v, d_e, d_u, cfg)
        self.iterations = nn.ModuleList(
            MpnnIteration(cfg.d_mp, cfg.negative_slope) for _ in range(cfg.iterations)
        )
        self.temporal = nn.ModuleList(TemporalAttention(cfg) for _ in range(cfg.iterations))

    def forward(self, batch: GraphBatch) -> GraphEmbeddings:
        emb = self.embed(batch)
        for mp, attn in zip(self.iterations, self.temporal):
            emb = mp(emb, batch.senders, batch.receivers)
            emb = attn(emb, batch.frame_ids)
        return emb


class DreherEncoder(nn.Module):
    """Identifier-only control: coordinates zeroed, one weight set tied across
    all iterations, no temporal attention, no residuals."""

    def __init__(self, d_v: int, d_e: int, d_u: int, cfg: EncoderConfig):
        super().__init__()
        self.embed = InputEmbedding(d_v, d_e, d_u, cfg, zero_coords=True)
        self.iteration = MpnnIteration(cfg.d_mp, cfg.negative_slope)
        self.n_iterations = cfg.dreher_iterations

    def forward(self, batch: GraphBatch) -> GraphEmbeddings:
        emb = self.embed(batch)
        for _ in range(self.n_iterations):
            emb = self.iteration(emb, batch.senders, batch.receivers, residual=False)
        return emb


class RgcnBlock(nn.Module):
    def __init__(self, d: int, negative_slope: float):
        super().__init__()
        self.self_proj = nn.Linear(d, d)
        self.neighbor_proj = nn.Linear(d, d)
        self.act = nn.LeakyReLU(negative_slope)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        n = h.shape[1]
        neighbor_mean = (h.sum(dim=1, keepdim=True) - h) / max(n - 1, 1)
        return self.act(self.self_proj(h) + self.neighbor_proj(neighbor_mean))


class RgcnEncoder(nn.Module):
    """Node-only control: deep relational-convolution stack over id+coordinate
    features; edge and global embeddings stay frozen at zero."""

    def __init__(self, d_v: int, d_e: int, d_u: int, cfg: EncoderConfig):
        super().__init__()
        self.embed = InputEmbedding(d_v, d_e, d_u, cfg, freeze_edge_global=True)
        self.blocks = nn.ModuleList(
            RgcnBlock(cfg.d_mp, cfg.negative_slope) for _ in range(cfg.rgcn_blocks)
        )

    def forward(self, batch: GraphBatch) -> GraphEmbeddings:
        emb = self.embed(batch)
        h = emb.nodes
        for block in self.blocks:
            h = block(h)
        return GraphEmbeddings(nodes=h, edges=emb.edges, glob=emb.glob)


class TransformerEncoder(nn.Module):
    """Sequence control: node features flattened to N*H tokens, no graph structure."""

    def __init__(self, d_v: int, d_e: int, d_u: int, cfg: EncoderConfig):
        super().__init__()
        self.embed = InputEmbedding(d_v, d_e, d_u, cfg)
        self.blocks = nn.ModuleList(
            TransformerBlock(
                cfg.d_mp, cfg.transformer_heads, cfg.ff_mult, cfg.negative_slope, cfg.rope_base
            )
            for _ in range(cfg.transformer_layers)
        )

    def forward(self, batch: GraphBatch) -> GraphEmbeddings:
        emb = self.embed(batch)
        b, n, h, d = emb.nodes.shape
        tokens = emb.nodes.reshape(b, n * h, d)
        ids = batch.frame_ids.unsqueeze(1).expand(b, n, h).reshape(b, n * h)
        for block in self.blocks:
            tokens = block(tokens, ids)
        return GraphEmbeddings(nodes=tokens.reshape(b, n, h, d), edges=emb.edges, glob=emb.glob)


class PassthroughEncoder(nn.Module):
    """No encoder: features are linearly embedded and passed straight through."""

    def __init__(self, d_v: int, d_e: int, d_u: int, cfg: EncoderConfig):
        super().__init__()
        self.embed = InputEmbedding(d_v, d_e, d_u, cfg)

    def forward(self, batch: GraphBatch) -> GraphEmbeddings:
        return self.embed(batch)


_ENCODERS = {
    "mpnn": MpnnEncoder,
    "dreher": DreherEncoder,
    "rgcn": RgcnEncoder,
    "transformer": TransformerEncoder,
    "none": PassthroughEncoder,
}


def build_encoder(d_v: int, d_e: int, d_u: int, cfg: EncoderConfig) -> nn.Module:
    try:
        factory = _ENCODERS[cfg.variant]
    except KeyError:
        raise ConfigError(f"unknown encoder variant {cfg.variant!r}") from None
    return factory(d_v, d_e, d_u, cfg)

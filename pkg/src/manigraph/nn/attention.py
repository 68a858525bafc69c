"""Multi-head attention and pre-norm transformer layers with optional RoPE."""

from __future__ import annotations

import math

import torch
from torch import nn

from ..errors import ConfigError
from .rope import rope_rotate


def scaled_dot_product(
    q: torch.Tensor, k: torch.Tensor, v: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Attention over the last two dims: q [.., Tq, dh], k/v [.., Tk, dh]."""
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    weights = torch.softmax(scores, dim=-1)
    return weights @ v, weights


class MultiHeadAttention(nn.Module):
    """Standard multi-head attention; RoPE on q/k when positions are given."""

    def __init__(self, d_model: int, n_heads: int, rope_base: float = 10000.0):
        super().__init__()
        if d_model % n_heads != 0:
            raise ConfigError(f"d_model {d_model} not divisible by {n_heads} heads")
        if (d_model // n_heads) % 2 != 0:
            raise ConfigError(f"head dim {d_model // n_heads} must be even for RoPE")
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.rope_base = rope_base
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.o_proj = nn.Linear(d_model, d_model)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        return x.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)  # [B,h,T,dh]

    def forward(
        self,
        q_tokens: torch.Tensor,
        kv_tokens: torch.Tensor,
        q_positions: torch.Tensor | None = None,
        kv_positions: torch.Tensor | None = None,
    ) -> torch.Tensor:
        q = self._split(self.q_proj(q_tokens))
        k = self._split(self.k_proj(kv_tokens))
        v = self._split(self.v_proj(kv_tokens))
        if q_positions is not None:
            q = rope_rotate(q, q_positions.unsqueeze(1), self.rope_base)
        if kv_positions is not None:
            k = rope_rotate(k, kv_positions.unsqueeze(1), self.rope_base)
        out, _ = scaled_dot_product(q, k, v)
        b, _, t, _ = out.shape
        out = out.transpose(1, 2).reshape(b, t, self.n_heads * self.head_dim)
        return self.o_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, hidden: int, negative_slope: float = 0.01):
        super().__init__()
        self.lin1 = nn.Linear(d_model, hidden)
        self.lin2 = nn.Linear(hidden, d_model)
        self.act = nn.LeakyReLU(negative_slope)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.lin2(self.act(self.lin1(x)))


class TransformerBlock(nn.Module):
    """Pre-norm self-attention followed by a pre-norm feed-forward, both residual."""

    def __init__(
        self,
        d_model: int,
        n_heads: int,
        ff_mult: int = 4,
        negative_slope: float = 0.01,
        rope_base: float = 10000.0,
    ):
        super().__init__()
        self.attn = MultiHeadAttention(d_model, n_heads, rope_base)
        self.ff = FeedForward(d_model, ff_mult * d_model, negative_slope)
        self.norm_attn = nn.LayerNorm(d_model)
        self.norm_ff = nn.LayerNorm(d_model)

    def forward(self, x: torch.Tensor, positions: torch.Tensor | None = None) -> torch.Tensor:
        normed = self.norm_attn(x)
        x = x + self.attn(normed, normed, positions, positions)
        x = x + self.ff(self.norm_ff(x))
        return x


class CrossAttentionLayer(nn.Module):
    """Pre-norm decoder layer: self-attention, cross-attention to memory, feed-forward.

    RoPE covers self-attention queries/keys (token positions) and
    cross-attention keys (memory positions) only.
    """

    def __init__(
        self,
        d_model: int,
        n_heads: int,
        ff_mult: int = 4,
        negative_slope: float = 0.01,
        rope_base: float = 10000.0,
    ):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_model, n_heads, rope_base)
        self.cross_attn = MultiHeadAttention(d_model, n_heads, rope_base)
        self.ff = FeedForward(d_model, ff_mult * d_model, negative_slope)
        self.norm_self = nn.LayerNorm(d_model)
        self.norm_cross = nn.LayerNorm(d_model)
        self.norm_ff = nn.LayerNorm(d_model)

    def forward(
        self,
        x: torch.Tensor,
        memory: torch.Tensor,
        x_positions: torch.Tensor | None = None,
        memory_positions: torch.Tensor | None = None,
    ) -> torch.Tensor:
        normed = self.norm_self(x)
        x = x + self.self_attn(normed, normed, x_positions, x_positions)
        x = x + self.cross_attn(self.norm_cross(x), memory, None, memory_positions)
        x = x + self.ff(self.norm_ff(x))
        return x

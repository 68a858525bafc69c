"""Rotary position embeddings over arbitrary integer frame ids."""

from __future__ import annotations

import torch

from ..errors import ConfigError


def rope_rotate(x: torch.Tensor, positions: torch.Tensor, base: float = 10000.0) -> torch.Tensor:
    """Rotate feature pairs of ``x`` by position-dependent angles.

    ``x`` is [..., T, d] with even d; ``positions`` broadcasts to x's leading
    dims and supplies the frame id of each of the T entries. Pair j rotates by
    angle ``position * base**(-2j/d)``, so norms are preserved and query/key
    dot products depend only on position offsets.
    """
    d = x.shape[-1]
    if d % 2 != 0:
        raise ConfigError(f"RoPE needs an even feature dimension, got {d}")
    half = d // 2
    inv_freq = base ** (-torch.arange(half, dtype=x.dtype, device=x.device) * 2.0 / d)
    angles = positions.to(x.dtype).unsqueeze(-1) * inv_freq  # [..., T, d/2]
    cos = torch.cos(angles)
    sin = torch.sin(angles)
    even = x[..., 0::2]
    odd = x[..., 1::2]
    out = torch.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out

"""Two-layer perceptron used throughout the prediction heads."""

from __future__ import annotations

import torch
from torch import nn


class Mlp2(nn.Module):
    """linear -> LeakyReLU -> linear."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, negative_slope: float = 0.01):
        super().__init__()
        self.lin1 = nn.Linear(d_in, d_hidden)
        self.lin2 = nn.Linear(d_hidden, d_out)
        self.act = nn.LeakyReLU(negative_slope)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.lin2(self.act(self.lin1(x)))

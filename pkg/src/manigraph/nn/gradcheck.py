"""Central finite-difference oracle for analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from ..errors import ConfigError


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    rel_tol: float
    worst_param: str
    worst_coordinate: int
    worst_analytic: float
    worst_numeric: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.rel_tol

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"grad-check {status}: max rel err {self.max_rel_error:.3e} over "
            f"{self.n_checked} coordinates (tol {self.rel_tol:.1e}); worst at "
            f"{self.worst_param}[{self.worst_coordinate}] "
            f"analytic={self.worst_analytic:.6e} numeric={self.worst_numeric:.6e}"
        )


def grad_check(
    loss_fn: Callable[[], torch.Tensor],
    named_params: list[tuple[str, torch.Tensor]],
    n_samples: int = 200,
    step: float = 1e-5,
    rel_tol: float = 1e-3,
    seed: int = 0,
) -> GradCheckReport:
    """Compare autograd gradients against central finite differences.

    ``loss_fn`` must be a deterministic closure over the given parameters,
    evaluated in double precision. At least ``n_samples`` coordinates are
    sampled uniformly across all trainable parameters.
    """
    params = [(n, p) for n, p in named_params if p.requires_grad]
    if not params:
        raise ConfigError("no trainable parameters to check")
    for name, p in params:
        if p.dtype != torch.float64:
            raise ConfigError(f"grad_check requires float64 parameters; {name} is {p.dtype}")

    loss = loss_fn()
    grads = torch.autograd.grad(loss, [p for _, p in params], allow_unused=True)
    analytic = [
        torch.zeros_like(p) if g is None else g.detach().clone()
        for (_, p), g in zip(params, grads)
    ]

    sizes = np.array([p.numel() for _, p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    n = min(n_samples, total)
    coords = rng.choice(total, size=n, replace=False) if total > n else np.arange(total)

    max_rel = 0.0
    worst = (params[0][0], 0, 0.0, 0.0)
    with torch.no_grad():
        for flat in coords:
            pi = int(np.searchsorted(offsets, flat, side="right") - 1)
            local = int(flat - offsets[pi])
            name, p = params[pi]
            view = p.view(-1)
            original = view[local].item()
            view[local] = original + step
            f_plus = float(loss_fn())
            view[local] = original - step
            f_minus = float(loss_fn())
            view[local] = original
            numeric = (f_plus - f_minus) / (2 * step)
            a = float(analytic[pi].view(-1)[local])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            if rel > max_rel:
                max_rel = rel
                worst = (name, local, a, numeric)
    return GradCheckReport(
        max_rel_error=max_rel,
        n_checked=len(coords),
        rel_tol=rel_tol,
        worst_param=worst[0],
        worst_coordinate=worst[1],
        worst_analytic=worst[2],
        worst_numeric=worst[3],
    )

"""AdamW with decoupled weight decay and name-keyed state serialization."""

from __future__ import annotations

import math

import torch

from ..errors import ConfigError


class AdamW(torch.optim.Optimizer):
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-2):
        if lr < 0:
            raise ConfigError(f"invalid learning rate {lr}")
        if not 0.0 <= betas[0] < 1.0 or not 0.0 <= betas[1] < 1.0:
            raise ConfigError(f"invalid betas {betas}")
        defaults = dict(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay)
        super().__init__(params, defaults)

    @torch.no_grad()
    def step(self, closure=None):
        loss = None if closure is None else closure()
        for group in self.param_groups:
            beta1, beta2 = group["betas"]
            lr, eps, wd = group["lr"], group["eps"], group["weight_decay"]
            for p in group["params"]:
                if not p.requires_grad or p.grad is None:
                    continue
                state = self.state[p]
                if not state:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(p)
                    state["exp_avg_sq"] = torch.zeros_like(p)
                state["step"] += 1
                t = state["step"]
                m, v = state["exp_avg"], state["exp_avg_sq"]
                m.mul_(beta1).add_(p.grad, alpha=1 - beta1)
                v.mul_(beta2).addcmul_(p.grad, p.grad, value=1 - beta2)
                if wd != 0:
                    p.mul_(1 - lr * wd)
                step_size = lr * math.sqrt(1 - beta2**t) / (1 - beta1**t)
                p.addcdiv_(m, v.sqrt().add_(eps), value=-step_size)
        return loss

    # -- checkpoint support -------------------------------------------------

    def export_state(self, named_params: list[tuple[str, torch.Tensor]]) -> dict:
        """Name-keyed moment tensors plus hyperparameters."""
        out = {"hyper": dict(self.defaults), "params": {}}
        for name, p in named_params:
            state = self.state.get(p)
            if state:
                out["params"][name] = {
                    "step": state["step"],
                    "exp_avg": state["exp_avg"].detach().cpu().numpy(),
                    "exp_avg_sq": state["exp_avg_sq"].detach().cpu().numpy(),
                }
        return out

    def import_state(self, named_params: list[tuple[str, torch.Tensor]], exported: dict) -> None:
        by_name = dict(named_params)
        for name, entry in exported.get("params", {}).items():
            if name not in by_name:
                continue
            p = by_name[name]
            self.state[p] = {
                "step": int(entry["step"]),
                "exp_avg": torch.as_tensor(entry["exp_avg"], dtype=p.dtype),
                "exp_avg_sq": torch.as_tensor(entry["exp_avg_sq"], dtype=p.dtype),
            }

"""Classification and regression losses with pad masking."""

from __future__ import annotations

import torch

from ..errors import InputError, NumericError


def weighted_cross_entropy(
    logits: torch.Tensor,
    targets: torch.Tensor,
    class_weights: torch.Tensor,
) -> torch.Tensor:
    """-w[target] * log softmax(logits)[target], averaged over unmasked elements.

    Elements whose target class has weight 0 (pad or absent classes) are
    excluded from both numerator and denominator.
    """
    if logits.shape[:-1] != targets.shape:
        raise InputError(f"logits {tuple(logits.shape)} incompatible with targets {tuple(targets.shape)}")
    if not torch.isfinite(logits).all():
        raise NumericError("non-finite logits in cross-entropy")
    log_probs = torch.log_softmax(logits, dim=-1)
    flat_logp = log_probs.reshape(-1, logits.shape[-1])
    flat_t = targets.reshape(-1)
    picked = flat_logp[torch.arange(flat_t.numel(), device=logits.device), flat_t]
    weights = class_weights.to(logits.dtype)[flat_t]
    mask = weights > 0
    count = int(mask.sum())
    if count == 0:
        return logits.sum() * 0.0
    return -(weights * picked * mask).sum() / count


def coordinate_mse(
    pred: torch.Tensor,
    target: torch.Tensor,
    mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Mean squared per-axis error over unmasked entries (mask is per point)."""
    if pred.shape != target.shape:
        raise InputError(f"pred {tuple(pred.shape)} != target {tuple(target.shape)}")
    sq = (pred - target) ** 2
    if mask is None:
        return sq.mean()
    mask = mask.to(pred.dtype).unsqueeze(-1)
    count = mask.sum() * pred.shape[-1]
    if count == 0:
        return pred.sum() * 0.0
    return (sq * mask).sum() / count

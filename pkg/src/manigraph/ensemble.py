"""Action chunking with temporal ensembles.

Every step emits a fresh horizon of predictions; overlapping predictions for
one execution step are fused with exponential weights that favor the oldest
prediction (weight exp(-decay * i) with i = 0 for the oldest).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from .batching import batch_from_slices
from .decoder import PredictionBundle
from .demonstrations import Demonstration
from .errors import ConfigError
from .model import TaskGraphModel
from .slices import SliceBuilder, SliceConfig, Standardizer, standardize_demo
from .vocab import Vocab

log = logging.getLogger(__name__)


def softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class FusedPrediction:
    step: int
    actions: np.ndarray  # [2] int, (right, left)
    objects: np.ndarray  # [2] int
    action_probs: np.ndarray  # [2 x |A|]
    object_probs: np.ndarray  # [2 x |O|]
    coords: np.ndarray  # [N x 3]
    n_sources: int


@dataclass
class _Entry:
    origin: int
    action_probs: np.ndarray
    object_probs: np.ndarray
    coords: np.ndarray


class EnsembleBuffer:
    """Ring of overlapping horizon predictions keyed by execution step."""

    def __init__(self, horizon: int, decay: float = 0.1):
        if horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if decay < 0:
            raise ConfigError("decay must be >= 0")
        self.horizon = horizon
        self.decay = decay
        self._store: dict[int, list[_Entry]] = {}

    def update(
        self,
        origin: int,
        action_probs: np.ndarray,  # [2 x P x |A|]
        object_probs: np.ndarray,  # [2 x P x |O|]
        coords: np.ndarray,  # [N x P x 3]
    ) -> None:
        for p in range(self.horizon):
            self._store.setdefault(origin + 1 + p, []).append(
                _Entry(
                    origin=origin,
                    action_probs=action_probs[:, p].astype(np.float64),
                    object_probs=object_probs[:, p].astype(np.float64),
                    coords=coords[:, p].astype(np.float64),
                )
            )

    def update_bundle(self, origin: int, bundle: PredictionBundle) -> None:
        self.update(
            origin,
            softmax_np(bundle.horizon_action_logits[0].detach().numpy().astype(np.float64)),
            softmax_np(bundle.horizon_object_logits[0].detach().numpy().astype(np.float64)),
            bundle.motions[0].detach().numpy().astype(np.float64),
        )

    def query(self, step: int) -> FusedPrediction | None:
        """Fused prediction for one execution step; None = no-prediction signal."""
        entries = self._store.get(step)
        if not entries:
            return None
        entries = sorted(entries, key=lambda e: e.origin)
        weights = np.exp(-self.decay * np.arange(len(entries), dtype=np.float64))
        weights = weights / weights.sum()
        a_probs = sum(w * e.action_probs for w, e in zip(weights, entries))
        o_probs = sum(w * e.object_probs for w, e in zip(weights, entries))
        coords = sum(w * e.coords for w, e in zip(weights, entries))
        return FusedPrediction(
            step=step,
            actions=np.argmax(a_probs, axis=-1),
            objects=np.argmax(o_probs, axis=-1),
            action_probs=a_probs,
            object_probs=o_probs,
            coords=coords,
            n_sources=len(entries),
        )

    def prune(self, before_step: int) -> None:
        for key in [k for k in self._store if k < before_step]:
            del self._store[key]


@dataclass
class RolloutStep:
    step: int
    fused: FusedPrediction | None


def rollout(
    model: TaskGraphModel,
    demo: Demonstration,
    vocab: Vocab,
    standardizer: Standardizer,
    slice_cfg: SliceConfig,
    decay: float = 0.1,
) -> list[RolloutStep]:
    """Slide the model over a full demonstration, fusing overlapping horizons.

    Emits one record per frame after a warm-up of H*S frames; coordinates in
    the fused output are destandardized back to meters.
    """
    first, last = demo.first_frame_id, demo.last_frame_id
    start = first + slice_cfg.warmup
    if start > last:
        log.warning(
            "stream of %d frames shorter than warm-up %d; empty rollout",
            last - first + 1,
            slice_cfg.warmup,
        )
        return []
    builder = SliceBuilder(standardize_demo(demo, standardizer), slice_cfg)
    buffer = EnsembleBuffer(slice_cfg.horizon, decay)
    out: list[RolloutStep] = []
    model.eval()
    with torch.no_grad():
        for t in range(start, last + 1):
            batch = batch_from_slices([builder.build(t, with_targets=False)])
            bundle = model(batch, teacher_forcing=False)
            buffer.update_bundle(t, bundle)
            fused = buffer.query(t)
            if fused is not None:
                fused.coords = standardizer.destandardize(fused.coords)
            out.append(RolloutStep(step=t, fused=fused))
            buffer.prune(t + 1)
    model.train()
    return out

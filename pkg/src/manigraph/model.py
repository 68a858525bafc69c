"""Full model (encoder + decoder), configuration, and checkpoint I/O."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .batching import GraphBatch
from .decoder import PredictionBundle, TaskGraphDecoder
from .encoder import EncoderConfig, build_encoder
from .errors import ConfigError
from .nn.optim import AdamW
from .nn.serialize import load_arrays, save_arrays
from .slices import SliceConfig, Standardizer
from .vocab import Vocab


@dataclass(frozen=True)
class ModelConfig:
    n_actions: int
    n_objects: int
    n_tasks: int
    n_relations: int
    horizon: int
    n_past: int
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder_layers: int = 2
    decoder_heads: int = 4

    @property
    def d_node(self) -> int:
        return self.n_objects + 3

    @classmethod
    def for_vocab(cls, vocab: Vocab, slices: SliceConfig, encoder: EncoderConfig = EncoderConfig(), **kw) -> "ModelConfig":
        return cls(
            n_actions=vocab.n_actions,
            n_objects=vocab.n_objects,
            n_tasks=vocab.n_tasks,
            n_relations=vocab.n_relations,
            horizon=slices.horizon,
            n_past=slices.n_past,
            encoder=encoder,
            **kw,
        )

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "encoder"}
        out["encoder"] = self.encoder.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        data["encoder"] = EncoderConfig.from_dict(data["encoder"])
        return cls(**data)


class TaskGraphModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = build_encoder(cfg.d_node, cfg.n_relations, cfg.n_tasks, cfg.encoder)
        self.decoder = TaskGraphDecoder(
            n_actions=cfg.n_actions,
            n_objects=cfg.n_objects,
            d_mp=cfg.encoder.d_mp,
            horizon=cfg.horizon,
            layers=cfg.decoder_layers,
            heads=cfg.decoder_heads,
            ff_mult=cfg.encoder.ff_mult,
            negative_slope=cfg.encoder.negative_slope,
            rope_base=cfg.encoder.rope_base,
        )

    def forward(self, batch: GraphBatch, teacher_forcing: bool = False) -> PredictionBundle:
        return self.decoder(batch, self.encoder(batch), teacher_forcing=teacher_forcing)

    def freeze_encoder(self) -> None:
        for p in self.encoder.parameters():
            p.requires_grad_(False)

    def trainable_parameters(self) -> list[tuple[str, torch.Tensor]]:
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]


def build_model(cfg: ModelConfig, seed: int | None = None) -> TaskGraphModel:
    """Seeded construction so identical configs yield identical initial weights."""
    if seed is not None:
        torch.manual_seed(seed)
    return TaskGraphModel(cfg)


# ---------------------------------------------------------------------------
# Checkpoints


@dataclass
class Checkpoint:
    model: TaskGraphModel
    config: ModelConfig
    vocab: Vocab
    standardizer: Standardizer
    slice_config: SliceConfig
    optimizer_state: dict | None
    extra: dict


def save_checkpoint(
    path,
    model: TaskGraphModel,
    vocab: Vocab,
    standardizer: Standardizer,
    slice_config: SliceConfig,
    optimizer: AdamW | None = None,
    extra: dict | None = None,
) -> None:
    arrays: dict[str, np.ndarray] = {}
    trainable: dict[str, bool] = {}
    for name, p in model.named_parameters():
        arrays[f"param/{name}"] = p.detach().cpu().numpy()
        trainable[name] = bool(p.requires_grad)
    meta = {
        "model_config": model.cfg.to_dict(),
        "vocab": vocab.to_dict(),
        "standardizer": standardizer.to_dict(),
        "slice_config": slice_config.to_dict(),
        "trainable": trainable,
        "extra": extra or {},
    }
    if optimizer is not None:
        state = optimizer.export_state(list(model.named_parameters()))
        meta["optimizer"] = {
            "hyper": state["hyper"],
            "steps": {n: entry["step"] for n, entry in state["params"].items()},
        }
        for name, entry in state["params"].items():
            arrays[f"adam/m/{name}"] = entry["exp_avg"].astype(np.float32)
            arrays[f"adam/v/{name}"] = entry["exp_avg_sq"].astype(np.float32)
    save_arrays(path, meta, arrays)


def load_checkpoint(path) -> Checkpoint:
    meta, arrays = load_arrays(path)
    config = ModelConfig.from_dict(meta["model_config"])
    model = TaskGraphModel(config)
    params = dict(model.named_parameters())
    with torch.no_grad():
        for name, p in params.items():
            key = f"param/{name}"
            if key not in arrays:
                raise ConfigError(f"checkpoint missing parameter {name}")
            p.copy_(torch.from_numpy(arrays[key]))
    for name, flag in meta.get("trainable", {}).items():
        if name in params:
            params[name].requires_grad_(bool(flag))
    optimizer_state = None
    if "optimizer" in meta:
        optimizer_state = {"hyper": meta["optimizer"]["hyper"], "params": {}}
        for name, step in meta["optimizer"]["steps"].items():
            optimizer_state["params"][name] = {
                "step": step,
                "exp_avg": arrays[f"adam/m/{name}"],
                "exp_avg_sq": arrays[f"adam/v/{name}"],
            }
    return Checkpoint(
        model=model,
        config=config,
        vocab=Vocab.from_dict(meta["vocab"]),
        standardizer=Standardizer.from_dict(meta["standardizer"]),
        slice_config=SliceConfig.from_dict(meta["slice_config"]),
        optimizer_state=optimizer_state,
        extra=meta.get("extra", {}),
    )

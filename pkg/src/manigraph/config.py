"""Key-value run configuration files and reproducibility manifests.

Config files are plain text, one ``key = value`` per line (``#`` comments);
values are parsed as JSON where possible, otherwise kept as strings.
Command-line overrides always win over file values.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .datasets import DatasetConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .slices import SliceConfig
from .training import TrainConfig

DATASET_KEYS = {
    "history",
    "sample_rate",
    "horizon",
    "n_past",
    "smoothing_window",
    "mirror",
    "resample_copies",
    "resample_range",
    "stride",
    "data_seed",
}
ENCODER_KEYS = {
    "encoder",
    "d_mp",
    "iterations",
    "temporal_heads",
    "negative_slope",
    "rope_base",
    "ff_mult",
    "dreher_iterations",
    "rgcn_blocks",
    "transformer_layers",
    "transformer_heads",
}
TRAIN_KEYS = {
    "epochs",
    "batch_size",
    "beta_mse",
    "lr",
    "betas",
    "eps",
    "weight_decay",
    "seeds",
    "eval_every",
    "eval_epoch",
    "teacher_forcing",
    "freeze_encoder",
}
OTHER_KEYS = {"decoder_layers", "decoder_heads", "decay"}
KNOWN_KEYS = DATASET_KEYS | ENCODER_KEYS | TRAIN_KEYS | OTHER_KEYS


def parse_config_file(path: str | Path) -> dict:
    out: dict = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def resolve_configs(raw: dict) -> tuple[DatasetConfig, EncoderConfig, TrainConfig, dict]:
    """Split a flat key space into the typed configs plus leftovers (decoder/decay)."""
    unknown = set(raw) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    slices = SliceConfig(
        history=int(raw.get("history", 10)),
        sample_rate=int(raw.get("sample_rate", 10)),
        horizon=int(raw.get("horizon", 10)),
        n_past=int(raw.get("n_past", 20)),
    )
    resample_range = raw.get("resample_range", [0.8, 1.2])
    if isinstance(resample_range, str):
        resample_range = [float(v) for v in resample_range.split(",")]
    ds = DatasetConfig(
        slices=slices,
        smoothing_window=int(raw.get("smoothing_window", 5)),
        mirror=bool(raw.get("mirror", True)),
        resample_range=tuple(float(v) for v in resample_range),
        resample_copies=int(raw.get("resample_copies", 1)),
        stride=int(raw.get("stride", 1)),
        seed=int(raw.get("data_seed", 0)),
    )
    enc = EncoderConfig(
        variant=str(raw.get("encoder", "mpnn")),
        d_mp=int(raw.get("d_mp", 64)),
        iterations=int(raw.get("iterations", 3)),
        temporal_heads=int(raw.get("temporal_heads", 2)),
        negative_slope=float(raw.get("negative_slope", 0.01)),
        rope_base=float(raw.get("rope_base", 10000.0)),
        ff_mult=int(raw.get("ff_mult", 4)),
        dreher_iterations=int(raw.get("dreher_iterations", 10)),
        rgcn_blocks=int(raw.get("rgcn_blocks", 20)),
        transformer_layers=int(raw.get("transformer_layers", 8)),
        transformer_heads=int(raw.get("transformer_heads", 16)),
    )
    seeds = raw.get("seeds", [0, 1, 2, 3])
    if isinstance(seeds, str):
        seeds = [int(v) for v in seeds.split(",")]
    elif isinstance(seeds, int):
        seeds = [seeds]
    train = TrainConfig(
        epochs=int(raw.get("epochs", 100)),
        batch_size=int(raw.get("batch_size", 128)),
        beta_mse=float(raw.get("beta_mse", 1000.0)),
        lr=float(raw.get("lr", 1e-3)),
        betas=tuple(raw.get("betas", (0.9, 0.999))),
        eps=float(raw.get("eps", 1e-8)),
        weight_decay=float(raw.get("weight_decay", 1e-2)),
        seeds=tuple(int(s) for s in seeds),
        eval_every=int(raw.get("eval_every", 10)),
        eval_epoch=raw.get("eval_epoch"),
        teacher_forcing=bool(raw.get("teacher_forcing", True)),
        freeze_encoder=bool(raw.get("freeze_encoder", False)),
    )
    extras = {
        "decoder_layers": int(raw.get("decoder_layers", 2)),
        "decoder_heads": int(raw.get("decoder_heads", 4)),
        "decay": float(raw.get("decay", 0.1)),
    }
    return ds, enc, train, extras


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Snapshot written before any computation; enough to reproduce the run."""

    command: str
    config: dict
    seeds: list[int]
    inputs: dict[str, str] = field(default_factory=dict)  # path -> sha256
    checkpoints: list[str] = field(default_factory=list)
    version: str = __version__
    created: str = ""

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "checkpoints": self.checkpoints,
            "version": self.version,
            "created": self.created,
        }


def build_manifest(
    command: str,
    config: dict,
    seeds: list[int],
    input_paths: list[str | Path] = (),
    checkpoints: list[str] = (),
) -> RunManifest:
    inputs = {str(p): sha256_file(p) for p in input_paths}
    return RunManifest(
        command=command,
        config=config,
        seeds=list(seeds),
        inputs=inputs,
        checkpoints=list(checkpoints),
        created=datetime.now(timezone.utc).isoformat(),
    )


def write_manifest(manifest: RunManifest, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.to_dict(), indent=2), encoding="utf-8")

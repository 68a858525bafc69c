"""Dataset preparation: directory I/O, LOSO splitting, augmentation, batching."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import augment_mirror, augment_resample, smooth
from .demonstrations import (
    Demonstration,
    DemonstrationSet,
    read_demonstration,
    write_demonstration,
)
from .errors import ConfigError, InputError
from .relations import RelationThresholds
from .slices import (
    GraphSlice,
    SliceConfig,
    Standardizer,
    fit_standardizer,
    slice_demonstration,
    standardize_demo,
)
from .vocab import Vocab

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class DatasetConfig:
    slices: SliceConfig = field(default_factory=SliceConfig)
    smoothing_window: int = 5
    mirror: bool = True
    resample_range: tuple[float, float] = (0.8, 1.2)
    resample_copies: int = 1
    stride: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.smoothing_window < 1:
            raise ConfigError("smoothing window must be >= 1")
        lo, hi = self.resample_range
        if not (0.5 <= lo <= hi <= 2.0):
            raise ConfigError("resample range must lie within [0.5, 2.0]")
        if self.stride < 1 or self.resample_copies < 0:
            raise ConfigError("stride must be >= 1 and resample_copies >= 0")

    def to_dict(self) -> dict:
        return {
            "slices": self.slices.to_dict(),
            "smoothing_window": self.smoothing_window,
            "mirror": self.mirror,
            "resample_range": list(self.resample_range),
            "resample_copies": self.resample_copies,
            "stride": self.stride,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetConfig":
        data = dict(data)
        data["slices"] = SliceConfig.from_dict(data.get("slices", {}))
        if "resample_range" in data:
            data["resample_range"] = tuple(data["resample_range"])
        return cls(**data)


# ---------------------------------------------------------------------------
# Directory layout: manifest.json + one `<task>_<subject>_<take>.jsonl` per take


def save_dataset(dataset: DemonstrationSet, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema": 1,
        "vocab": dataset.vocab.to_dict(),
        "thresholds": dataset.thresholds.to_dict(),
        "axes": {"x": "right", "y": "away", "z": "up"},
    }
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    counters: dict[tuple[str, str], int] = {}
    paths = []
    for demo in dataset.demos:
        key = (demo.task_id, demo.subject_id)
        take = counters.get(key, 0)
        counters[key] = take + 1
        path = out_dir / f"{demo.task_id}_{demo.subject_id}_{take}.jsonl"
        write_demonstration(demo, path)
        paths.append(path)
    return paths


def load_dataset(data_dir: str | Path) -> DemonstrationSet:
    data_dir = Path(data_dir)
    manifest_path = data_dir / MANIFEST_NAME
    if not manifest_path.exists():
        raise InputError(f"missing {MANIFEST_NAME} in {data_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    vocab = Vocab.from_dict(manifest["vocab"])
    thresholds = RelationThresholds.from_dict(manifest.get("thresholds", {}))
    demos = [
        read_demonstration(path, vocab, thresholds)
        for path in sorted(data_dir.glob("*.jsonl"))
    ]
    if not demos:
        raise InputError(f"no demonstration files in {data_dir}")
    return DemonstrationSet(demos=demos, vocab=vocab, thresholds=thresholds)


# ---------------------------------------------------------------------------
# Leave-one-subject-out folds


@dataclass
class Fold:
    held_out: str
    train: list[Demonstration]
    test: list[Demonstration]


@dataclass
class PreparedFold:
    held_out: str
    train_slices: list[GraphSlice]
    test_slices: list[GraphSlice]
    standardizer: Standardizer


def split_loso(demos: list[Demonstration]) -> list[Fold]:
    """One fold per subject: that subject's takes test, all others train."""
    subjects: list[str] = []
    for d in demos:
        if d.subject_id not in subjects:
            subjects.append(d.subject_id)
    if len(subjects) < 2:
        raise ConfigError("leave-one-subject-out needs at least 2 subjects")
    return [
        Fold(
            held_out=s,
            train=[d for d in demos if d.subject_id != s],
            test=[d for d in demos if d.subject_id == s],
        )
        for s in subjects
    ]


def prepare_fold(
    fold: Fold,
    cfg: DatasetConfig,
    thresholds: RelationThresholds = RelationThresholds(),
    fold_index: int = 0,
) -> PreparedFold:
    """Smooth, augment (train only), standardize on train stats, and slice."""
    window = cfg.smoothing_window if cfg.smoothing_window % 2 == 1 else cfg.smoothing_window + 1
    train = [smooth(d, window, thresholds) for d in fold.train]
    test = [smooth(d, window, thresholds) for d in fold.test]

    augmented = list(train)
    if cfg.mirror:
        augmented += [augment_mirror(d) for d in train]
    rng = np.random.default_rng([cfg.seed, fold_index])
    min_length = cfg.slices.warmup + cfg.slices.horizon + 1
    for _ in range(cfg.resample_copies):
        for d in train:
            rate = float(rng.uniform(*cfg.resample_range))
            resampled = augment_resample(d, rate, min_length=min_length, thresholds=thresholds)
            if resampled is not None:
                augmented.append(resampled)

    stats = fit_standardizer(augmented)
    train_std = [standardize_demo(d, stats) for d in augmented]
    test_std = [standardize_demo(d, stats) for d in test]

    train_slices = [s for d in train_std for s in slice_demonstration(d, cfg.slices, cfg.stride)]
    test_slices = [s for d in test_std for s in slice_demonstration(d, cfg.slices, cfg.stride)]
    if not train_slices:
        raise ConfigError(f"fold {fold.held_out}: no training slices (demos too short?)")
    return PreparedFold(
        held_out=fold.held_out,
        train_slices=train_slices,
        test_slices=test_slices,
        standardizer=stats,
    )


def batches(
    slices: list[GraphSlice],
    batch_size: int,
    seed: int,
    epoch: int = 0,
) -> list[list[GraphSlice]]:
    """Deterministic per-(seed, epoch) shuffle chunked into mini-batches."""
    if not slices:
        raise ConfigError("cannot batch an empty slice list")
    if batch_size < 1:
        raise ConfigError("batch size must be >= 1")
    order = np.random.default_rng([seed, epoch]).permutation(len(slices))
    return [
        [slices[int(i)] for i in order[start : start + batch_size]]
        for start in range(0, len(slices), batch_size)
    ]

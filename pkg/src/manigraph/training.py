"""Joint loss, training loops, metrics, cross-validation, and finetuning."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .batching import GraphBatch, batch_from_slices, group_by_nodes
from .datasets import DatasetConfig, Fold, batches, prepare_fold, split_loso
from .decoder import PredictionBundle
from .demonstrations import DemonstrationSet
from .errors import ConfigError, ManigraphError
from .model import ModelConfig, TaskGraphModel, build_model, save_checkpoint
from .nn.losses import coordinate_mse, weighted_cross_entropy
from .nn.optim import AdamW
from .slices import GraphSlice, Standardizer
from .vocab import Vocab

log = logging.getLogger(__name__)

OBJECTIVES = ("a_next", "a_future", "a_horizon", "o_next", "o_future", "o_horizon")
HANDS = ("right", "left")


class TrainingDiverged(ManigraphError):
    """Loss went non-finite; the fold is aborted and reported."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    beta_mse: float = 1000.0
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-2
    seeds: tuple[int, ...] = (0, 1, 2, 3)
    eval_every: int = 10
    eval_epoch: int | None = None  # checkpoint epoch; defaults to the last
    teacher_forcing: bool = True
    freeze_encoder: bool = False

    def __post_init__(self) -> None:
        if self.beta_mse <= 0:
            raise ConfigError("beta_mse must be positive")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["betas"] = list(self.betas)
        out["seeds"] = list(self.seeds)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "betas" in data:
            data["betas"] = tuple(data["betas"])
        if "seeds" in data:
            data["seeds"] = tuple(data["seeds"])
        return cls(**data)


# ---------------------------------------------------------------------------
# Class weighting and the joint loss


def class_weights(slices: list[GraphSlice], vocab: Vocab) -> tuple[torch.Tensor, torch.Tensor]:
    """Inverse-frequency weights over all supervision targets of a training split.

    w_c = total / (n_present * count_c) for present classes; absent classes and
    the pad label get weight 0, which also masks them in the loss.
    """
    if not slices:
        raise ConfigError("cannot compute class weights on an empty split")
    action_counts = np.zeros(vocab.n_actions, dtype=np.int64)
    object_counts = np.zeros(vocab.n_objects, dtype=np.int64)
    for s in slices:
        np.add.at(action_counts, s.next_pair[:, 0], 1)
        np.add.at(action_counts, s.future_pair[:, 0], 1)
        np.add.at(action_counts, s.horizon_actions.reshape(-1), 1)
        np.add.at(object_counts, s.next_pair[:, 1], 1)
        np.add.at(object_counts, s.future_pair[:, 1], 1)
        np.add.at(object_counts, s.horizon_objects.reshape(-1), 1)

    def weights(counts: np.ndarray, pad_index: int) -> torch.Tensor:
        counts = counts.copy()
        counts[pad_index] = 0
        present = counts > 0
        w = np.zeros(len(counts), dtype=np.float64)
        if present.any():
            total = counts[present].sum()
            w[present] = total / (present.sum() * counts[present])
        return torch.from_numpy(w)

    return weights(action_counts, vocab.pad_action), weights(object_counts, vocab.pad_object)


def joint_loss(
    bundle: PredictionBundle,
    batch: GraphBatch,
    action_weights: torch.Tensor,
    object_weights: torch.Tensor,
    beta_mse: float,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Six weighted-CE terms plus beta-scaled motion MSE; returns the total and
    a per-term breakdown."""
    terms = {
        "a_next": weighted_cross_entropy(bundle.next_action_logits, batch.next_pair[..., 0], action_weights),
        "a_future": weighted_cross_entropy(bundle.future_action_logits, batch.future_pair[..., 0], action_weights),
        "a_horizon": weighted_cross_entropy(bundle.horizon_action_logits, batch.horizon_actions, action_weights),
        "o_next": weighted_cross_entropy(bundle.next_object_logits, batch.next_pair[..., 1], object_weights),
        "o_future": weighted_cross_entropy(bundle.future_object_logits, batch.future_pair[..., 1], object_weights),
        "o_horizon": weighted_cross_entropy(bundle.horizon_object_logits, batch.horizon_objects, object_weights),
        "mse": coordinate_mse(bundle.motions, batch.motion_targets),
    }
    total = sum(terms[k] for k in OBJECTIVES) + beta_mse * terms["mse"]
    breakdown = {k: float(v.detach()) for k, v in terms.items()}
    breakdown["total"] = float(total.detach())
    return total, breakdown


def _forward_loss(
    model: TaskGraphModel,
    slice_batch: list[GraphSlice],
    action_weights: torch.Tensor,
    object_weights: torch.Tensor,
    cfg: TrainConfig,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Forward a possibly mixed-roster batch (grouped by node count)."""
    groups = list(group_by_nodes(slice_batch).values())
    total = None
    breakdown: dict[str, float] = {}
    for group in groups:
        batch = batch_from_slices(group)
        bundle = model(batch, teacher_forcing=cfg.teacher_forcing)
        loss, terms = joint_loss(bundle, batch, action_weights, object_weights, cfg.beta_mse)
        share = len(group) / len(slice_batch)
        total = loss * share if total is None else total + loss * share
        for k, v in terms.items():
            breakdown[k] = breakdown.get(k, 0.0) + v * share
    return total, breakdown


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class MetricsReport:
    """Accuracies per objective (per hand and hand-averaged) plus motion RMSE
    in meters on destandardized coordinates."""

    accuracies: dict[str, dict[str, float]]
    rmse_m: float
    n_slices: int

    def to_dict(self) -> dict:
        return {"accuracies": self.accuracies, "rmse_m": self.rmse_m, "n_slices": self.n_slices}

    def to_text(self) -> str:
        lines = [f"{'objective':<12}{'right':>10}{'left':>10}{'mean':>10}"]
        for obj in OBJECTIVES:
            acc = self.accuracies[obj]
            lines.append(f"{obj:<12}{acc['right']:>10.4f}{acc['left']:>10.4f}{acc['mean']:>10.4f}")
        lines.append(f"{'rmse_m':<12}{'':>10}{'':>10}{self.rmse_m:>10.4f}")
        return "\n".join(lines)


def _accuracy(logits: np.ndarray, targets: np.ndarray, pad: int) -> float:
    """Argmax accuracy (ties resolve to the lowest index); pad targets excluded."""
    pred = np.argmax(logits, axis=-1).reshape(-1)
    t = targets.reshape(-1)
    keep = t != pad
    if not keep.any():
        return float("nan")
    return float((pred[keep] == t[keep]).mean())


def evaluate(
    model: TaskGraphModel,
    slices: list[GraphSlice],
    vocab: Vocab,
    standardizer: Standardizer,
    batch_size: int = 256,
) -> MetricsReport:
    """Inference-mode metrics (no teacher forcing) over the given slices."""
    if not slices:
        raise ConfigError("cannot evaluate on an empty slice list")
    if model.cfg.n_actions != vocab.n_actions or model.cfg.n_objects != vocab.n_objects:
        raise ConfigError("checkpoint vocabulary does not match the dataset vocabulary")
    fields = {
        "a_next": ("next_action_logits", "next_pair", 0, vocab.pad_action),
        "a_future": ("future_action_logits", "future_pair", 0, vocab.pad_action),
        "a_horizon": ("horizon_action_logits", "horizon_actions", None, vocab.pad_action),
        "o_next": ("next_object_logits", "next_pair", 1, vocab.pad_object),
        "o_future": ("future_object_logits", "future_pair", 1, vocab.pad_object),
        "o_horizon": ("horizon_object_logits", "horizon_objects", None, vocab.pad_object),
    }
    collected: dict[str, dict[str, list[np.ndarray]]] = {
        k: {"logits": [], "targets": []} for k in fields
    }
    sq_errors: list[np.ndarray] = []
    std = standardizer.std

    model.eval()
    with torch.no_grad():
        for group in group_by_nodes(slices).values():
            for start in range(0, len(group), batch_size):
                batch = batch_from_slices(group[start : start + batch_size])
                bundle = model(batch, teacher_forcing=False)
                for key, (logit_attr, target_attr, hand_col, _) in fields.items():
                    logits = getattr(bundle, logit_attr).numpy()
                    targets = getattr(batch, target_attr).numpy()
                    if hand_col is not None:
                        targets = targets[..., hand_col]
                    collected[key]["logits"].append(logits)
                    collected[key]["targets"].append(targets)
                diff = (bundle.motions - batch.motion_targets).numpy() * std
                sq_errors.append((diff**2).reshape(-1))
    model.train()

    accuracies: dict[str, dict[str, float]] = {}
    for key, (_, _, _, pad) in fields.items():
        logits = np.concatenate(collected[key]["logits"])
        targets = np.concatenate(collected[key]["targets"])
        per_hand = {
            hand: _accuracy(logits[:, i], targets[:, i], pad) for i, hand in enumerate(HANDS)
        }
        values = [v for v in per_hand.values() if not np.isnan(v)]
        per_hand["mean"] = float(np.mean(values)) if values else float("nan")
        accuracies[key] = per_hand
    rmse = float(np.sqrt(np.concatenate(sq_errors).mean()))
    return MetricsReport(accuracies=accuracies, rmse_m=rmse, n_slices=len(slices))


def aggregate_reports(reports: list[MetricsReport]) -> dict:
    """Mean and standard deviation over runs of hand-averaged metrics."""
    out: dict[str, dict[str, float]] = {}
    for obj in OBJECTIVES:
        vals = np.array([r.accuracies[obj]["mean"] for r in reports], dtype=np.float64)
        vals = vals[~np.isnan(vals)]
        out[obj] = {
            "mean": float(vals.mean()) if vals.size else float("nan"),
            "std": float(vals.std()) if vals.size else float("nan"),
        }
    rmse = np.array([r.rmse_m for r in reports], dtype=np.float64)
    out["rmse_m"] = {"mean": float(rmse.mean()), "std": float(rmse.std())}
    return out


def format_aggregate(aggregate: dict) -> str:
    lines = [f"{'objective':<12}{'mean':>12}{'std':>12}"]
    for key in (*OBJECTIVES, "rmse_m"):
        entry = aggregate[key]
        lines.append(f"{key:<12}{entry['mean']:>12.4f}{entry['std']:>12.4f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Training loops


@dataclass
class TrainResult:
    model: TaskGraphModel
    best_state: dict
    best_val_loss: float
    epoch_logs: list[dict]
    final_train_loss: float
    eval_epoch_state: dict | None = None


def train_single(
    train_slices: list[GraphSlice],
    val_slices: list[GraphSlice],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    vocab: Vocab,
    seed: int,
    initial_model: TaskGraphModel | None = None,
    log_path: Path | None = None,
    stop_fn=None,
    val_standardizer: Standardizer | None = None,
) -> TrainResult:
    """One deterministic training run; tracks the best-validation state.

    ``stop_fn(epoch_log)`` may return True to stop early (used by fixtures).
    ``val_standardizer`` enables metric logging (accuracies, RMSE in meters)
    alongside the validation loss at every ``eval_every`` epoch.
    """
    if initial_model is None:
        model = build_model(model_cfg, seed=seed)
    else:
        model = initial_model
        torch.manual_seed(seed)
    if cfg.freeze_encoder:
        model.freeze_encoder()
    action_w, object_w = class_weights(train_slices, vocab)
    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = AdamW(trainable, lr=cfg.lr, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay)

    best_val = float("inf")
    best_state = copy.deepcopy(model.state_dict())
    eval_epoch_state: dict | None = None
    logs: list[dict] = []
    log_file = log_path.open("a", encoding="utf-8") if log_path else None
    final_train_loss = float("nan")
    try:
        for epoch in range(1, cfg.epochs + 1):
            epoch_terms: dict[str, float] = {}
            n_seen = 0
            for slice_batch in batches(train_slices, cfg.batch_size, seed, epoch):
                optimizer.zero_grad(set_to_none=True)
                loss, terms = _forward_loss(model, slice_batch, action_w, object_w, cfg)
                if not torch.isfinite(loss):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
                loss.backward()
                optimizer.step()
                w = len(slice_batch)
                n_seen += w
                for k, v in terms.items():
                    epoch_terms[k] = epoch_terms.get(k, 0.0) + v * w
            entry = {"epoch": epoch, **{k: v / n_seen for k, v in epoch_terms.items()}}
            final_train_loss = entry["total"]

            if val_slices and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
                with torch.no_grad():
                    val_loss = 0.0
                    for start in range(0, len(val_slices), cfg.batch_size):
                        vb = val_slices[start : start + cfg.batch_size]
                        loss, _ = _forward_loss(model, vb, action_w, object_w, cfg)
                        val_loss += float(loss) * len(vb)
                    val_loss /= len(val_slices)
                entry["val_loss"] = val_loss
                if val_loss < best_val:
                    best_val = val_loss
                    best_state = copy.deepcopy(model.state_dict())
                if val_standardizer is not None and epoch % cfg.eval_every == 0:
                    report = evaluate(model, val_slices, vocab, val_standardizer)
                    entry["val_a_horizon"] = report.accuracies["a_horizon"]["mean"]
                    entry["val_o_horizon"] = report.accuracies["o_horizon"]["mean"]
                    entry["val_rmse_m"] = report.rmse_m
            if cfg.eval_epoch is not None and epoch == cfg.eval_epoch:
                eval_epoch_state = copy.deepcopy(model.state_dict())
            logs.append(entry)
            if log_file:
                log_file.write(json.dumps(entry) + "\n")
                log_file.flush()
            if stop_fn is not None and stop_fn(entry):
                break
    finally:
        if log_file:
            log_file.close()
    if not val_slices or best_val == float("inf"):
        best_state = copy.deepcopy(model.state_dict())
        best_val = final_train_loss
    return TrainResult(
        model=model,
        best_state=best_state,
        best_val_loss=best_val,
        epoch_logs=logs,
        final_train_loss=final_train_loss,
        eval_epoch_state=eval_epoch_state,
    )


def run_matrix(folds: list[Fold], seeds: tuple[int, ...]) -> list[tuple[int, int]]:
    """The (fold_index, seed) grid a cross-validation run will execute."""
    return [(fi, seed) for fi in range(len(folds)) for seed in seeds]


@dataclass
class CrossValResult:
    runs: list[dict]
    reports: list[MetricsReport]
    aggregate: dict
    failures: list[dict] = field(default_factory=list)


def _run_fold(
    dataset: DemonstrationSet,
    ds_cfg: DatasetConfig,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    fold_index: int,
    out_dir: Path | None,
    torch_threads: int | None = None,
) -> tuple[list[dict], list[MetricsReport], list[dict]]:
    """All seeds of one LOSO fold; module-level so worker processes can run it."""
    if torch_threads is not None:
        torch.set_num_threads(torch_threads)
    fold = split_loso(dataset.demos)[fold_index]
    prepared = prepare_fold(fold, ds_cfg, dataset.thresholds, fold_index)
    runs: list[dict] = []
    reports: list[MetricsReport] = []
    failures: list[dict] = []
    for seed in cfg.seeds:
        run_name = f"fold-{fold.held_out}_seed-{seed}"
        run_dir = (out_dir / run_name) if out_dir else None
        if run_dir:
            run_dir.mkdir(parents=True, exist_ok=True)
        try:
            result = train_single(
                prepared.train_slices,
                prepared.test_slices,
                model_cfg,
                cfg,
                dataset.vocab,
                seed,
                log_path=(run_dir / "epochs.jsonl") if run_dir else None,
                val_standardizer=prepared.standardizer,
            )
        except TrainingDiverged as exc:
            log.error("%s diverged: %s", run_name, exc)
            failures.append({"run": run_name, "error": str(exc)})
            continue
        result.model.load_state_dict(result.best_state)
        report = evaluate(result.model, prepared.test_slices, dataset.vocab, prepared.standardizer)
        reports.append(report)
        runs.append(
            {
                "run": run_name,
                "fold": fold.held_out,
                "seed": seed,
                "best_val_loss": result.best_val_loss,
                "metrics": report.to_dict(),
            }
        )
        if run_dir:
            save_checkpoint(
                run_dir / "checkpoint_best.npz",
                result.model,
                dataset.vocab,
                prepared.standardizer,
                ds_cfg.slices,
                extra={"fold": fold.held_out, "seed": seed},
            )
            if result.eval_epoch_state is not None:
                snapshot = TaskGraphModel(model_cfg)
                snapshot.load_state_dict(result.eval_epoch_state)
                save_checkpoint(
                    run_dir / f"checkpoint_epoch{cfg.eval_epoch}.npz",
                    snapshot,
                    dataset.vocab,
                    prepared.standardizer,
                    ds_cfg.slices,
                    extra={"fold": fold.held_out, "seed": seed, "epoch": cfg.eval_epoch},
                )
    return runs, reports, failures


def cross_validate(
    dataset: DemonstrationSet,
    ds_cfg: DatasetConfig,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    out_dir: Path | None = None,
    jobs: int = 1,
) -> CrossValResult:
    """LOSO folds x seeds; evaluates each best checkpoint on the held-out subject."""
    folds = split_loso(dataset.demos)
    runs: list[dict] = []
    reports: list[MetricsReport] = []
    failures: list[dict] = []
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_run_fold, dataset, ds_cfg, model_cfg, cfg, fi, out_dir, 1)
                for fi in range(len(folds))
            ]
            results = [f.result() for f in futures]
    else:
        results = [
            _run_fold(dataset, ds_cfg, model_cfg, cfg, fi, out_dir) for fi in range(len(folds))
        ]
    for fold_runs, fold_reports, fold_failures in results:
        runs.extend(fold_runs)
        reports.extend(fold_reports)
        failures.extend(fold_failures)
    aggregate = aggregate_reports(reports) if reports else {}
    cv = CrossValResult(runs=runs, reports=reports, aggregate=aggregate, failures=failures)
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(
            json.dumps({"runs": runs, "aggregate": aggregate, "failures": failures}, indent=2),
            encoding="utf-8",
        )
        if aggregate:
            (out_dir / "report.txt").write_text(format_aggregate(aggregate) + "\n", encoding="utf-8")
    return cv


def finetune(
    model: TaskGraphModel,
    train_slices: list[GraphSlice],
    val_slices: list[GraphSlice],
    cfg: TrainConfig,
    vocab: Vocab,
    seed: int = 0,
) -> TrainResult:
    """Freeze the encoder and continue training only the decoder parameters."""
    cfg = TrainConfig.from_dict({**cfg.to_dict(), "freeze_encoder": True})
    return train_single(
        train_slices,
        val_slices,
        model.cfg,
        cfg,
        vocab,
        seed,
        initial_model=model,
    )

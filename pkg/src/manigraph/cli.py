"""Command-line entry point: data generation, training, evaluation, rollout,
finetuning, online action selection, and gradient checking."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .augment import smooth
from .batching import batch_from_slices
from .config import build_manifest, parse_config_file, resolve_configs, write_manifest
from .datasets import load_dataset, save_dataset
from .demonstrations import DemonstrationSet, read_demonstration
from .ensemble import EnsembleBuffer, rollout as run_rollout
from .errors import ConfigError, ManigraphError
from .execution import Decision, ExecutionState, StreamSlicer, default_rules, select_action
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .relations import CONTACT, edge_pairs
from .slices import slice_demonstration, standardize_demo
from .synthetic import GRASP_ACTIONS, RELEASE_ACTIONS, TASK_SPECS, default_vocab, generate_synthetic
from .training import cross_validate, evaluate, finetune as run_finetune
from .vocab import LEFT, RIGHT, Vocab

log = logging.getLogger("manigraph")


def _collect_config(args: argparse.Namespace) -> dict:
    """defaults < config file < --set overrides < dedicated flags."""
    raw: dict = {}
    if getattr(args, "config", None):
        raw.update(parse_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        try:
            raw[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            raw[key.strip()] = value
    for flag in ("encoder", "epochs", "seeds", "batch_size", "d_mp"):
        value = getattr(args, flag, None)
        if value is not None:
            raw[flag] = value
    return raw


def cmd_gen_data(args: argparse.Namespace) -> int:
    if args.task not in TASK_SPECS:
        raise ConfigError(f"unknown task {args.task!r}; choose from {sorted(TASK_SPECS)}")
    spec = TASK_SPECS[args.task](noise_std=args.noise_std)
    vocab = default_vocab()
    out_dir = Path(args.out)
    manifest = build_manifest(
        "gen-data",
        {
            "task": args.task,
            "subjects": args.subjects,
            "takes": args.takes,
            "noise_std": args.noise_std,
        },
        seeds=[args.seed],
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(manifest, out_dir / "run_manifest.json")
    demos = generate_synthetic(spec, vocab, args.subjects, args.takes, args.seed)
    paths = save_dataset(DemonstrationSet(demos=demos, vocab=vocab), out_dir)
    log.info("wrote %d takes to %s", len(paths), out_dir)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    data_path = args.data
    if args.from_manifest:
        previous = json.loads(Path(args.from_manifest).read_text(encoding="utf-8"))
        raw = {k: v for k, v in previous["config"].items() if k not in ("data", "jobs")}
        data_path = data_path or previous["config"].get("data")
        raw.update(_collect_config(args))
    else:
        raw = _collect_config(args)
    if not data_path:
        raise ConfigError("train needs --data (or a manifest carrying one)")
    ds_cfg, enc_cfg, train_cfg, extras = resolve_configs(raw)
    dataset = load_dataset(data_path)
    out_dir = Path(args.out)
    manifest = build_manifest(
        "train",
        {**raw, "data": str(data_path), "jobs": args.jobs},
        seeds=list(train_cfg.seeds),
        input_paths=sorted(Path(data_path).glob("*.jsonl")),
    )
    write_manifest(manifest, out_dir / "run_manifest.json")
    model_cfg = ModelConfig.for_vocab(
        dataset.vocab,
        ds_cfg.slices,
        encoder=enc_cfg,
        decoder_layers=extras["decoder_layers"],
        decoder_heads=extras["decoder_heads"],
    )
    result = cross_validate(dataset, ds_cfg, model_cfg, train_cfg, out_dir, jobs=args.jobs)
    if result.failures:
        log.error("failed runs: %s", result.failures)
    print(json.dumps(result.aggregate, indent=2))
    return 0 if result.runs and not result.failures else 1


def cmd_eval(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    if dataset.vocab.to_dict() != ckpt.vocab.to_dict():
        raise ConfigError("checkpoint vocabulary does not match the dataset vocabulary")
    demos = dataset.demos
    if args.subject:
        demos = [d for d in demos if d.subject_id == args.subject]
        if not demos:
            raise ConfigError(f"no takes for subject {args.subject!r}")
    window = args.smoothing_window if args.smoothing_window % 2 == 1 else args.smoothing_window + 1
    slices = []
    for demo in demos:
        prepared = standardize_demo(smooth(demo, window, dataset.thresholds), ckpt.standardizer)
        slices.extend(slice_demonstration(prepared, ckpt.slice_config, args.stride))
    report = evaluate(ckpt.model, slices, ckpt.vocab, ckpt.standardizer)
    manifest = build_manifest(
        "eval",
        {"checkpoint": str(args.checkpoint), "data": str(args.data), "subject": args.subject},
        seeds=[],
        input_paths=[args.checkpoint],
    )
    payload = {"manifest": manifest.to_dict(), "report": report.to_dict()}
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    print(report.to_text())
    return 0


def cmd_rollout(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    demo = read_demonstration(args.demo, ckpt.vocab)
    manifest = build_manifest(
        "rollout",
        {"checkpoint": str(args.checkpoint), "demo": str(args.demo), "decay": args.decay},
        seeds=[],
        input_paths=[args.checkpoint, args.demo],
    )
    sink = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        sink.write(json.dumps({"kind": "manifest", **manifest.to_dict()}) + "\n")
        steps = run_rollout(
            ckpt.model, demo, ckpt.vocab, ckpt.standardizer, ckpt.slice_config, decay=args.decay
        )
        for step in steps:
            if step.fused is None:
                sink.write(json.dumps({"kind": "prediction", "step": step.step, "no_prediction": True}) + "\n")
                continue
            fused = step.fused
            rec = {
                "kind": "prediction",
                "step": step.step,
                "right": [
                    ckpt.vocab.action_labels[int(fused.actions[RIGHT])],
                    ckpt.vocab.object_classes[int(fused.objects[RIGHT])],
                ],
                "left": [
                    ckpt.vocab.action_labels[int(fused.actions[LEFT])],
                    ckpt.vocab.object_classes[int(fused.objects[LEFT])],
                ],
                "coords": np.round(fused.coords, 6).tolist(),
                "sources": fused.n_sources,
            }
            sink.write(json.dumps(rec) + "\n")
    finally:
        if args.out:
            sink.close()
    return 0


def cmd_finetune(args: argparse.Namespace) -> int:
    raw = _collect_config(args)
    ds_cfg, _, train_cfg, _ = resolve_configs(raw)
    ckpt = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    if dataset.vocab.to_dict() != ckpt.vocab.to_dict():
        raise ConfigError("finetune data vocabulary does not match the checkpoint")
    out_dir = Path(args.out)
    manifest = build_manifest(
        "finetune",
        {**raw, "checkpoint": str(args.checkpoint), "data": str(args.data)},
        seeds=[args.seed],
        input_paths=[args.checkpoint, *sorted(Path(args.data).glob("*.jsonl"))],
    )
    write_manifest(manifest, out_dir / "run_manifest.json")

    window = ds_cfg.smoothing_window if ds_cfg.smoothing_window % 2 == 1 else ds_cfg.smoothing_window + 1
    slices = []
    for demo in dataset.demos:
        prepared = standardize_demo(smooth(demo, window, dataset.thresholds), ckpt.standardizer)
        slices.extend(slice_demonstration(prepared, ckpt.slice_config, ds_cfg.stride))
    result = run_finetune(ckpt.model, slices, slices, train_cfg, ckpt.vocab, seed=args.seed)
    result.model.load_state_dict(result.best_state)
    out_path = out_dir / "checkpoint_finetuned.npz"
    save_checkpoint(
        out_path,
        result.model,
        ckpt.vocab,
        ckpt.standardizer,
        ckpt.slice_config,
        extra={**ckpt.extra, "finetuned_from": str(args.checkpoint)},
    )
    log.info("finetuned checkpoint written to %s", out_path)
    report = evaluate(result.model, slices, ckpt.vocab, ckpt.standardizer)
    print(report.to_text())
    return 0


def _complete_primitive(state: ExecutionState, hand: int, vocab: Vocab) -> None:
    current = state.hands[hand].current
    if current is None:
        return
    action, obj = current
    name = vocab.action_labels[action]
    if name in GRASP_ACTIONS:
        state.holding_class[hand] = obj
    elif name in RELEASE_ACTIONS:
        state.holding_class[hand] = None
    state.last_completed[hand] = current
    state.hands[hand].executed.append(current)
    state.hands[hand].busy = False
    state.hands[hand].current = None


def cmd_select_action(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    vocab = ckpt.vocab
    source = open(args.frames, "r", encoding="utf-8") if args.frames else sys.stdin
    manifest = build_manifest(
        "select-action",
        {
            "checkpoint": str(args.checkpoint),
            "decay": args.decay,
            "primitive_duration": args.primitive_duration,
        },
        seeds=[],
        input_paths=[args.checkpoint],
    )
    print(json.dumps({"kind": "manifest", **manifest.to_dict()}))
    rules = default_rules()
    state = ExecutionState()
    remaining = {RIGHT: 0, LEFT: 0}
    buffer = EnsembleBuffer(ckpt.slice_config.horizon, args.decay)
    slicer: StreamSlicer | None = None
    step = -1
    try:
        for line in source:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("kind") == "header":
                roster = tuple(vocab.object_index(name) for name in rec["roster"])
                slicer = StreamSlicer(
                    roster, vocab, rec["task"], ckpt.slice_config, ckpt.standardizer
                )
                continue
            if slicer is None:
                raise ConfigError("frame record before header")
            step += 1
            for hand in (RIGHT, LEFT):
                if remaining[hand] > 0:
                    remaining[hand] -= 1
                    if remaining[hand] == 0:
                        _complete_primitive(state, hand, vocab)
            current = np.array(
                [
                    state.hands[RIGHT].current or (vocab.idle_action, vocab.none_object),
                    state.hands[LEFT].current or (vocab.idle_action, vocab.none_object),
                ],
                dtype=np.int64,
            )
            graph_slice = slicer.push(np.asarray(rec["positions"], dtype=np.float64), current)
            latest = slicer.frames[-1]
            if latest.relations is not None:
                senders, receivers = edge_pairs(len(slicer.roster))
                state.contacts = {
                    (slicer.roster[s], slicer.roster[r])
                    for s, r, bit in zip(senders, receivers, latest.relations[:, CONTACT])
                    if bit
                }
            decisions: dict[str, dict] = {}
            if graph_slice is not None:
                with torch.no_grad():
                    bundle = ckpt.model(batch_from_slices([graph_slice]), teacher_forcing=False)
                buffer.update_bundle(slicer.t, bundle)
            fused = buffer.query(step)
            for hand, name in ((RIGHT, "right"), (LEFT, "left")):
                if fused is None:
                    decisions[name] = {"decision": "none"}
                    continue
                action = int(fused.actions[hand])
                obj = int(fused.objects[hand])
                decision = select_action(hand, action, obj, state, rules, vocab)
                if decision is Decision.TRIGGER:
                    remaining[hand] = args.primitive_duration
                decisions[name] = {
                    "action": vocab.action_labels[action],
                    "object": vocab.object_classes[obj],
                    "decision": decision.value,
                }
            print(json.dumps({"kind": "decision", "step": step, **decisions}))
    finally:
        if args.frames:
            source.close()
    summary = {
        "kind": "summary",
        "triggers": {"right": state.hands[RIGHT].triggers, "left": state.hands[LEFT].triggers},
        "drops": {"right": state.hands[RIGHT].drops, "left": state.hands[LEFT].drops},
        "blocks": {"right": state.hands[RIGHT].blocks, "left": state.hands[LEFT].blocks},
        "intervention_rate": {
            "right": state.hands[RIGHT].intervention_rate(),
            "left": state.hands[LEFT].intervention_rate(),
        },
    }
    print(json.dumps(summary))
    return 0


def cmd_grad_check(args: argparse.Namespace) -> int:
    from .verification import full_model_grad_check

    report = full_model_grad_check(rel_tol=args.rel_tol, n_samples=args.samples, seed=args.seed)
    print(report.summary())
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="manigraph", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic demonstration dataset")
    p.add_argument("--task", required=True, choices=sorted(TASK_SPECS))
    p.add_argument("--subjects", type=int, default=4)
    p.add_argument("--takes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-std", type=float, default=0.002)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="leave-one-subject-out training")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--from-manifest", dest="from_manifest", help="rerun a previous run's manifest")
    p.add_argument("--encoder", choices=("mpnn", "dreher", "rgcn", "transformer", "none"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--d-mp", dest="d_mp", type=int)
    p.add_argument("--seeds")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--subject")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--smoothing-window", dest="smoothing_window", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rollout", help="offline chunked rollout over a demonstration file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--demo", required=True)
    p.add_argument("--decay", type=float, default=0.1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("finetune", help="freeze the encoder and adapt the decoder")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("select-action", help="online precondition-gated action selection")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frames", help="frame stream file; defaults to stdin")
    p.add_argument("--decay", type=float, default=0.1)
    p.add_argument("--primitive-duration", dest="primitive_duration", type=int, default=20)
    p.set_defaults(func=cmd_select_action)

    p = sub.add_parser("grad-check", help="finite-difference check of the full joint loss")
    p.add_argument("--rel-tol", dest="rel_tol", type=float, default=1e-3)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=2)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ManigraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        log.exception("unexpected failure: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())

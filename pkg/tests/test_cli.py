import json
from pathlib import Path

import numpy as np
import pytest
import torch

from manigraph.cli import main
from manigraph.datasets import load_dataset
from manigraph.encoder import EncoderConfig
from manigraph.model import ModelConfig, build_model, load_checkpoint, save_checkpoint
from manigraph.slices import SliceConfig, fit_standardizer


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    rc = main(["gen-data", "--task", "cooking", "--subjects", "2", "--takes", "2", "--out", str(out), "--seed", "5"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def small_checkpoint(tmp_path_factory, data_dir):
    """Untrained but fully wired checkpoint over the dataset's vocabulary."""
    dataset = load_dataset(data_dir)
    slice_cfg = SliceConfig(history=4, sample_rate=5, horizon=5, n_past=4)
    cfg = ModelConfig.for_vocab(dataset.vocab, slice_cfg, encoder=EncoderConfig(d_mp=16, ff_mult=2))
    model = build_model(cfg, seed=0)
    stats = fit_standardizer(dataset.demos)
    path = tmp_path_factory.mktemp("ckpt") / "model.npz"
    save_checkpoint(path, model, dataset.vocab, stats, slice_cfg)
    return path


def test_gen_data_file_count(tmp_path):
    rc = main(["gen-data", "--task", "insert", "--subjects", "2", "--takes", "3", "--out", str(tmp_path / "d"), "--seed", "0"])
    assert rc == 0
    files = list((tmp_path / "d").glob("*.jsonl"))
    assert len(files) == 6
    assert (tmp_path / "d" / "manifest.json").exists()
    assert (tmp_path / "d" / "run_manifest.json").exists()


def test_gen_data_expected_naming(data_dir):
    names = sorted(p.name for p in data_dir.glob("*.jsonl"))
    assert names == [
        "cooking_s0_0.jsonl",
        "cooking_s0_1.jsonl",
        "cooking_s1_0.jsonl",
        "cooking_s1_1.jsonl",
    ]


def test_train_writes_manifest_report_checkpoints(tmp_path, data_dir):
    out = tmp_path / "run"
    args = [
        "train", "--data", str(data_dir), "--out", str(out),
        "--encoder", "mpnn", "--epochs", "1", "--seeds", "0", "--d-mp", "8",
        "--set", "history=4", "--set", "sample_rate=5", "--set", "horizon=5",
        "--set", "n_past=4", "--set", "stride=25", "--set", "iterations=1",
        "--set", "ff_mult=2", "--set", "resample_copies=0", "--set", "batch_size=64",
        "--set", "eval_every=1",
    ]
    rc = main(args)
    assert rc == 0
    assert (out / "run_manifest.json").exists()
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["command"] == "train"
    assert len(manifest["inputs"]) == 4  # all dataset files hashed
    report = json.loads((out / "report.json").read_text())
    assert {r["fold"] for r in report["runs"]} == {"s0", "s1"}
    ckpts = list(out.glob("fold-*/checkpoint_best.npz"))
    assert len(ckpts) == 2
    # rerunning from the manifest reproduces identical parameters
    out2 = tmp_path / "run2"
    rc = main([
        "train", "--from-manifest", str(out / "run_manifest.json"), "--out", str(out2),
    ])
    assert rc == 0
    a = load_checkpoint(next(iter(sorted(out.glob("fold-*/checkpoint_best.npz")))))
    b = load_checkpoint(next(iter(sorted(out2.glob("fold-*/checkpoint_best.npz")))))
    for (n1, p1), (n2, p2) in zip(a.model.named_parameters(), b.model.named_parameters()):
        assert n1 == n2 and torch.equal(p1, p2)


def test_default_encoder_matches_standard_settings():
    from manigraph.config import resolve_configs

    _, enc, _, extras = resolve_configs({"encoder": "mpnn"})
    assert enc.iterations == 3
    assert enc.temporal_heads == 2
    assert enc.d_mp == 64
    assert extras["decoder_layers"] == 2 and extras["decoder_heads"] == 4


def test_eval_emits_table_shaped_report(tmp_path, data_dir, small_checkpoint, capsys):
    out_file = tmp_path / "report.json"
    rc = main([
        "eval", "--checkpoint", str(small_checkpoint), "--data", str(data_dir),
        "--subject", "s0", "--stride", "20", "--out", str(out_file),
    ])
    assert rc == 0
    text = capsys.readouterr().out
    for col in ("a_next", "a_future", "a_horizon", "o_next", "o_future", "o_horizon", "rmse_m"):
        assert col in text
    payload = json.loads(out_file.read_text())
    assert set(payload["report"]["accuracies"]) == {
        "a_next", "a_future", "a_horizon", "o_next", "o_future", "o_horizon",
    }
    assert payload["report"]["rmse_m"] >= 0
    assert payload["manifest"]["command"] == "eval"


def test_rollout_stream_records(tmp_path, data_dir, small_checkpoint):
    demo_file = sorted(data_dir.glob("*.jsonl"))[0]
    out_file = tmp_path / "rollout.jsonl"
    rc = main([
        "rollout", "--checkpoint", str(small_checkpoint), "--demo", str(demo_file),
        "--out", str(out_file),
    ])
    assert rc == 0
    lines = [json.loads(l) for l in out_file.read_text().splitlines()]
    assert lines[0]["kind"] == "manifest"
    predictions = [l for l in lines if l["kind"] == "prediction"]
    ckpt = load_checkpoint(small_checkpoint)
    n_frames = sum(1 for _ in open(demo_file)) - 1
    assert len(predictions) == n_frames - ckpt.slice_config.warmup
    fused = [p for p in predictions if not p.get("no_prediction")]
    assert fused and "right" in fused[0] and "coords" in fused[0]


def test_select_action_stream(tmp_path, data_dir, small_checkpoint, capsys):
    demo_file = sorted(data_dir.glob("*.jsonl"))[0]
    rc = main([
        "select-action", "--checkpoint", str(small_checkpoint), "--frames", str(demo_file),
        "--primitive-duration", "10",
    ])
    assert rc == 0
    lines = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert lines[0]["kind"] == "manifest"
    decisions = [l for l in lines if l["kind"] == "decision"]
    n_frames = sum(1 for _ in open(demo_file)) - 1
    assert len(decisions) == n_frames
    kinds = {d["right"].get("decision") for d in decisions} | {d["left"].get("decision") for d in decisions}
    assert "none" in kinds  # warm-up steps
    assert kinds <= {"none", "trigger", "drop", "block", "idle"}
    assert lines[-1]["kind"] == "summary"


def test_finetune_cli(tmp_path, data_dir, small_checkpoint):
    out = tmp_path / "ft"
    rc = main([
        "finetune", "--checkpoint", str(small_checkpoint), "--data", str(data_dir),
        "--out", str(out), "--epochs", "1",
        "--set", "stride=25", "--set", "batch_size=64", "--set", "seeds=0",
    ])
    assert rc == 0
    ft = load_checkpoint(out / "checkpoint_finetuned.npz")
    base = load_checkpoint(small_checkpoint)
    for (name, p), (_, q) in zip(ft.model.named_parameters(), base.model.named_parameters()):
        if name.startswith("encoder."):
            assert torch.equal(p, q), name
    assert (out / "run_manifest.json").exists()


def test_train_parallel_folds(tmp_path, data_dir):
    out = tmp_path / "parallel"
    rc = main([
        "train", "--data", str(data_dir), "--out", str(out),
        "--encoder", "none", "--epochs", "1", "--seeds", "0", "--d-mp", "8",
        "--jobs", "2",
        "--set", "history=4", "--set", "sample_rate=5", "--set", "horizon=5",
        "--set", "n_past=4", "--set", "stride=30", "--set", "ff_mult=2",
        "--set", "mirror=false", "--set", "resample_copies=0", "--set", "batch_size=64",
    ])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert len(report["runs"]) == 2


def test_grad_check_cli_exit_codes(capsys):
    assert main(["grad-check", "--samples", "40"]) == 0
    out = capsys.readouterr().out
    assert "grad-check PASS" in out


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--nonsense"])
    assert exc.value.code == 2


def test_unknown_task_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit):
        main(["gen-data", "--task", "juggling", "--out", str(tmp_path)])


def test_bad_config_key_exits_2(tmp_path, data_dir):
    rc = main([
        "train", "--data", str(data_dir), "--out", str(tmp_path / "x"),
        "--set", "banana=1",
    ])
    assert rc == 2

import copy

import numpy as np
import pytest
import torch

from manigraph.batching import batch_from_slices
from manigraph.datasets import DatasetConfig, split_loso
from manigraph.encoder import EncoderConfig
from manigraph.errors import ConfigError
from manigraph.model import ModelConfig, build_model, load_checkpoint, save_checkpoint
from manigraph.slices import SliceConfig, Standardizer, slice_demonstration
from manigraph.synthetic import generate_synthetic
from manigraph.training import (
    TrainConfig,
    class_weights,
    evaluate,
    finetune,
    joint_loss,
    run_matrix,
    train_single,
)
from manigraph.vocab import Vocab
from manigraph.verification import TINY_ENCODER, TINY_SLICES, tiny_fixture, tiny_spec


@pytest.fixture(scope="module")
def tiny_data():
    spec = tiny_spec()
    from manigraph.synthetic import vocab_for_specs

    vocab = vocab_for_specs([spec])
    demos = generate_synthetic(spec, vocab, subjects=1, takes=3, seed=1)
    slices = [s for d in demos for s in slice_demonstration(d, TINY_SLICES, stride=2)]
    return vocab, slices


def _fake_slice(vocab, actions, objects):
    """Just the fields class_weights reads: every target set to one class."""
    from types import SimpleNamespace

    return SimpleNamespace(
        next_pair=np.array([[actions[0], objects[0]], [actions[1], objects[1]]]),
        future_pair=np.array([[actions[0], objects[0]], [actions[1], objects[1]]]),
        horizon_actions=np.array([[actions[0]] * 3, [actions[1]] * 3]),
        horizon_objects=np.array([[objects[0]] * 3, [objects[1]] * 3]),
    )


def test_class_weights_uniform_counts(vocab):
    a1, a2 = vocab.action_index("stir"), vocab.action_index("pour")
    o1, o2 = vocab.object_index("whisk"), vocab.object_index("bowl")
    slices = [_fake_slice(vocab, (a1, a2), (o1, o2))]
    aw, ow = class_weights(slices, vocab)
    assert aw[a1].item() == pytest.approx(1.0)
    assert aw[a2].item() == pytest.approx(1.0)
    assert ow[o1].item() == pytest.approx(1.0)
    absent = [i for i in range(vocab.n_actions) if i not in (a1, a2)]
    assert all(aw[i].item() == 0.0 for i in absent)

    with pytest.raises(ConfigError):
        class_weights([], vocab)


def test_class_weights_inverse_frequency(tiny_data):
    vocab, slices = tiny_data
    aw, ow = class_weights(slices, vocab)
    assert aw[vocab.pad_action].item() == 0.0
    assert ow[vocab.pad_object].item() == 0.0
    counts = np.zeros(vocab.n_actions)
    for s in slices:
        np.add.at(counts, s.next_pair[:, 0], 1)
        np.add.at(counts, s.future_pair[:, 0], 1)
        np.add.at(counts, s.horizon_actions.reshape(-1), 1)
    counts[vocab.pad_action] = 0
    present = counts > 0
    # frequency-weighted mean of the weights is 1
    probs = counts[present] / counts[present].sum()
    assert float((probs * aw.numpy()[present]).sum()) == pytest.approx(1.0, abs=1e-9)
    # rarer classes get strictly larger weights
    order = np.argsort(counts[present])
    w_sorted = aw.numpy()[present][order]
    assert (np.diff(w_sorted) <= 1e-12).all()


def test_class_weights_spec_example():
    # counts (75, 25) over two classes -> weights (2/3, 2)
    counts = np.array([75.0, 25.0])
    w = counts.sum() / (2 * counts)
    assert w[0] == pytest.approx(2 / 3)
    assert w[1] == pytest.approx(2.0)


def test_joint_loss_perfect_predictions_near_zero(tiny_data):
    vocab, slices = tiny_data
    batch = batch_from_slices(slices[:4])
    from manigraph.decoder import PredictionBundle
    import torch.nn.functional as F

    big = 50.0

    def logits_for(targets, n):
        return big * F.one_hot(targets, n).float()

    bundle = PredictionBundle(
        next_action_logits=logits_for(batch.next_pair[..., 0], vocab.n_actions),
        next_object_logits=logits_for(batch.next_pair[..., 1], vocab.n_objects),
        future_action_logits=logits_for(batch.future_pair[..., 0], vocab.n_actions),
        future_object_logits=logits_for(batch.future_pair[..., 1], vocab.n_objects),
        horizon_action_logits=logits_for(batch.horizon_actions, vocab.n_actions),
        horizon_object_logits=logits_for(batch.horizon_objects, vocab.n_objects),
        motions=batch.motion_targets.clone(),
    )
    aw, ow = class_weights(slices, vocab)
    total, terms = joint_loss(bundle, batch, aw, ow, 1000.0)
    assert terms["mse"] == 0.0
    assert float(total) < 1e-6


def test_joint_loss_breakdown_sums_to_total(tiny_data):
    vocab, slices = tiny_data
    fixture_model = build_model(
        ModelConfig.for_vocab(vocab, TINY_SLICES, encoder=TINY_ENCODER), seed=0
    ).double()
    batch = batch_from_slices(slices[:6], dtype=torch.float64)
    bundle = fixture_model(batch, teacher_forcing=True)
    aw, ow = class_weights(slices, vocab)
    total, terms = joint_loss(bundle, batch, aw, ow, 1000.0)
    recomputed = sum(terms[k] for k in ("a_next", "a_future", "a_horizon", "o_next", "o_future", "o_horizon"))
    recomputed += 1000.0 * terms["mse"]
    assert float(total.detach()) == pytest.approx(recomputed, rel=1e-9)
    assert all(v >= 0 for k, v in terms.items() if k != "total")


def test_pad_targets_contribute_zero_gradient(tiny_data):
    vocab, slices = tiny_data
    from manigraph.nn.losses import weighted_cross_entropy

    aw, _ = class_weights(slices, vocab)
    targets = torch.tensor([[vocab.pad_action, vocab.action_index("hold")]])
    logits = torch.randn(1, 2, vocab.n_actions, requires_grad=True)
    loss = weighted_cross_entropy(logits, targets, aw)
    loss.backward()
    assert torch.equal(logits.grad[0, 0], torch.zeros(vocab.n_actions))  # pad hand: zero grad
    assert logits.grad[0, 1].abs().sum() > 0  # supervised hand: live grad

    all_pad = torch.full((1, 2), vocab.pad_action, dtype=torch.int64)
    assert float(weighted_cross_entropy(logits.detach(), all_pad, aw)) == 0.0


def test_train_single_deterministic(tiny_data):
    vocab, slices = tiny_data
    cfg = TrainConfig(epochs=2, batch_size=16, seeds=(0,), eval_every=1, lr=1e-3)
    model_cfg = ModelConfig.for_vocab(vocab, TINY_SLICES, encoder=TINY_ENCODER)
    r1 = train_single(slices, slices[:8], model_cfg, cfg, vocab, seed=0)
    r2 = train_single(slices, slices[:8], model_cfg, cfg, vocab, seed=0)
    assert r1.epoch_logs[0]["total"] == r2.epoch_logs[0]["total"]
    for (k1, v1), (k2, v2) in zip(r1.model.state_dict().items(), r2.model.state_dict().items()):
        assert k1 == k2 and torch.equal(v1, v2)


def test_training_loss_decreases_on_overfit_fixture(tiny_data):
    vocab, slices = tiny_data
    cfg = TrainConfig(epochs=10, batch_size=32, seeds=(0,), eval_every=100, lr=2e-3)
    model_cfg = ModelConfig.for_vocab(vocab, TINY_SLICES, encoder=TINY_ENCODER)
    result = train_single(slices, [], model_cfg, cfg, vocab, seed=0)
    first = result.epoch_logs[0]["total"]
    last = result.epoch_logs[-1]["total"]
    assert last < first


def test_run_matrix_enumeration(vocab, cooking_demos):
    demos = []
    for s in range(4):
        for d in cooking_demos[:1]:
            c = copy.copy(d)
            c.subject_id = f"s{s}"
            demos.append(c)
    folds = split_loso(demos)
    assert len(run_matrix(folds, (0, 1, 2, 3))) == 16


def test_evaluate_all_correct_toy(tiny_data, monkeypatch):
    vocab, slices = tiny_data
    model = build_model(ModelConfig.for_vocab(vocab, TINY_SLICES, encoder=TINY_ENCODER), seed=0)
    batch = batch_from_slices(slices[:2])

    class Oracle(torch.nn.Module):
        def __init__(self, inner):
            super().__init__()
            self.cfg = inner.cfg

        def forward(self, b, teacher_forcing=False):
            import torch.nn.functional as F
            from manigraph.decoder import PredictionBundle

            return PredictionBundle(
                next_action_logits=F.one_hot(b.next_pair[..., 0], vocab.n_actions).float(),
                next_object_logits=F.one_hot(b.next_pair[..., 1], vocab.n_objects).float(),
                future_action_logits=F.one_hot(b.future_pair[..., 0], vocab.n_actions).float(),
                future_object_logits=F.one_hot(b.future_pair[..., 1], vocab.n_objects).float(),
                horizon_action_logits=F.one_hot(b.horizon_actions, vocab.n_actions).float(),
                horizon_object_logits=F.one_hot(b.horizon_objects, vocab.n_objects).float(),
                motions=b.motion_targets.clone(),
            )

        def eval(self):
            return self

        def train(self):
            return self

    report = evaluate(Oracle(model), slices[:16], vocab, Standardizer.identity())
    for obj, acc in report.accuracies.items():
        assert acc["mean"] == pytest.approx(1.0)
    assert report.rmse_m == pytest.approx(0.0, abs=1e-9)


def test_evaluate_hand_built_half_accuracy(tiny_data):
    vocab, slices = tiny_data
    from manigraph.decoder import PredictionBundle
    import torch.nn.functional as F

    batch = batch_from_slices(slices[:2])

    class HalfRight(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.cfg = build_model(
                ModelConfig.for_vocab(vocab, TINY_SLICES, encoder=TINY_ENCODER), seed=0
            ).cfg

        def forward(self, b, teacher_forcing=False):
            next_a = F.one_hot(b.next_pair[..., 0], vocab.n_actions).float()
            wrong = next_a.clone()
            wrong[1] = torch.roll(wrong[1], 1, dims=-1)  # second sample wrong on both hands
            return PredictionBundle(
                next_action_logits=wrong,
                next_object_logits=F.one_hot(b.next_pair[..., 1], vocab.n_objects).float(),
                future_action_logits=F.one_hot(b.future_pair[..., 0], vocab.n_actions).float(),
                future_object_logits=F.one_hot(b.future_pair[..., 1], vocab.n_objects).float(),
                horizon_action_logits=F.one_hot(b.horizon_actions, vocab.n_actions).float(),
                horizon_object_logits=F.one_hot(b.horizon_objects, vocab.n_objects).float(),
                motions=b.motion_targets.clone(),
            )

        def eval(self):
            return self

        def train(self):
            return self

    report = evaluate(HalfRight(), slices[:2], vocab, Standardizer.identity())
    assert report.accuracies["a_next"]["mean"] == pytest.approx(0.5)


def test_evaluate_vocab_mismatch_rejected(tiny_data, vocab):
    tiny_vocab, slices = tiny_data
    model = build_model(ModelConfig.for_vocab(tiny_vocab, TINY_SLICES, encoder=TINY_ENCODER), seed=0)
    with pytest.raises(ConfigError):
        evaluate(model, slices, vocab, Standardizer.identity())


def test_finetune_freezes_encoder_and_improves_loss(tiny_data, tmp_path):
    vocab, slices = tiny_data
    model_cfg = ModelConfig.for_vocab(vocab, TINY_SLICES, encoder=TINY_ENCODER)
    base_cfg = TrainConfig(epochs=3, batch_size=32, seeds=(0,), eval_every=10)
    base = train_single(slices, [], model_cfg, base_cfg, vocab, seed=0)

    path = tmp_path / "ckpt.npz"
    save_checkpoint(path, base.model, vocab, Standardizer.identity(), TINY_SLICES)
    ckpt = load_checkpoint(path)

    encoder_before = {
        n: p.detach().numpy().copy() for n, p in ckpt.model.named_parameters() if n.startswith("encoder.")
    }
    decoder_before = {
        n: p.detach().numpy().copy() for n, p in ckpt.model.named_parameters() if n.startswith("decoder.")
    }
    aw, ow = class_weights(slices, vocab)
    batch = batch_from_slices(slices[:32])
    with torch.no_grad():
        before_loss = float(joint_loss(ckpt.model(batch, True), batch, aw, ow, 1000.0)[0])

    result = finetune(ckpt.model, slices, [], TrainConfig(epochs=4, batch_size=32, seeds=(0,)), vocab, seed=0)
    after = dict(result.model.named_parameters())
    for name, arr in encoder_before.items():
        assert np.array_equal(after[name].detach().numpy(), arr), f"encoder param {name} changed"
        assert not after[name].requires_grad
    changed = sum(
        not np.array_equal(after[n].detach().numpy(), arr) for n, arr in decoder_before.items()
    )
    assert changed > 0
    with torch.no_grad():
        after_loss = float(joint_loss(result.model(batch, True), batch, aw, ow, 1000.0)[0])
    assert after_loss < before_loss


def test_checkpoint_roundtrip_preserves_everything(tiny_data, tmp_path):
    vocab, slices = tiny_data
    model = build_model(ModelConfig.for_vocab(vocab, TINY_SLICES, encoder=TINY_ENCODER), seed=3)
    stats = Standardizer(mean=np.array([0.1, 0.2, 0.3]), std=np.array([1.0, 2.0, 3.0]))
    path = tmp_path / "model.npz"
    from manigraph.nn.optim import AdamW

    opt = AdamW([p for p in model.parameters() if p.requires_grad])
    batch = batch_from_slices(slices[:4])
    aw, ow = class_weights(slices, vocab)
    loss, _ = joint_loss(model(batch, True), batch, aw, ow, 1000.0)
    loss.backward()
    opt.step()
    save_checkpoint(path, model, vocab, stats, TINY_SLICES, optimizer=opt)
    ckpt = load_checkpoint(path)
    assert ckpt.vocab.to_dict() == vocab.to_dict()
    assert np.allclose(ckpt.standardizer.mean, stats.mean)
    assert ckpt.slice_config == TINY_SLICES
    for (n1, p1), (n2, p2) in zip(model.named_parameters(), ckpt.model.named_parameters()):
        assert n1 == n2 and torch.equal(p1, p2)
    assert ckpt.optimizer_state is not None
    assert ckpt.optimizer_state["hyper"]["lr"] == pytest.approx(1e-3)
    some = next(iter(ckpt.optimizer_state["params"].values()))
    assert some["step"] == 1


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(beta_mse=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(seeds=())


def test_eval_epoch_snapshot_recorded(tiny_data):
    vocab, slices = tiny_data
    cfg = TrainConfig(epochs=4, batch_size=32, seeds=(0,), eval_epoch=2, eval_every=100)
    model_cfg = ModelConfig.for_vocab(vocab, TINY_SLICES, encoder=TINY_ENCODER)
    result = train_single(slices, [], model_cfg, cfg, vocab, seed=0)
    assert result.eval_epoch_state is not None
    final = result.model.state_dict()
    assert any(
        not torch.equal(result.eval_epoch_state[k], final[k]) for k in final
    ), "training continued past the snapshot epoch"


def test_motion_head_overfits_constant_scene(vocab):
    """A frozen scene trained to convergence predicts the constant coordinates."""
    from manigraph.demonstrations import Demonstration, Frame

    roster = (vocab.right_hand, vocab.left_hand, vocab.object_index("bowl"))
    hold = (vocab.action_index("hold"), vocab.object_index("bowl"))
    base = np.array([[0.15, 0.3, 0.1], [-0.15, 0.3, 0.1], [0.0, 0.35, 0.0]])
    frames = [Frame(frame_id=i, positions=base.copy(), right=hold, left=hold) for i in range(30)]
    demo = Demonstration("s0", "cooking", roster, frames, vocab)
    demo.compute_relations()
    cfg = SliceConfig(history=3, sample_rate=2, horizon=3, n_past=2)
    slices = slice_demonstration(demo, cfg, stride=4)
    model_cfg = ModelConfig.for_vocab(
        vocab, cfg, encoder=EncoderConfig(d_mp=16, iterations=1, ff_mult=2)
    )
    tc = TrainConfig(epochs=150, batch_size=16, seeds=(0,), eval_every=1000, lr=3e-3)
    result = train_single(slices, [], model_cfg, tc, vocab, seed=0)
    batch = batch_from_slices(slices)
    with torch.no_grad():
        bundle = result.model(batch, teacher_forcing=True)
    err = (bundle.motions - batch.motion_targets).abs().max().item()
    assert err < 0.02, f"constant-scene motion error {err}"

import math

import numpy as np
import pytest

from manigraph.encoder import EncoderConfig
from manigraph.ensemble import EnsembleBuffer, rollout, softmax_np
from manigraph.errors import ConfigError
from manigraph.model import ModelConfig, build_model
from manigraph.slices import Standardizer, fit_standardizer


def make_probs(rng, n_classes):
    return softmax_np(rng.normal(size=(2, n_classes)))


def filled_buffer(horizon=3, decay=0.1, origins=(10,), n_actions=4, n_objects=3, n_nodes=2, seed=0):
    rng = np.random.default_rng(seed)
    buf = EnsembleBuffer(horizon, decay)
    payloads = {}
    for origin in origins:
        a = softmax_np(rng.normal(size=(2, horizon, n_actions)))
        o = softmax_np(rng.normal(size=(2, horizon, n_objects)))
        c = rng.normal(size=(n_nodes, horizon, 3))
        buf.update(origin, a, o, c)
        payloads[origin] = (a, o, c)
    return buf, payloads


def test_single_prediction_passthrough():
    buf, payloads = filled_buffer(origins=(10,))
    fused = buf.query(11)
    a, o, c = payloads[10]
    assert np.allclose(fused.action_probs, a[:, 0], atol=1e-15)
    assert np.allclose(fused.coords, c[:, 0], atol=1e-15)
    assert fused.n_sources == 1


def test_two_predictions_log2_decay_weights():
    buf, payloads = filled_buffer(origins=(10, 11), decay=math.log(2))
    fused = buf.query(12)  # origin 10 covers 11..13 (slot 1), origin 11 covers 12..14 (slot 0)
    a10 = payloads[10][0][:, 1]
    a11 = payloads[11][0][:, 0]
    expected = (2 / 3) * a10 + (1 / 3) * a11
    assert np.allclose(fused.action_probs, expected, atol=1e-12)


def test_zero_decay_is_plain_mean():
    buf, payloads = filled_buffer(origins=(10, 11, 12), decay=0.0)
    fused = buf.query(13)
    stack = np.stack([payloads[10][2][:, 2], payloads[11][2][:, 1], payloads[12][2][:, 0]])
    assert np.allclose(fused.coords, stack.mean(axis=0), atol=1e-12)


def test_fused_probabilities_sum_to_one():
    buf, _ = filled_buffer(origins=(5, 6, 7), decay=0.3)
    fused = buf.query(8)
    assert np.allclose(fused.action_probs.sum(axis=-1), 1.0, atol=1e-9)
    assert np.allclose(fused.object_probs.sum(axis=-1), 1.0, atol=1e-9)


def test_query_uses_only_covering_windows():
    buf, payloads = filled_buffer(horizon=2, origins=(10, 11, 12))
    fused = buf.query(12)  # only origins 10 (slot 1) and 11 (slot 0) cover step 12
    assert fused.n_sources == 2
    assert buf.query(100) is None
    assert buf.query(10) is None  # predictions start at origin+1


def test_empty_buffer_signals_no_prediction():
    buf = EnsembleBuffer(horizon=4, decay=0.1)
    assert buf.query(3) is None


def test_prune_drops_stale_steps():
    buf, _ = filled_buffer(origins=(10,))
    buf.prune(13)
    assert buf.query(11) is None
    assert buf.query(13) is not None


def test_flicker_smoothing_depends_on_decay():
    # alternating confident predictions; strong decay pins the oldest window
    horizon, n_actions = 4, 2
    plain = EnsembleBuffer(horizon, decay=0.0)
    sticky = EnsembleBuffer(horizon, decay=5.0)
    rng = np.random.default_rng(0)
    for origin in range(8):
        cls = origin % 2
        a = np.full((2, horizon, n_actions), 1e-6)
        a[:, :, cls] = 1.0
        a /= a.sum(axis=-1, keepdims=True)
        o = softmax_np(rng.normal(size=(2, horizon, 3)))
        c = rng.normal(size=(2, horizon, 3))
        for buf in (plain, sticky):
            buf.update(origin, a, o, c)
    step = 6
    fused_plain = plain.query(step)
    fused_sticky = sticky.query(step)
    # oldest covering origin for step 6 is 2 (class 0); plain mean is ambiguous
    assert fused_sticky.actions[0] == 0
    assert not np.allclose(fused_plain.action_probs, fused_sticky.action_probs)


def test_invalid_buffer_configs():
    with pytest.raises(ConfigError):
        EnsembleBuffer(horizon=0)
    with pytest.raises(ConfigError):
        EnsembleBuffer(horizon=2, decay=-0.1)


def test_rollout_output_length_and_warmup(vocab, cooking_demos, slice_cfg):
    demo = cooking_demos[0]
    stats = fit_standardizer([demo])
    model = build_model(
        ModelConfig.for_vocab(vocab, slice_cfg, encoder=EncoderConfig(d_mp=16, ff_mult=2)), seed=0
    )
    steps = rollout(model, demo, vocab, stats, slice_cfg, decay=0.1)
    n_frames = demo.last_frame_id - demo.first_frame_id + 1
    assert len(steps) == n_frames - slice_cfg.warmup
    assert steps[0].fused is None  # nothing overlaps the very first emitted step
    assert all(s.fused is not None for s in steps[1:])
    assert steps[1].fused.coords.shape == (demo.n_objects, 3)


def test_rollout_too_short_stream_is_empty(vocab, cooking_demos, slice_cfg):
    import dataclasses

    demo = cooking_demos[0]
    short = dataclasses.replace(demo, frames=demo.frames[: slice_cfg.warmup - 2])
    model = build_model(
        ModelConfig.for_vocab(vocab, slice_cfg, encoder=EncoderConfig(d_mp=16, ff_mult=2)), seed=0
    )
    assert rollout(model, short, vocab, Standardizer.identity(), slice_cfg) == []

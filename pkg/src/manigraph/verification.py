"""End-to-end gradient verification on a tiny double-precision fixture."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .batching import GraphBatch, batch_from_slices
from .datasets import batches
from .encoder import EncoderConfig
from .model import ModelConfig, TaskGraphModel, build_model
from .nn.gradcheck import GradCheckReport, grad_check
from .slices import SliceConfig, slice_demonstration
from .synthetic import ActionStep, SubTask, SyntheticTaskSpec, generate_synthetic, vocab_for_specs
from .training import class_weights, joint_loss
from .vocab import Vocab

TINY_SLICES = SliceConfig(history=3, sample_rate=1, horizon=2, n_past=3)
TINY_ENCODER = EncoderConfig(d_mp=8, iterations=2, temporal_heads=2, ff_mult=2)


def tiny_spec(noise_std: float = 0.003) -> SyntheticTaskSpec:
    """Two hands plus two objects (N=4) with short scripted motions."""
    right = (
        SubTask((ActionStep("approach", "whisk"), ActionStep("lift", "whisk"))),
        SubTask((ActionStep("stir", "whisk"), ActionStep("place", "whisk"))),
    )
    left = (
        SubTask((ActionStep("approach", "bowl"), ActionStep("lift", "bowl"))),
        SubTask((ActionStep("hold", "bowl"), ActionStep("place", "bowl"))),
    )
    durations = (
        ("approach", (3, 5)),
        ("lift", (3, 4)),
        ("stir", (4, 6)),
        ("hold", (4, 6)),
        ("place", (3, 4)),
    )
    return SyntheticTaskSpec(
        name="tiny",
        fixed_roles=(("whisk", "whisk"), ("bowl", "bowl")),
        right_script=right,
        left_script=left,
        durations=durations,
        noise_std=noise_std,
        lead_idle=(2, 4),
    )


@dataclass
class TinyFixture:
    model: TaskGraphModel
    batch: GraphBatch
    vocab: Vocab
    action_weights: torch.Tensor
    object_weights: torch.Tensor


def tiny_fixture(seed: int = 0, batch_size: int = 6, dtype: torch.dtype = torch.float64) -> TinyFixture:
    spec = tiny_spec()
    vocab = vocab_for_specs([spec])
    demos = generate_synthetic(spec, vocab, subjects=1, takes=2, seed=seed)
    slices = [s for d in demos for s in slice_demonstration(d, TINY_SLICES)]
    chosen = batches(slices, batch_size, seed)[0]
    batch = batch_from_slices(chosen, dtype=dtype)
    model_cfg = ModelConfig.for_vocab(vocab, TINY_SLICES, encoder=TINY_ENCODER)
    model = build_model(model_cfg, seed=seed)
    if dtype == torch.float64:
        model.double()
    aw, ow = class_weights(slices, vocab)
    return TinyFixture(
        model=model,
        batch=batch,
        vocab=vocab,
        action_weights=aw.to(dtype),
        object_weights=ow.to(dtype),
    )


def full_model_grad_check(
    rel_tol: float = 1e-3,
    n_samples: int = 200,
    seed: int = 2,
    beta_mse: float = 1000.0,
) -> GradCheckReport:
    """Analytic vs. finite-difference gradients of the full joint loss.

    The default seed keeps every probed coordinate away from LeakyReLU kinks:
    a central difference at step 1e-5 straddling a kink reports a biased slope
    even when the analytic gradient is exact (shrinking the step makes the
    estimate converge to the analytic value).
    """
    fixture = tiny_fixture(seed=seed)

    def loss_fn() -> torch.Tensor:
        bundle = fixture.model(fixture.batch, teacher_forcing=True)
        total, _ = joint_loss(
            bundle, fixture.batch, fixture.action_weights, fixture.object_weights, beta_mse
        )
        return total

    return grad_check(
        loss_fn,
        list(fixture.model.named_parameters()),
        n_samples=n_samples,
        rel_tol=rel_tol,
        seed=seed,
    )

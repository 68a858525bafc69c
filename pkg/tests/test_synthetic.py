import numpy as np
import pytest

from manigraph.errors import ConfigError
from manigraph.synthetic import (
    ActionStep,
    SubTask,
    SyntheticTaskSpec,
    cooking_spec,
    default_vocab,
    generate_synthetic,
    insert_spec,
    minimum_jerk,
    takeout_spec,
    vocab_for_specs,
)
from manigraph.vocab import LEFT, RIGHT


def test_minimum_jerk_boundary_conditions():
    start, goal = np.array([0.0, 0.0, 0.0]), np.array([0.3, -0.1, 0.2])
    assert np.allclose(minimum_jerk(start, goal, 0.0), start)
    assert np.allclose(minimum_jerk(start, goal, 1.0), goal)
    # velocity ~ 0 at both ends
    eps = 1e-4
    v0 = (minimum_jerk(start, goal, eps) - start) / eps
    v1 = (goal - minimum_jerk(start, goal, 1 - eps)) / eps
    assert np.linalg.norm(v0) < 1e-2 and np.linalg.norm(v1) < 1e-2


def test_cooking_action_inventory(vocab):
    demos = generate_synthetic(cooking_spec(), vocab, subjects=1, takes=1, seed=3)
    seen = set()
    for fr in demos[0].frames:
        seen.add(vocab.action_labels[fr.right[0]])
        seen.add(vocab.action_labels[fr.left[0]])
    assert {"approach", "lift", "stir", "place", "hold", "pour", "retreat", "idle"} <= seen


def test_generation_deterministic_given_seed(vocab):
    spec = cooking_spec(noise_std=0.0)
    a = generate_synthetic(spec, vocab, subjects=1, takes=2, seed=11)
    b = generate_synthetic(spec, vocab, subjects=1, takes=2, seed=11)
    for da, db in zip(a, b):
        assert len(da.frames) == len(db.frames)
        assert np.array_equal(da.positions_array(), db.positions_array())
        assert all(fa.right == fb.right and fa.left == fb.left for fa, fb in zip(da.frames, db.frames))


def test_insert_shuffling_produces_distinct_sequences(vocab):
    demos = generate_synthetic(insert_spec(item_count=(6, 6)), vocab, subjects=1, takes=10, seed=0)
    orders = set()
    for demo in demos:
        lifted = []
        for fr in demo.frames:
            if vocab.action_labels[fr.right[0]] == "lift" and (not lifted or lifted[-1] != fr.right[1]):
                lifted.append(fr.right[1])
        orders.add(tuple(lifted))
        assert demo.n_objects == 2 + 1 + 6  # hands + bowl + items
    assert len(orders) >= 2


def test_takeout_items_start_at_bowl(vocab):
    demos = generate_synthetic(takeout_spec(item_count=(5, 5), noise_std=0.0), vocab, 1, 1, seed=4)
    demo = demos[0]
    bowl = demo.node_index(vocab.object_index("bowl"))
    first = demo.frames[0].positions
    for node, cls in enumerate(demo.roster):
        name = vocab.object_classes[cls]
        if name.startswith(("cube", "ball", "cylinder", "block")):
            assert np.linalg.norm(first[node][:2] - first[bowl][:2]) < 0.06


def test_grasped_object_moves_with_hand(vocab):
    demos = generate_synthetic(cooking_spec(noise_std=0.0), vocab, 1, 1, seed=5)
    demo = demos[0]
    whisk = demo.node_index(vocab.object_index("whisk"))
    stir = vocab.action_index("stir")
    stir_frames = [fr for fr in demo.frames if fr.right[0] == stir]
    assert len(stir_frames) > 10
    for fr in stir_frames:
        assert np.linalg.norm(fr.positions[RIGHT] - fr.positions[whisk]) < 0.05
    moved = max(np.linalg.norm(fr.positions[whisk] - stir_frames[0].positions[whisk]) for fr in stir_frames)
    assert moved > 0.02


def test_every_frame_labeled_and_roster_constant(vocab, cooking_demos):
    for demo in cooking_demos:
        n = demo.n_objects
        for fr in demo.frames:
            assert fr.positions.shape == (n, 3)
            assert 0 <= fr.right[0] < vocab.n_actions
            assert 0 <= fr.left[1] < vocab.n_objects
            assert fr.relations is not None


def test_bad_counts_rejected(vocab):
    with pytest.raises(ConfigError):
        generate_synthetic(cooking_spec(), vocab, subjects=0, takes=1, seed=0)


def test_unresolvable_role_is_spec_error():
    spec = SyntheticTaskSpec(
        name="broken",
        fixed_roles=(("bowl", "bowl"),),
        right_script=(SubTask((ActionStep("approach", "ghost"),)),),
        left_script=(SubTask((ActionStep("hold", "bowl"),)),),
        durations=(("approach", (3, 5)), ("hold", (3, 5))),
    )
    vocab = vocab_for_specs([spec])
    with pytest.raises(ConfigError):
        generate_synthetic(spec, vocab, 1, 1, seed=0)


def test_duration_invariants():
    with pytest.raises(ConfigError):
        SyntheticTaskSpec(
            name="bad",
            fixed_roles=(),
            right_script=(),
            left_script=(),
            durations=(("approach", (1, 5)),),
        )


def test_default_vocab_reserved_labels():
    v = default_vocab()
    assert v.action_labels[v.idle_action] == "idle"
    assert v.action_labels[v.pad_action] == "pad"
    assert v.object_classes[v.none_object] == "none"
    assert v.object_classes[v.pad_object] == "pad"
    assert {"cooking", "insert", "takeout"} == set(v.task_labels)

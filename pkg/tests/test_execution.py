import numpy as np
import pytest

from manigraph.errors import ConfigError
from manigraph.execution import (
    Decision,
    ExecutionState,
    LesionedPredictor,
    OraclePredictor,
    ScriptedScene,
    default_rules,
    select_action,
    simulate_execution,
)
from manigraph.synthetic import cooking_spec
from manigraph.vocab import LEFT, RIGHT


@pytest.fixture()
def scene(vocab):
    return ScriptedScene(cooking_spec(), vocab, np.random.default_rng(0))


def test_busy_hand_drops_regardless_of_prediction(vocab):
    state = ExecutionState()
    state.hands[RIGHT].busy = True
    rules = default_rules()
    d = select_action(RIGHT, vocab.action_index("approach"), vocab.object_index("whisk"), state, rules, vocab)
    assert d is Decision.DROP
    assert state.hands[RIGHT].drops == 1
    assert state.hands[RIGHT].blocks == 0


def test_place_without_holding_is_blocked(vocab):
    state = ExecutionState()
    rules = default_rules()
    d = select_action(RIGHT, vocab.action_index("place"), vocab.object_index("whisk"), state, rules, vocab)
    assert d is Decision.BLOCK
    assert state.hands[RIGHT].blocks == 1
    assert state.holding_class[RIGHT] is None  # blocked decisions never mutate holding
    assert not state.hands[RIGHT].busy


def test_trigger_marks_hand_busy_and_counts(vocab):
    state = ExecutionState()
    rules = default_rules()
    d = select_action(LEFT, vocab.action_index("approach"), vocab.object_index("bowl"), state, rules, vocab)
    assert d is Decision.TRIGGER
    assert state.hands[LEFT].busy
    assert state.hands[LEFT].triggers == 1
    # second proposal on the now-busy hand drops
    d = select_action(LEFT, vocab.action_index("lift"), vocab.object_index("bowl"), state, rules, vocab)
    assert d is Decision.DROP


def test_idle_proposals_are_noops(vocab):
    state = ExecutionState()
    d = select_action(RIGHT, vocab.idle_action, vocab.none_object, state, default_rules(), vocab)
    assert d is Decision.IDLE
    assert state.hands[RIGHT].triggers == 0
    assert not state.hands[RIGHT].busy


def test_unknown_action_index_rejected(vocab):
    with pytest.raises(ConfigError):
        select_action(RIGHT, vocab.n_actions + 3, 0, ExecutionState(), default_rules(), vocab)


def test_unknown_rule_label_rejected(vocab):
    rules = default_rules()
    rules["fly"] = lambda s, h, o: True
    with pytest.raises(ConfigError):
        simulate_execution(OraclePredictor, cooking_spec(), vocab, rules=rules, trials=1)


def test_intervention_rate_formula(vocab):
    state = ExecutionState()
    rules = default_rules()
    select_action(RIGHT, vocab.action_index("place"), vocab.object_index("whisk"), state, rules, vocab)
    select_action(RIGHT, vocab.action_index("approach"), vocab.object_index("whisk"), state, rules, vocab)
    hs = state.hands[RIGHT]
    assert hs.blocks == 1 and hs.triggers == 1
    assert hs.intervention_rate() == pytest.approx(0.5)


def test_scene_reference_sequences_cover_script(vocab, scene):
    ref_r = scene.reference[RIGHT]
    names = [vocab.action_labels[a] for a, _ in ref_r]
    assert names == ["approach", "lift", "stir", "place", "retreat"]
    ref_l = scene.reference[LEFT]
    assert len(ref_l) == 13


def test_oracle_execution_succeeds(vocab):
    report = simulate_execution(OraclePredictor, cooking_spec(), vocab, trials=3, seed=1)
    assert report.success_rate == 1.0
    assert report.intervention_rate(RIGHT) == 0.0
    assert report.intervention_rate(LEFT) == 0.0
    assert report.sequence_accuracy(RIGHT) == 1.0
    for trial in report.trials:
        assert trial.executed[RIGHT] == trial.reference[RIGHT]


def test_varied_placements_across_trials(vocab):
    scenes = [ScriptedScene(cooking_spec(), vocab, np.random.default_rng([9, t])) for t in range(3)]
    first_positions = [s.observation()[3] for s in scenes]
    assert not np.allclose(first_positions[0], first_positions[1])


def test_lesioned_predictor_fails_trial(vocab):
    def lesioned(scene):
        return LesionedPredictor(scene, hand=LEFT, index=len(scene.reference[LEFT]) - 2)

    report = simulate_execution(lesioned, cooking_spec(), vocab, trials=2, seed=3)
    assert report.success_rate == 0.0
    for trial in report.trials:
        assert len(trial.executed[LEFT]) == len(trial.reference[LEFT]) - 1
        assert trial.executed[RIGHT] == trial.reference[RIGHT]
        assert trial.sequence_accuracy(LEFT) < 1.0


def test_scene_kinematics_move_held_objects(vocab, scene):
    state = ExecutionState()
    rules = default_rules()
    # approach then lift the whisk with the right hand
    whisk_cls = vocab.object_index("whisk")
    whisk_node = scene.node_for_class(whisk_cls)
    for action in ("approach", "lift"):
        d = select_action(RIGHT, vocab.action_index(action), whisk_cls, state, rules, vocab)
        assert d is Decision.TRIGGER
        scene.begin(RIGHT, vocab.action_index(action), whisk_cls)
        for _ in range(200):
            scene.advance(state)
            if not state.hands[RIGHT].busy:
                break
    assert state.holding_class[RIGHT] == whisk_cls
    assert np.linalg.norm(scene.pos[RIGHT] - scene.pos[whisk_node]) < 0.05
    assert scene.pos[whisk_node][2] > 0.05  # lifted off the table


def test_step_cap_records_failure(vocab):
    class Stubborn:
        """Always proposes a blocked action; the trial must hit the cap."""

        def __init__(self, scene):
            self.pair = (vocab.action_index("place"), vocab.object_index("whisk"))

        def propose(self, scene, state):
            return {RIGHT: self.pair, LEFT: None}

    report = simulate_execution(Stubborn, cooking_spec(), vocab, trials=1, seed=0, step_cap=50)
    assert report.trials[0].steps == 50
    assert not report.trials[0].success
    assert report.trials[0].blocks[RIGHT] > 0

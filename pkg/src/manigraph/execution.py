"""Online action selection with precondition gating, plus a simulated executor.

Predicted (action, object) pairs trigger primitives only on a free hand;
proposals on a busy hand are dropped, and proposals whose precondition fails
are blocked (counted as interventions). The scripted scene is a kinematic
stub: triggered primitives move the hand (and any held object) and advance
the symbolic state when they finish.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
import torch

from .batching import batch_from_slices
from .demonstrations import Demonstration, Frame
from .ensemble import EnsembleBuffer
from .errors import ConfigError
from .relations import RelationThresholds, extract_relations
from .slices import GraphSlice, SliceBuilder, SliceConfig, Standardizer
from .synthetic import (
    GRASP_ACTIONS,
    RELEASE_ACTIONS,
    REST_POSITIONS,
    SyntheticTaskSpec,
    _expand_script,
    _sample_placements,
    _step_position,
    _HandState as _KinematicState,
    _TimedStep,
)
from .vocab import IDLE_ACTION, LEFT, LEFT_HAND, PAD_ACTION, RIGHT, RIGHT_HAND, Vocab


class Decision(enum.Enum):
    TRIGGER = "trigger"
    DROP = "drop"
    BLOCK = "block"
    IDLE = "idle"


PreconditionRule = Callable[["ExecutionState", int, int], bool]


@dataclass
class HandState:
    holding: int | None = None  # roster node index of the held object
    busy: bool = False
    current: tuple[int, int] | None = None  # (action, object-class) being executed
    executed: list[tuple[int, int]] = field(default_factory=list)
    triggers: int = 0
    drops: int = 0
    blocks: int = 0

    @property
    def interventions(self) -> int:
        return self.blocks

    def intervention_rate(self) -> float:
        total = self.blocks + self.triggers
        return self.blocks / total if total else 0.0


@dataclass
class ExecutionState:
    hands: dict[int, HandState] = field(default_factory=lambda: {RIGHT: HandState(), LEFT: HandState()})
    last_completed: dict[int, tuple[int, int] | None] = field(
        default_factory=lambda: {RIGHT: None, LEFT: None}
    )
    contacts: set[tuple[int, int]] = field(default_factory=set)
    holding_class: dict[int, int | None] = field(default_factory=lambda: {RIGHT: None, LEFT: None})


def default_rules() -> dict[str, PreconditionRule]:
    """Reach actions need a free hand; in-hand actions need the named object held."""

    def free(state: ExecutionState, hand: int, obj: int) -> bool:
        return state.holding_class[hand] is None

    def holding_named(state: ExecutionState, hand: int, obj: int) -> bool:
        return state.holding_class[hand] == obj

    def always(state: ExecutionState, hand: int, obj: int) -> bool:
        return True

    return {
        "approach": free,
        "lift": free,
        "place": holding_named,
        "pour": holding_named,
        "stir": holding_named,
        "hold": holding_named,
        "retreat": always,
    }


def select_action(
    hand: int,
    action: int,
    obj: int,
    state: ExecutionState,
    rules: dict[str, PreconditionRule],
    vocab: Vocab,
) -> Decision:
    """Gate one per-hand proposal; triggering marks the hand busy."""
    if not 0 <= action < vocab.n_actions:
        raise ConfigError(f"action index {action} outside vocabulary")
    name = vocab.action_labels[action]
    if name in (IDLE_ACTION, PAD_ACTION):
        return Decision.IDLE
    hs = state.hands[hand]
    if hs.busy:
        hs.drops += 1
        return Decision.DROP
    rule = rules.get(name)
    if rule is not None and not rule(state, hand, obj):
        hs.blocks += 1
        return Decision.BLOCK
    hs.triggers += 1
    hs.busy = True
    hs.current = (action, obj)
    return Decision.TRIGGER


# ---------------------------------------------------------------------------
# Scripted kinematic scene


class ScriptedScene:
    """Executes triggered primitives kinematically and exposes observations.

    The per-hand reference sequences come from the task script (shuffle
    groups resolved per trial); object placements vary with the trial rng.
    """

    def __init__(
        self,
        spec: SyntheticTaskSpec,
        vocab: Vocab,
        rng: np.random.Generator,
        thresholds: RelationThresholds = RelationThresholds(),
    ):
        self.spec = spec
        self.vocab = vocab
        self.rng = rng
        self.thresholds = thresholds
        lo, hi = spec.item_count
        n_items = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
        item_order = rng.permutation(len(spec.item_classes))[:n_items]
        self.items = [spec.item_classes[i] for i in item_order]
        roles = [RIGHT_HAND, LEFT_HAND] + [r for r, _ in spec.fixed_roles] + self.items
        classes = [RIGHT_HAND, LEFT_HAND] + [c for _, c in spec.fixed_roles] + self.items
        self.role_to_node = {role: i for i, role in enumerate(roles)}
        self.roster = tuple(vocab.object_index(c) for c in classes)

        spots = _sample_placements(len(roles) - 2 + 4, rng, np.zeros(3))
        self.pos = np.zeros((len(roles), 3))
        self.pos[RIGHT] = REST_POSITIONS[RIGHT].copy()
        self.pos[LEFT] = REST_POSITIONS[LEFT].copy()
        for i in range(2, len(roles)):
            self.pos[i] = spots[i - 2]
        self.free_spots = spots[len(roles) - 2 :]
        if spec.items_start_at is not None:
            anchor = self.pos[self.role_to_node[spec.items_start_at]]
            for item in self.items:
                jitter = np.array([rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03), 0.0])
                self.pos[self.role_to_node[item]] = anchor + jitter

        self._steps: dict[int, list[tuple[str, int, int | None]]] = {}
        for hand, script in ((RIGHT, spec.right_script), (LEFT, spec.left_script)):
            plan = _expand_script(script, self.items, rng)
            self._steps[hand] = [
                (
                    s.action,
                    self.role_to_node[s.role] if s.role in self.role_to_node else self._missing(s.role),
                    self.role_to_node[s.target_role] if s.target_role else None,
                )
                for s in plan
            ]
        self.reference: dict[int, list[tuple[int, int]]] = {
            hand: [(vocab.action_index(a), self.roster[node]) for a, node, _ in steps]
            for hand, steps in self._steps.items()
        }
        self._kinematic = {RIGHT: _KinematicState([]), LEFT: _KinematicState([])}
        self.step_index = 0

    def _missing(self, role: str) -> int:
        raise ConfigError(f"unresolvable object role {role!r} in task {self.spec.name!r}")

    def node_for_class(self, object_class: int) -> int | None:
        for i, cls in enumerate(self.roster):
            if cls == object_class:
                return i
        return None

    def planned_step(self, hand: int, index: int) -> tuple[str, int, int | None] | None:
        steps = self._steps[hand]
        return steps[index] if index < len(steps) else None

    def begin(self, hand: int, action: int, object_class: int) -> None:
        """Start a triggered primitive on the (free) hand."""
        name = self.vocab.action_labels[action]
        node = self.node_for_class(object_class)
        if node is None:
            node = hand  # unknown object in this scene: gesture in place
        state = self._kinematic[hand]
        lo, hi = self.spec.duration_range(name)
        duration = int(self.rng.integers(lo, hi + 1))
        # match this primitive against the plan to recover its place target
        target = None
        for planned_action, planned_node, planned_target in self._steps[hand]:
            if planned_action == name and planned_node == node:
                target = planned_target
                break
        step = _TimedStep(name, node, target, duration)
        state.step = step
        state.progress = 0
        state.start_pos = self.pos[hand].copy()
        if name in GRASP_ACTIONS:
            state.holding = node
        if name == "approach":
            state.goal_pos = self.pos[node] + np.array([0.0, 0.0, 0.02])
        elif name == "lift":
            state.goal_pos = self.pos[hand] + np.array([0.0, 0.0, 0.12])
        elif name == "place":
            if target is not None:
                base = self.pos[target] + np.array([0.0, 0.0, 0.04])
            else:
                base = self.free_spots[int(self.rng.integers(len(self.free_spots)))]
            state.goal_pos = base
        elif name == "retreat":
            state.goal_pos = REST_POSITIONS[hand].copy()
        else:
            state.goal_pos = state.start_pos.copy()

    def advance(self, state: ExecutionState) -> dict[int, tuple[int, int] | None]:
        """One kinematic step; returns primitives that finished this step."""
        finished: dict[int, tuple[int, int] | None] = {RIGHT: None, LEFT: None}
        for hand in (RIGHT, LEFT):
            kin = self._kinematic[hand]
            if kin.step is None:
                continue
            step = kin.step
            kin.progress += 1
            tau = min(kin.progress / step.duration, 1.0)
            self.pos[hand] = _step_position(step, kin, tau)
            if kin.holding is not None:
                self.pos[kin.holding] = self.pos[hand] + np.array([0.0, 0.0, -0.02])
            if kin.progress >= step.duration:
                if step.action in RELEASE_ACTIONS:
                    kin.holding = None
                pair = (self.vocab.action_index(step.action), self.roster[step.node])
                hs = state.hands[hand]
                hs.executed.append(pair)
                hs.busy = False
                hs.current = None
                state.last_completed[hand] = pair
                state.holding_class[hand] = (
                    self.roster[kin.holding] if kin.holding is not None else None
                )
                kin.step = None
                finished[hand] = pair
        state.contacts = self._contact_set()
        self.step_index += 1
        return finished

    def _contact_set(self, threshold: float = 0.05) -> set[tuple[int, int]]:
        """Object-class pairs currently within contact distance."""
        contacts = set()
        n = len(self.roster)
        for i in range(n):
            for j in range(i + 1, n):
                if np.linalg.norm(self.pos[i] - self.pos[j]) < threshold:
                    contacts.add((self.roster[i], self.roster[j]))
                    contacts.add((self.roster[j], self.roster[i]))
        return contacts

    def observation(self) -> np.ndarray:
        return self.pos.copy()

    def current_pairs(self, state: ExecutionState) -> np.ndarray:
        idle = (self.vocab.idle_action, self.vocab.none_object)
        pairs = []
        for hand in (RIGHT, LEFT):
            current = state.hands[hand].current
            pairs.append(current if current is not None else idle)
        return np.asarray(pairs, dtype=np.int64)


# ---------------------------------------------------------------------------
# Predictors


class Predictor(Protocol):
    def propose(self, scene: ScriptedScene, state: ExecutionState) -> dict[int, tuple[int, int] | None]:
        ...


class OraclePredictor:
    """Replays the scene's reference sequence: an upper bound on selection quality."""

    def __init__(self, scene: ScriptedScene):
        self.reference = {hand: list(seq) for hand, seq in scene.reference.items()}

    def propose(self, scene: ScriptedScene, state: ExecutionState) -> dict[int, tuple[int, int] | None]:
        out: dict[int, tuple[int, int] | None] = {}
        for hand in (RIGHT, LEFT):
            hs = state.hands[hand]
            if hs.busy:
                out[hand] = None
                continue
            idx = len(hs.executed)
            seq = self.reference[hand]
            out[hand] = seq[idx] if idx < len(seq) else None
        return out


class LesionedPredictor(OraclePredictor):
    """Oracle minus one reference step: reproduces a missed-action failure."""

    def __init__(self, scene: ScriptedScene, hand: int, index: int):
        super().__init__(scene)
        del self.reference[hand][index]


class ModelPredictor:
    """Streams scene observations through a trained model with ensembling."""

    def __init__(
        self,
        model,
        vocab: Vocab,
        standardizer: Standardizer,
        slice_cfg: SliceConfig,
        task_id: str,
        roster: tuple[int, ...],
        decay: float = 0.1,
        thresholds: RelationThresholds = RelationThresholds(),
    ):
        self.model = model
        self.vocab = vocab
        self.slicer = StreamSlicer(roster, vocab, task_id, slice_cfg, standardizer, thresholds)
        self.buffer = EnsembleBuffer(slice_cfg.horizon, decay)

    def observe(self, positions: np.ndarray, current_pairs: np.ndarray) -> None:
        graph_slice = self.slicer.push(positions, current_pairs)
        if graph_slice is None:
            return
        with torch.no_grad():
            bundle = self.model(batch_from_slices([graph_slice]), teacher_forcing=False)
        self.buffer.update_bundle(self.slicer.t, bundle)
        self.buffer.prune(self.slicer.t - self.buffer.horizon)

    def propose(self, scene: ScriptedScene, state: ExecutionState) -> dict[int, tuple[int, int] | None]:
        self.observe(scene.observation(), scene.current_pairs(state))
        fused = self.buffer.query(self.slicer.t)
        if fused is None:
            return {RIGHT: None, LEFT: None}
        return {
            hand: (int(fused.actions[hand]), int(fused.objects[hand])) for hand in (RIGHT, LEFT)
        }


class StreamSlicer:
    """Incremental slice construction over a live frame stream.

    Relations are computed on raw coordinates; the model sees standardized
    positions. Returns None until the warm-up of H*S frames has passed.
    """

    def __init__(
        self,
        roster: tuple[int, ...],
        vocab: Vocab,
        task_id: str,
        cfg: SliceConfig,
        standardizer: Standardizer,
        thresholds: RelationThresholds = RelationThresholds(),
    ):
        self.roster = roster
        self.vocab = vocab
        self.task_id = task_id
        self.cfg = cfg
        self.standardizer = standardizer
        self.thresholds = thresholds
        self.frames: list[Frame] = []
        self.prev_raw: np.ndarray | None = None
        self.t = -1

    def push(self, raw_positions: np.ndarray, current_pairs: np.ndarray) -> GraphSlice | None:
        self.t += 1
        relations = extract_relations(raw_positions, self.prev_raw, self.thresholds)
        self.prev_raw = np.asarray(raw_positions, dtype=np.float64).copy()
        self.frames.append(
            Frame(
                frame_id=self.t,
                positions=self.standardizer.standardize(raw_positions),
                right=(int(current_pairs[RIGHT, 0]), int(current_pairs[RIGHT, 1])),
                left=(int(current_pairs[LEFT, 0]), int(current_pairs[LEFT, 1])),
                relations=relations,
            )
        )
        if self.t < self.cfg.warmup:
            return None
        demo = Demonstration(
            subject_id="stream",
            task_id=self.task_id,
            roster=self.roster,
            frames=self.frames,
            vocab=self.vocab,
        )
        return SliceBuilder(demo, self.cfg).build(self.t, with_targets=False)


# ---------------------------------------------------------------------------
# Trial harness


@dataclass
class TrialResult:
    success: bool
    steps: int
    executed: dict[int, list[tuple[int, int]]]
    reference: dict[int, list[tuple[int, int]]]
    triggers: dict[int, int]
    drops: dict[int, int]
    blocks: dict[int, int]

    def sequence_accuracy(self, hand: int) -> float:
        ref, got = self.reference[hand], self.executed[hand]
        if not ref:
            return 1.0
        matches = sum(1 for a, b in zip(ref, got) if a == b)
        return matches / max(len(ref), len(got))


@dataclass
class SimulationReport:
    trials: list[TrialResult]

    @property
    def success_rate(self) -> float:
        return sum(t.success for t in self.trials) / len(self.trials)

    def intervention_rate(self, hand: int) -> float:
        blocks = sum(t.blocks[hand] for t in self.trials)
        triggers = sum(t.triggers[hand] for t in self.trials)
        return blocks / (blocks + triggers) if (blocks + triggers) else 0.0

    def sequence_accuracy(self, hand: int) -> float:
        return sum(t.sequence_accuracy(hand) for t in self.trials) / len(self.trials)

    def to_dict(self) -> dict:
        return {
            "trials": [
                {
                    "success": t.success,
                    "steps": t.steps,
                    "triggers": {"right": t.triggers[RIGHT], "left": t.triggers[LEFT]},
                    "drops": {"right": t.drops[RIGHT], "left": t.drops[LEFT]},
                    "blocks": {"right": t.blocks[RIGHT], "left": t.blocks[LEFT]},
                    "sequence_accuracy": {
                        "right": t.sequence_accuracy(RIGHT),
                        "left": t.sequence_accuracy(LEFT),
                    },
                }
                for t in self.trials
            ],
            "success_rate": self.success_rate,
            "intervention_rate": {
                "right": self.intervention_rate(RIGHT),
                "left": self.intervention_rate(LEFT),
            },
            "sequence_accuracy": {
                "right": self.sequence_accuracy(RIGHT),
                "left": self.sequence_accuracy(LEFT),
            },
        }


def simulate_execution(
    predictor_factory: Callable[[ScriptedScene], Predictor],
    spec: SyntheticTaskSpec,
    vocab: Vocab,
    rules: dict[str, PreconditionRule] | None = None,
    trials: int = 10,
    seed: int = 0,
    step_cap: int = 5000,
) -> SimulationReport:
    """Run `trials` episodes with varied object placements.

    A trial succeeds iff both executed per-hand primitive sequences equal the
    reference sequences within the step cap.
    """
    if rules is None:
        rules = default_rules()
    for name in rules:
        if name not in vocab.action_labels:
            raise ConfigError(f"precondition rule for unknown action {name!r}")
    results: list[TrialResult] = []
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        scene = ScriptedScene(spec, vocab, rng)
        state = ExecutionState()
        predictor = predictor_factory(scene)
        steps = 0
        while steps < step_cap:
            steps += 1
            scene.advance(state)
            proposals = predictor.propose(scene, state)
            for hand in (RIGHT, LEFT):
                prop = proposals.get(hand)
                if prop is None:
                    continue
                decision = select_action(hand, prop[0], prop[1], state, rules, vocab)
                if decision is Decision.TRIGGER:
                    scene.begin(hand, prop[0], prop[1])
            idle = all(
                not state.hands[h].busy and proposals.get(h) is None for h in (RIGHT, LEFT)
            )
            if idle and steps > 1:
                break
        executed = {h: list(state.hands[h].executed) for h in (RIGHT, LEFT)}
        success = (
            steps < step_cap
            and executed[RIGHT] == scene.reference[RIGHT]
            and executed[LEFT] == scene.reference[LEFT]
        )
        results.append(
            TrialResult(
                success=success,
                steps=steps,
                executed=executed,
                reference={h: list(scene.reference[h]) for h in (RIGHT, LEFT)},
                triggers={h: state.hands[h].triggers for h in (RIGHT, LEFT)},
                drops={h: state.hands[h].drops for h in (RIGHT, LEFT)},
                blocks={h: state.hands[h].blocks for h in (RIGHT, LEFT)},
            )
        )
    return SimulationReport(trials=results)

"""Scripted synthetic demonstrations for desk-scale experiments.

Each take samples object placements and (optionally) shuffles sub-task
order, then synthesizes hand motion as minimum-jerk point-to-point segments,
moving grasped objects with the hand and labeling every frame with the
per-hand (action, object) pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .demonstrations import Demonstration, Frame
from .errors import ConfigError
from .relations import RelationThresholds
from .vocab import (
    IDLE_ACTION,
    LEFT,
    LEFT_HAND,
    NONE_OBJECT,
    PAD_ACTION,
    PAD_OBJECT,
    RIGHT,
    RIGHT_HAND,
    Vocab,
)

LIFT_HEIGHT = 0.12
STIR_RADIUS = 0.04
STIR_CYCLES = 2.0
POUR_DIP = 0.03
GRASP_OFFSET = np.array([0.0, 0.0, -0.02])
REST_POSITIONS = {
    RIGHT: np.array([0.22, 0.08, 0.12]),
    LEFT: np.array([-0.22, 0.08, 0.12]),
}
WORKSPACE = ((-0.32, 0.32), (0.15, 0.55))  # x and y ranges; objects rest at z=0
MIN_SEPARATION = 0.10

GRASP_ACTIONS = frozenset({"lift"})
RELEASE_ACTIONS = frozenset({"place"})


def minimum_jerk(start: np.ndarray, goal: np.ndarray, tau: float) -> np.ndarray:
    """Point on the minimum-jerk path from start to goal at phase tau in [0, 1]."""
    s = 10 * tau**3 - 15 * tau**4 + 6 * tau**5
    return start + (goal - start) * s


@dataclass(frozen=True)
class ActionStep:
    action: str
    role: str
    target_role: str | None = None  # destination role for `place`; None = keep a sampled spot


@dataclass(frozen=True)
class SubTask:
    steps: tuple[ActionStep, ...]
    group: int | None = None  # sub-tasks sharing a group id are shuffled per take
    foreach_item: bool = False  # replicate per sampled item; "$item" binds per copy


@dataclass(frozen=True)
class SubjectStyle:
    offset: np.ndarray  # workspace translation, meters
    speed: float  # >1 = faster (shorter durations)


@dataclass(frozen=True)
class SyntheticTaskSpec:
    name: str
    fixed_roles: tuple[tuple[str, str], ...]  # (role, object class)
    right_script: tuple[SubTask, ...]
    left_script: tuple[SubTask, ...]
    durations: tuple[tuple[str, tuple[int, int]], ...]  # frames per action
    item_classes: tuple[str, ...] = ()
    item_count: tuple[int, int] = (0, 0)
    items_start_at: str | None = None  # role whose position seeds item placement
    noise_std: float = 0.002
    lead_idle: tuple[int, int] = (5, 15)

    def __post_init__(self) -> None:
        for action, (lo, hi) in self.durations:
            if lo < 2 or hi < lo:
                raise ConfigError(f"duration range for {action!r} must be >= 2 frames")
        lo, hi = self.item_count
        if lo < 0 or hi < lo or hi > len(self.item_classes):
            raise ConfigError("item_count range incompatible with item_classes")
        groups: dict[int, int] = {}
        for sub in self.right_script + self.left_script:
            if sub.group is not None:
                groups[sub.group] = groups.get(sub.group, 0) + 1

    def duration_range(self, action: str) -> tuple[int, int]:
        for name, rng in self.durations:
            if name == action:
                return rng
        raise ConfigError(f"no duration range for action {action!r}")

    def action_names(self) -> set[str]:
        return {s.action for sub in self.right_script + self.left_script for s in sub.steps}

    def object_class_names(self) -> set[str]:
        return {cls for _, cls in self.fixed_roles} | set(self.item_classes)


def vocab_for_specs(specs: list[SyntheticTaskSpec]) -> Vocab:
    """Shared vocabulary covering every spec, reserved labels first."""
    objects: list[str] = [RIGHT_HAND, LEFT_HAND, NONE_OBJECT, PAD_OBJECT]
    actions: list[str] = [IDLE_ACTION, PAD_ACTION]
    objects += sorted({c for s in specs for c in s.object_class_names()} - set(objects))
    actions += sorted({a for s in specs for a in s.action_names()} - set(actions))
    tasks = sorted({s.name for s in specs})
    return Vocab(tuple(objects), tuple(actions), tuple(tasks))


@dataclass
class _TimedStep:
    action: str
    node: int  # roster index of the acted-on object
    target: int | None  # roster index place moves the object to, if any
    duration: int


@dataclass
class _HandState:
    queue: list[_TimedStep]
    holding: int | None = None
    step: _TimedStep | None = None
    progress: int = 0
    start_pos: np.ndarray | None = None
    goal_pos: np.ndarray | None = None
    executed: list[_TimedStep] = field(default_factory=list)


def _expand_script(
    script: tuple[SubTask, ...],
    items: list[str],
    rng: np.random.Generator,
) -> list[ActionStep]:
    """Replicate foreach sub-tasks per item, then shuffle within groups."""
    expanded: list[SubTask] = []
    for sub in script:
        if sub.foreach_item:
            for item in items:
                steps = tuple(
                    ActionStep(
                        s.action,
                        item if s.role == "$item" else s.role,
                        item if s.target_role == "$item" else s.target_role,
                    )
                    for s in sub.steps
                )
                expanded.append(SubTask(steps, group=sub.group))
        else:
            expanded.append(sub)
    order = np.arange(len(expanded))
    groups: dict[int, list[int]] = {}
    for i, sub in enumerate(expanded):
        if sub.group is not None:
            groups.setdefault(sub.group, []).append(i)
    for members in groups.values():
        perm = rng.permutation(len(members))
        reordered = [order[members[j]] for j in perm]
        for slot, value in zip(members, reordered):
            order[slot] = value
    return [s for i in order for s in expanded[i].steps]


def _sample_placements(
    n_spots: int, rng: np.random.Generator, offset: np.ndarray
) -> list[np.ndarray]:
    """Rejection-sample table spots; the separation shrinks when the table is crowded."""
    spots: list[np.ndarray] = []
    (x_lo, x_hi), (y_lo, y_hi) = WORKSPACE
    separation = MIN_SEPARATION
    failures = 0
    while len(spots) < n_spots:
        cand = np.array([rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi), 0.0]) + offset
        if all(np.linalg.norm(cand - s) >= separation for s in spots):
            spots.append(cand)
            failures = 0
        else:
            failures += 1
            if failures >= 100:
                separation *= 0.8
                failures = 0
    return spots


def _subject_style(seed: int, subject: int) -> SubjectStyle:
    rng = np.random.default_rng([seed, subject])
    offset = np.array([rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04), 0.0])
    return SubjectStyle(offset=offset, speed=float(rng.uniform(0.85, 1.15)))


def _step_position(step: _TimedStep, state: _HandState, tau: float) -> np.ndarray:
    if step.action == "stir":
        center = state.start_pos - np.array([STIR_RADIUS, 0.0, 0.0])
        theta = 2 * math.pi * STIR_CYCLES * tau
        return center + np.array([STIR_RADIUS * math.cos(theta), STIR_RADIUS * math.sin(theta), 0.0])
    if step.action == "pour":
        return state.start_pos + np.array([0.0, 0.0, -POUR_DIP * math.sin(math.pi * tau)])
    if step.action in ("hold", "idle"):
        return state.start_pos
    return minimum_jerk(state.start_pos, state.goal_pos, tau)


class _TakeSimulator:
    """Kinematic stub: advances both hands through their timed step queues."""

    def __init__(
        self,
        spec: SyntheticTaskSpec,
        vocab: Vocab,
        style: SubjectStyle,
        rng: np.random.Generator,
    ):
        self.spec = spec
        self.vocab = vocab
        self.rng = rng
        lo, hi = spec.item_count
        n_items = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
        item_order = rng.permutation(len(spec.item_classes))[:n_items]
        self.items = [spec.item_classes[i] for i in item_order]

        roles = [RIGHT_HAND, LEFT_HAND] + [r for r, _ in spec.fixed_roles] + self.items
        classes = [RIGHT_HAND, LEFT_HAND] + [c for _, c in spec.fixed_roles] + self.items
        self.role_to_node = {role: i for i, role in enumerate(roles)}
        self.roster = tuple(vocab.object_index(c) for c in classes)

        spots = _sample_placements(len(roles) - 2 + 4, rng, style.offset)
        self.pos = np.zeros((len(roles), 3))
        self.pos[RIGHT] = REST_POSITIONS[RIGHT] + style.offset
        self.pos[LEFT] = REST_POSITIONS[LEFT] + style.offset
        for i in range(2, len(roles)):
            self.pos[i] = spots[i - 2]
        self.free_spots = spots[len(roles) - 2 :]
        if spec.items_start_at is not None:
            anchor = self.pos[self._node(spec.items_start_at)]
            for item in self.items:
                jitter = np.array([rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03), 0.0])
                self.pos[self._node(item)] = anchor + jitter

        self.hands = {
            RIGHT: _HandState(self._timed_steps(spec.right_script, style)),
            LEFT: _HandState(self._timed_steps(spec.left_script, style)),
        }

    def _node(self, role: str) -> int:
        try:
            return self.role_to_node[role]
        except KeyError:
            raise ConfigError(f"unresolvable object role {role!r} in task {self.spec.name!r}") from None

    def _timed_steps(self, script: tuple[SubTask, ...], style: SubjectStyle) -> list[_TimedStep]:
        steps = _expand_script(script, self.items, self.rng)
        lead = int(self.rng.integers(self.spec.lead_idle[0], self.spec.lead_idle[1] + 1))
        timed = [_TimedStep(IDLE_ACTION, self._node(RIGHT_HAND), None, lead)]
        for s in steps:
            lo, hi = self.spec.duration_range(s.action)
            frames = max(2, round(int(self.rng.integers(lo, hi + 1)) / style.speed))
            target = self._node(s.target_role) if s.target_role is not None else None
            timed.append(_TimedStep(s.action, self._node(s.role), target, frames))
        return timed

    def _begin(self, hand: int, step: _TimedStep) -> None:
        state = self.hands[hand]
        state.step = step
        state.progress = 0
        state.start_pos = self.pos[hand].copy()
        if step.action in GRASP_ACTIONS:
            state.holding = step.node
        if step.action == "approach":
            state.goal_pos = self.pos[step.node] - GRASP_OFFSET
        elif step.action == "lift":
            state.goal_pos = self.pos[hand] + np.array([0.0, 0.0, LIFT_HEIGHT])
        elif step.action == "place":
            if step.target is not None:
                base = self.pos[step.target] + np.array([0.0, 0.0, 0.04])
            else:
                base = self.free_spots[int(self.rng.integers(len(self.free_spots)))] - GRASP_OFFSET
            jitter = np.array([self.rng.uniform(-0.015, 0.015), self.rng.uniform(-0.015, 0.015), 0.0])
            state.goal_pos = base + jitter
        elif step.action == "retreat":
            state.goal_pos = REST_POSITIONS[hand].copy()
        else:
            state.goal_pos = state.start_pos.copy()

    def _advance_hand(self, hand: int) -> tuple[int, int]:
        state = self.hands[hand]
        if state.step is None:
            if state.queue:
                self._begin(hand, state.queue.pop(0))
            else:
                action = self.vocab.action_index(IDLE_ACTION)
                return action, self.vocab.none_object
        step = state.step
        state.progress += 1
        tau = state.progress / step.duration
        self.pos[hand] = _step_position(step, state, min(tau, 1.0))
        if state.holding is not None and state.holding != hand:
            self.pos[state.holding] = self.pos[hand] + GRASP_OFFSET
        labels = (
            self.vocab.action_index(step.action),
            self.roster[step.node] if step.action != IDLE_ACTION else self.vocab.none_object,
        )
        if state.progress >= step.duration:
            if step.action in RELEASE_ACTIONS:
                state.holding = None
            state.executed.append(step)
            state.step = None
        return labels

    def run(self) -> tuple[np.ndarray, np.ndarray]:
        """Simulate until both queues drain; returns positions [L,N,3] and labels [L,2,2]."""
        positions: list[np.ndarray] = []
        labels: list[tuple[tuple[int, int], tuple[int, int]]] = []
        while any(s.queue or s.step is not None for s in self.hands.values()):
            right = self._advance_hand(RIGHT)
            left = self._advance_hand(LEFT)
            positions.append(self.pos.copy())
            labels.append((right, left))
        return np.stack(positions), np.asarray(labels, dtype=np.int64)


def generate_take(
    spec: SyntheticTaskSpec,
    vocab: Vocab,
    style: SubjectStyle,
    rng: np.random.Generator,
    subject_id: str,
    thresholds: RelationThresholds = RelationThresholds(),
) -> Demonstration:
    sim = _TakeSimulator(spec, vocab, style, rng)
    positions, labels = sim.run()
    if spec.noise_std > 0:
        positions = positions + rng.normal(0.0, spec.noise_std, size=positions.shape)
    frames = [
        Frame(
            frame_id=i,
            positions=positions[i],
            right=(int(labels[i, RIGHT, 0]), int(labels[i, RIGHT, 1])),
            left=(int(labels[i, LEFT, 0]), int(labels[i, LEFT, 1])),
        )
        for i in range(len(positions))
    ]
    demo = Demonstration(
        subject_id=subject_id,
        task_id=spec.name,
        roster=sim.roster,
        frames=frames,
        vocab=vocab,
    )
    demo.compute_relations(thresholds)
    return demo


def generate_synthetic(
    spec: SyntheticTaskSpec,
    vocab: Vocab,
    subjects: int,
    takes: int,
    seed: int,
    thresholds: RelationThresholds = RelationThresholds(),
) -> list[Demonstration]:
    """Deterministic demonstration corpus: one take per (subject, take) pair."""
    if subjects < 1 or takes < 1:
        raise ConfigError("subjects and takes must both be >= 1")
    demos = []
    for subj in range(subjects):
        style = _subject_style(seed, subj)
        for take in range(takes):
            rng = np.random.default_rng([seed, subj, take])
            demo = generate_take(spec, vocab, style, rng, subject_id=f"s{subj}", thresholds=thresholds)
            demo.source = f"{spec.name}_s{subj}_t{take}"
            demos.append(demo)
    return demos


# ---------------------------------------------------------------------------
# Built-in task menu


def cooking_spec(noise_std: float = 0.002) -> SyntheticTaskSpec:
    """Whisk handling on the right, bowl/bottle handling on the left."""
    right = (
        SubTask((ActionStep("approach", "whisk"), ActionStep("lift", "whisk"))),
        SubTask((ActionStep("stir", "whisk"),)),
        SubTask((ActionStep("place", "whisk"), ActionStep("retreat", "whisk"))),
    )
    left = (
        SubTask((ActionStep("approach", "bowl"), ActionStep("lift", "bowl"))),
        SubTask((ActionStep("hold", "bowl"),)),
        SubTask((ActionStep("place", "bowl"),)),
        SubTask((ActionStep("approach", "bottle"), ActionStep("lift", "bottle"))),
        SubTask((ActionStep("pour", "bottle"),)),
        SubTask((ActionStep("place", "bottle"),)),
        SubTask((ActionStep("approach", "bowl"), ActionStep("lift", "bowl"))),
        SubTask((ActionStep("hold", "bowl"),)),
        SubTask((ActionStep("place", "bowl"), ActionStep("retreat", "bowl"))),
    )
    durations = (
        ("approach", (22, 34)),
        ("lift", (12, 20)),
        ("stir", (70, 110)),
        ("place", (18, 30)),
        ("retreat", (14, 24)),
        ("hold", (45, 75)),
        ("pour", (40, 65)),
    )
    return SyntheticTaskSpec(
        name="cooking",
        fixed_roles=(("whisk", "whisk"), ("bowl", "bowl"), ("bottle", "bottle")),
        right_script=right,
        left_script=left,
        durations=durations,
        noise_std=noise_std,
    )


ITEM_POOL = (
    "cube_red",
    "cube_green",
    "cube_blue",
    "ball_yellow",
    "ball_white",
    "cylinder_gray",
    "block_small",
    "block_large",
)


def insert_spec(item_count: tuple[int, int] = (6, 6), noise_std: float = 0.002) -> SyntheticTaskSpec:
    """Right hand inserts items into the bowl in shuffled order; left steadies the bowl."""
    right = (
        SubTask(
            (
                ActionStep("approach", "$item"),
                ActionStep("lift", "$item"),
                ActionStep("place", "$item", target_role="bowl"),
            ),
            group=0,
            foreach_item=True,
        ),
        SubTask((ActionStep("retreat", "bowl"),)),
    )
    left = (
        SubTask((ActionStep("approach", "bowl"), ActionStep("lift", "bowl"))),
        SubTask((ActionStep("hold", "bowl"),)),
        SubTask((ActionStep("place", "bowl"), ActionStep("retreat", "bowl"))),
    )
    durations = (
        ("approach", (14, 24)),
        ("lift", (10, 16)),
        ("place", (14, 24)),
        ("retreat", (12, 20)),
        ("hold", (160, 260)),
    )
    return SyntheticTaskSpec(
        name="insert",
        fixed_roles=(("bowl", "bowl"),),
        right_script=right,
        left_script=left,
        durations=durations,
        item_classes=ITEM_POOL,
        item_count=item_count,
        noise_std=noise_std,
    )


def takeout_spec(item_count: tuple[int, int] = (5, 6), noise_std: float = 0.002) -> SyntheticTaskSpec:
    """Right hand removes items from the bowl onto free table spots."""
    right = (
        SubTask(
            (
                ActionStep("approach", "$item"),
                ActionStep("lift", "$item"),
                ActionStep("place", "$item"),
            ),
            group=0,
            foreach_item=True,
        ),
        SubTask((ActionStep("retreat", "bowl"),)),
    )
    left = (
        SubTask((ActionStep("approach", "bowl"), ActionStep("lift", "bowl"))),
        SubTask((ActionStep("hold", "bowl"),)),
        SubTask((ActionStep("place", "bowl"), ActionStep("retreat", "bowl"))),
    )
    durations = (
        ("approach", (14, 24)),
        ("lift", (10, 16)),
        ("place", (14, 24)),
        ("retreat", (12, 20)),
        ("hold", (140, 220)),
    )
    return SyntheticTaskSpec(
        name="takeout",
        fixed_roles=(("bowl", "bowl"),),
        right_script=right,
        left_script=left,
        durations=durations,
        item_classes=ITEM_POOL,
        item_count=item_count,
        items_start_at="bowl",
        noise_std=noise_std,
    )


TASK_SPECS = {
    "cooking": cooking_spec,
    "insert": insert_spec,
    "takeout": takeout_spec,
}


def default_vocab() -> Vocab:
    """Vocabulary covering the whole built-in task menu."""
    return vocab_for_specs([factory() for factory in TASK_SPECS.values()])

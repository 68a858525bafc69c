"""Label vocabularies for objects, actions, tasks, and relations.

Reserved labels:
  actions: ``idle`` (hand does nothing) and ``pad`` (masked / padding slot).
  objects: ``none`` (object slot of an idle hand) and ``pad`` (padding slot);
           both hand classes must be present so hands can appear as graph nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError

IDLE_ACTION = "idle"
PAD_ACTION = "pad"
NONE_OBJECT = "none"
PAD_OBJECT = "pad"
RIGHT_HAND = "right_hand"
LEFT_HAND = "left_hand"

RIGHT = 0
LEFT = 1
HAND_NAMES = ("right", "left")


def _check_unique(name: str, labels: tuple[str, ...]) -> None:
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate entries in {name}: {labels}")


@dataclass(frozen=True)
class Vocab:
    """Bijective index<->name maps for every label family."""

    object_classes: tuple[str, ...]
    action_labels: tuple[str, ...]
    task_labels: tuple[str, ...]
    relation_labels: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.relation_labels:
            from .relations import RELATION_LABELS

            object.__setattr__(self, "relation_labels", RELATION_LABELS)
        _check_unique("object_classes", self.object_classes)
        _check_unique("action_labels", self.action_labels)
        _check_unique("task_labels", self.task_labels)
        _check_unique("relation_labels", self.relation_labels)
        for required in (IDLE_ACTION, PAD_ACTION):
            if required not in self.action_labels:
                raise ConfigError(f"action_labels must contain {required!r}")
        for required in (NONE_OBJECT, PAD_OBJECT, RIGHT_HAND, LEFT_HAND):
            if required not in self.object_classes:
                raise ConfigError(f"object_classes must contain {required!r}")

    # -- sizes ----------------------------------------------------------
    @property
    def n_objects(self) -> int:
        return len(self.object_classes)

    @property
    def n_actions(self) -> int:
        return len(self.action_labels)

    @property
    def n_tasks(self) -> int:
        return len(self.task_labels)

    @property
    def n_relations(self) -> int:
        return len(self.relation_labels)

    @property
    def d_node(self) -> int:
        """Node feature width: class one-hot plus 3 coordinates."""
        return self.n_objects + 3

    # -- reserved indices -------------------------------------------------
    @property
    def idle_action(self) -> int:
        return self.action_labels.index(IDLE_ACTION)

    @property
    def pad_action(self) -> int:
        return self.action_labels.index(PAD_ACTION)

    @property
    def none_object(self) -> int:
        return self.object_classes.index(NONE_OBJECT)

    @property
    def pad_object(self) -> int:
        return self.object_classes.index(PAD_OBJECT)

    @property
    def right_hand(self) -> int:
        return self.object_classes.index(RIGHT_HAND)

    @property
    def left_hand(self) -> int:
        return self.object_classes.index(LEFT_HAND)

    # -- lookups ----------------------------------------------------------
    def object_index(self, name: str) -> int:
        try:
            return self.object_classes.index(name)
        except ValueError:
            raise ConfigError(f"unknown object class {name!r}") from None

    def action_index(self, name: str) -> int:
        try:
            return self.action_labels.index(name)
        except ValueError:
            raise ConfigError(f"unknown action label {name!r}") from None

    def task_index(self, name: str) -> int:
        try:
            return self.task_labels.index(name)
        except ValueError:
            raise ConfigError(f"unknown task label {name!r}") from None

    def to_dict(self) -> dict:
        return {
            "object_classes": list(self.object_classes),
            "action_labels": list(self.action_labels),
            "task_labels": list(self.task_labels),
            "relation_labels": list(self.relation_labels),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Vocab":
        return cls(
            object_classes=tuple(data["object_classes"]),
            action_labels=tuple(data["action_labels"]),
            task_labels=tuple(data["task_labels"]),
            relation_labels=tuple(data.get("relation_labels") or ()),
        )

"""Demonstration data model and line-delimited file I/O.

File schema (``schema: 1``): one UTF-8 JSON record per line. The first record
is a header::

    {"schema": 1, "kind": "header", "subject": "s1", "task": "cooking",
     "roster": ["right_hand", "left_hand", "bowl", ...], "frame_rate": 30,
     "axes": {"x": "right", "y": "away", "z": "up"}}

followed by one record per frame::

    {"frame_id": 0, "positions": [[x, y, z], ...],
     "right": ["approach", "whisk"], "left": ["idle", "none"],
     "relations": [[0, 1, ...], ...]}          # optional, recomputed if absent

Positions are object centers in meters. A record may carry bounding-box
``extents``; they are accepted and ignored (only centers are used).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .relations import RelationThresholds, extract_relations
from .vocab import RIGHT, Vocab

SCHEMA_VERSION = 1
AXES = {"x": "right", "y": "away", "z": "up"}


@dataclass
class Frame:
    """One annotated time step: object centers, pair relations, per-hand labels."""

    frame_id: int
    positions: np.ndarray  # [N x 3] float64, meters
    right: tuple[int, int]  # (action index, object index)
    left: tuple[int, int]
    relations: np.ndarray | None = None  # [M x d_E] uint8, vs. previous frame

    def labels(self, hand: int) -> tuple[int, int]:
        return self.right if hand == RIGHT else self.left


@dataclass
class Demonstration:
    """A subject/task-tagged frame sequence over a fixed object roster."""

    subject_id: str
    task_id: str
    roster: tuple[int, ...]  # object-class index per node, constant over frames
    frames: list[Frame]
    vocab: Vocab
    frame_rate: float = 30.0
    source: str = ""

    def __post_init__(self) -> None:
        if len(self.roster) < 2:
            raise InputError("roster must contain at least the two hands")
        n = len(self.roster)
        n_edges = n * (n - 1)
        prev = None
        for fr in self.frames:
            if prev is not None and fr.frame_id <= prev:
                raise InputError(f"frame ids must be strictly increasing (at {fr.frame_id})")
            prev = fr.frame_id
            if fr.positions.shape != (n, 3):
                raise InputError(f"frame {fr.frame_id}: positions shape {fr.positions.shape} != ({n}, 3)")
            if fr.relations is not None and fr.relations.shape != (n_edges, self.vocab.n_relations):
                raise InputError(
                    f"frame {fr.frame_id}: relations shape {fr.relations.shape} != "
                    f"({n_edges}, {self.vocab.n_relations})"
                )
        for cls in self.roster:
            if not 0 <= cls < self.vocab.n_objects:
                raise InputError(f"roster class index {cls} out of range")

    @property
    def n_objects(self) -> int:
        return len(self.roster)

    @property
    def first_frame_id(self) -> int:
        return self.frames[0].frame_id

    @property
    def last_frame_id(self) -> int:
        return self.frames[-1].frame_id

    def frame_index(self) -> dict[int, int]:
        return {fr.frame_id: i for i, fr in enumerate(self.frames)}

    def positions_array(self) -> np.ndarray:
        """[L x N x 3] stacked positions."""
        return np.stack([fr.positions for fr in self.frames])

    def node_index(self, object_class: int) -> int:
        """Roster position of the first node with the given class."""
        try:
            return self.roster.index(object_class)
        except ValueError:
            raise InputError(f"object class {object_class} not in roster") from None

    def compute_relations(self, thresholds: RelationThresholds = RelationThresholds()) -> None:
        """Fill every frame's relation matrix from positions (vs. previous frame)."""
        prev = None
        for fr in self.frames:
            fr.relations = extract_relations(fr.positions, prev, thresholds)
            prev = fr.positions


@dataclass
class DemonstrationSet:
    """Demonstrations plus the vocabulary and thresholds they were built with."""

    demos: list[Demonstration]
    vocab: Vocab
    thresholds: RelationThresholds = field(default_factory=RelationThresholds)

    def subjects(self) -> list[str]:
        seen: dict[str, None] = {}
        for d in self.demos:
            seen.setdefault(d.subject_id, None)
        return list(seen)


def write_demonstration(demo: Demonstration, path: str | Path) -> None:
    path = Path(path)
    vocab = demo.vocab
    with path.open("w", encoding="utf-8") as fh:
        header = {
            "schema": SCHEMA_VERSION,
            "kind": "header",
            "subject": demo.subject_id,
            "task": demo.task_id,
            "roster": [vocab.object_classes[c] for c in demo.roster],
            "frame_rate": demo.frame_rate,
            "axes": AXES,
        }
        fh.write(json.dumps(header) + "\n")
        for fr in demo.frames:
            rec = {
                "frame_id": fr.frame_id,
                "positions": [[round(float(v), 6) for v in p] for p in fr.positions],
                "right": [vocab.action_labels[fr.right[0]], vocab.object_classes[fr.right[1]]],
                "left": [vocab.action_labels[fr.left[0]], vocab.object_classes[fr.left[1]]],
            }
            if fr.relations is not None:
                rec["relations"] = fr.relations.astype(int).tolist()
            fh.write(json.dumps(rec) + "\n")


def read_demonstration(
    path: str | Path,
    vocab: Vocab,
    thresholds: RelationThresholds = RelationThresholds(),
) -> Demonstration:
    """Parse one demonstration file; relations are recomputed when absent."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise InputError(f"{path}: empty demonstration file")
    header = json.loads(lines[0])
    if header.get("kind") != "header":
        raise InputError(f"{path}: first record must be the header")
    if header.get("schema") != SCHEMA_VERSION:
        raise InputError(f"{path}: unsupported schema {header.get('schema')!r}")
    roster = tuple(vocab.object_index(name) for name in header["roster"])
    frames: list[Frame] = []
    missing_relations = False
    for line in lines[1:]:
        rec = json.loads(line)
        positions = np.asarray(rec["positions"], dtype=np.float64)
        relations = rec.get("relations")
        if relations is None:
            missing_relations = True
        frames.append(
            Frame(
                frame_id=int(rec["frame_id"]),
                positions=positions,
                right=(vocab.action_index(rec["right"][0]), vocab.object_index(rec["right"][1])),
                left=(vocab.action_index(rec["left"][0]), vocab.object_index(rec["left"][1])),
                relations=None if relations is None else np.asarray(relations, dtype=np.uint8),
            )
        )
    demo = Demonstration(
        subject_id=str(header["subject"]),
        task_id=str(header["task"]),
        roster=roster,
        frames=frames,
        vocab=vocab,
        frame_rate=float(header.get("frame_rate", 30.0)),
        source=str(path),
    )
    if missing_relations:
        demo.compute_relations(thresholds)
    return demo

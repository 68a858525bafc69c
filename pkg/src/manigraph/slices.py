"""Spatio-temporal graph slices: one training sample per (demonstration, frame).

A slice packs the sampled history window into node/edge/global feature
tensors and collects the supervision targets over the prediction horizon.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .demonstrations import Demonstration
from .errors import ConfigError, InputError, SliceRangeError
from .relations import extract_relations
from .vocab import LEFT, RIGHT


@dataclass(frozen=True)
class SliceConfig:
    history: int = 10  # H sampled history frames
    sample_rate: int = 10  # S, every S-th frame
    horizon: int = 10  # P future frames
    n_past: int = 20  # semantic pair history length per hand

    def __post_init__(self) -> None:
        if min(self.history, self.sample_rate, self.horizon, self.n_past) < 1:
            raise ConfigError("history, sample_rate, horizon, n_past must all be >= 1")

    @property
    def warmup(self) -> int:
        """Frames consumed before the first prediction can be emitted."""
        return self.history * self.sample_rate

    def to_dict(self) -> dict:
        return {
            "history": self.history,
            "sample_rate": self.sample_rate,
            "horizon": self.horizon,
            "n_past": self.n_past,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SliceConfig":
        return cls(**data)


@dataclass(frozen=True)
class Standardizer:
    """Per-axis z-scoring of coordinates, fit on a training split."""

    mean: np.ndarray  # [3]
    std: np.ndarray  # [3], floored at 1e-6

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        std = np.asarray(self.std, dtype=np.float64).reshape(3)
        if not (np.isfinite(mean).all() and np.isfinite(std).all()):
            raise ConfigError("standardization stats must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", np.maximum(std, 1e-6))

    def standardize(self, coords: np.ndarray) -> np.ndarray:
        return (np.asarray(coords, dtype=np.float64) - self.mean) / self.std

    def destandardize(self, coords: np.ndarray) -> np.ndarray:
        return np.asarray(coords, dtype=np.float64) * self.std + self.mean

    @classmethod
    def identity(cls) -> "Standardizer":
        return cls(mean=np.zeros(3), std=np.ones(3))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Standardizer":
        return cls(mean=np.asarray(data["mean"]), std=np.asarray(data["std"]))


def fit_standardizer(demos: list[Demonstration]) -> Standardizer:
    """Per-axis mean/std over every object position in the given demonstrations."""
    if not demos:
        raise ConfigError("cannot fit standardizer on an empty demonstration list")
    stacked = np.concatenate([d.positions_array().reshape(-1, 3) for d in demos])
    return Standardizer(mean=stacked.mean(axis=0), std=stacked.std(axis=0))


def standardize_demo(demo: Demonstration, stats: Standardizer) -> Demonstration:
    """Transform positions to z-scores; relations keep their raw-geometry values."""
    from dataclasses import replace

    frames = [
        replace(fr, positions=stats.standardize(fr.positions))
        for fr in demo.frames
    ]
    return replace(demo, frames=frames)


@dataclass
class GraphSlice:
    """One sample: features for the history window plus horizon targets.

    Hand axis is always ordered (right, left). ``history_pairs`` are the
    most recent completed semantic (action, object) runs, left-padded with
    the pad pair at frame 0.
    """

    x_v: np.ndarray  # [N x H x d_V] float32
    x_e: np.ndarray  # [M x H x d_E] float32
    u: np.ndarray  # [d_U] float32, one-hot task
    history_frame_ids: np.ndarray  # [H] int64
    current_pairs: np.ndarray  # [2 x 2] int64: (action, object) per hand
    history_pairs: np.ndarray  # [2 x n_past x 2] int64
    history_starts: np.ndarray  # [2 x n_past] int64
    next_pair: np.ndarray  # [2 x 2] int64
    future_pair: np.ndarray  # [2 x 2] int64, pad labels when no successor
    horizon_actions: np.ndarray  # [2 x P] int64
    horizon_objects: np.ndarray  # [2 x P] int64
    motion_targets: np.ndarray  # [N x P x 3] float32
    roster: np.ndarray  # [N] int64 object-class indices
    t: int
    subject_id: str
    task_id: str

    @property
    def n_nodes(self) -> int:
        return self.x_v.shape[0]

    @property
    def n_edges(self) -> int:
        return self.x_e.shape[0]


def semantic_runs(demo: Demonstration, hand: int) -> list[tuple[int, int, int, int]]:
    """Maximal runs of one (action, object) label: (start_id, end_id, action, object)."""
    runs: list[tuple[int, int, int, int]] = []
    for fr in demo.frames:
        action, obj = fr.labels(hand)
        if runs and runs[-1][2] == action and runs[-1][3] == obj:
            start, _, a, o = runs[-1]
            runs[-1] = (start, fr.frame_id, a, o)
        else:
            runs.append((fr.frame_id, fr.frame_id, action, obj))
    return runs


class SliceBuilder:
    """Precomputes per-demonstration lookups so many slices are cheap to build."""

    def __init__(self, demo: Demonstration, cfg: SliceConfig):
        self.demo = demo
        self.cfg = cfg
        self.vocab = demo.vocab
        self.id_to_index = demo.frame_index()
        self.positions = demo.positions_array()
        self.runs = [semantic_runs(demo, RIGHT), semantic_runs(demo, LEFT)]
        self.run_ends = [[r[1] for r in runs] for runs in self.runs]
        self.run_starts = [[r[0] for r in runs] for runs in self.runs]
        n = demo.n_objects
        self.class_onehot = np.zeros((n, self.vocab.n_objects), dtype=np.float32)
        self.class_onehot[np.arange(n), list(demo.roster)] = 1.0
        if demo.task_id not in self.vocab.task_labels:
            raise InputError(f"task {demo.task_id!r} not in vocabulary")
        self.task_onehot = np.zeros(self.vocab.n_tasks, dtype=np.float32)
        self.task_onehot[self.vocab.task_index(demo.task_id)] = 1.0

    def _frame(self, frame_id: int) -> int:
        try:
            return self.id_to_index[frame_id]
        except KeyError:
            raise SliceRangeError(f"frame {frame_id} missing from demonstration") from None

    def _relations(self, index: int) -> np.ndarray:
        fr = self.demo.frames[index]
        if fr.relations is None:
            prev = self.demo.frames[index - 1].positions if index > 0 else None
            fr.relations = extract_relations(fr.positions, prev)
        return fr.relations

    def _history_pairs(self, t: int, hand: int) -> tuple[np.ndarray, np.ndarray]:
        cfg, vocab = self.cfg, self.vocab
        pairs = np.full((cfg.n_past, 2), (vocab.pad_action, vocab.pad_object), dtype=np.int64)
        starts = np.zeros(cfg.n_past, dtype=np.int64)
        # completed runs only: end frame at or before t
        count = bisect.bisect_right(self.run_ends[hand], t)
        recent = self.runs[hand][max(0, count - cfg.n_past) : count]
        for slot, (start, _, action, obj) in zip(range(cfg.n_past - len(recent), cfg.n_past), recent):
            pairs[slot] = (action, obj)
            starts[slot] = start
        return pairs, starts

    def _future_pair(self, t: int, hand: int) -> tuple[int, int]:
        # run containing frame t+1; target is the pair of the following run
        idx = bisect.bisect_right(self.run_starts[hand], t + 1) - 1
        if 0 <= idx < len(self.runs[hand]) - 1:
            nxt = self.runs[hand][idx + 1]
            return nxt[2], nxt[3]
        return self.vocab.pad_action, self.vocab.pad_object

    def build(self, t: int, with_targets: bool = True) -> GraphSlice:
        cfg, demo, vocab = self.cfg, self.demo, self.vocab
        first, last = demo.first_frame_id, demo.last_frame_id
        if t - (cfg.history - 1) * cfg.sample_rate < first:
            raise SliceRangeError(f"history window before frame {first} (t={t})")
        if with_targets and t + cfg.horizon > last:
            raise SliceRangeError(f"horizon extends past frame {last} (t={t})")
        if t > last:
            raise SliceRangeError(f"t={t} past final frame {last}")

        history_ids = np.array(
            [t - (cfg.history - 1 - i) * cfg.sample_rate for i in range(cfg.history)],
            dtype=np.int64,
        )
        hist_idx = [self._frame(int(f)) for f in history_ids]

        n = demo.n_objects
        coords = self.positions[hist_idx].transpose(1, 0, 2).astype(np.float32)  # [N x H x 3]
        x_v = np.concatenate(
            [np.broadcast_to(self.class_onehot[:, None, :], (n, cfg.history, vocab.n_objects)), coords],
            axis=2,
        ).astype(np.float32)
        x_e = np.stack([self._relations(i) for i in hist_idx], axis=1).astype(np.float32)

        current = np.array(
            [demo.frames[hist_idx[-1]].right, demo.frames[hist_idx[-1]].left], dtype=np.int64
        )
        hist_pairs = np.stack([self._history_pairs(t, h)[0] for h in (RIGHT, LEFT)])
        hist_starts = np.stack([self._history_pairs(t, h)[1] for h in (RIGHT, LEFT)])

        p = cfg.horizon
        if with_targets:
            future_idx = [self._frame(t + 1 + i) for i in range(p)]
            horizon_actions = np.array(
                [[demo.frames[i].labels(h)[0] for i in future_idx] for h in (RIGHT, LEFT)],
                dtype=np.int64,
            )
            horizon_objects = np.array(
                [[demo.frames[i].labels(h)[1] for i in future_idx] for h in (RIGHT, LEFT)],
                dtype=np.int64,
            )
            next_pair = np.array(
                [demo.frames[future_idx[0]].right, demo.frames[future_idx[0]].left], dtype=np.int64
            )
            future_pair = np.array([self._future_pair(t, h) for h in (RIGHT, LEFT)], dtype=np.int64)
            motion = self.positions[future_idx].transpose(1, 0, 2).astype(np.float32)
        else:
            pad = np.array([vocab.pad_action, vocab.pad_object], dtype=np.int64)
            horizon_actions = np.full((2, p), vocab.pad_action, dtype=np.int64)
            horizon_objects = np.full((2, p), vocab.pad_object, dtype=np.int64)
            next_pair = np.stack([pad, pad])
            future_pair = np.stack([pad, pad])
            motion = np.zeros((n, p, 3), dtype=np.float32)

        return GraphSlice(
            x_v=x_v,
            x_e=x_e,
            u=self.task_onehot.copy(),
            history_frame_ids=history_ids,
            current_pairs=current,
            history_pairs=hist_pairs,
            history_starts=hist_starts,
            next_pair=next_pair,
            future_pair=future_pair,
            horizon_actions=horizon_actions,
            horizon_objects=horizon_objects,
            motion_targets=motion,
            roster=np.asarray(demo.roster, dtype=np.int64),
            t=t,
            subject_id=demo.subject_id,
            task_id=demo.task_id,
        )


def build_slice(demo: Demonstration, t: int, cfg: SliceConfig, with_targets: bool = True) -> GraphSlice:
    """Single-slice convenience wrapper around :class:`SliceBuilder`."""
    return SliceBuilder(demo, cfg).build(t, with_targets=with_targets)


def slice_demonstration(demo: Demonstration, cfg: SliceConfig, stride: int = 1) -> list[GraphSlice]:
    """All valid training slices of a demonstration at the given frame stride."""
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    builder = SliceBuilder(demo, cfg)
    start = demo.first_frame_id + (cfg.history - 1) * cfg.sample_rate
    stop = demo.last_frame_id - cfg.horizon
    return [builder.build(t) for t in range(start, stop + 1, stride)]

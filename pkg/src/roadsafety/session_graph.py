"""Per-session chain graphs, disjoint-union batches and session-level splits."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data_model import SessionId, make_session_id
from .enrich import FEATURE_ORDER, build_feature_vector
from .geo import LabeledEvent, session_label


class TooFewSessions(ValueError):
    pass


@dataclass
class SessionGraph:
    session: SessionId
    x: np.ndarray  # nodes x features, ascending timestamp
    edges: np.ndarray  # E x 2 (src, dst) local node indices
    label: int  # safety index 1..5

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if len(self.x) < 1:
            raise ValueError("session graph needs at least one node")

    @property
    def n_nodes(self) -> int:
        return len(self.x)

    def to_json(self) -> str:
        return json.dumps(
            {
                "session": str(self.session),
                "x": self.x.tolist(),
                "edges": self.edges.tolist(),
                "label": int(self.label),
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "SessionGraph":
        d = json.loads(line)
        return cls(SessionId.parse(d["session"]), np.array(d["x"], dtype=np.float64), np.array(d["edges"]), d["label"])


def chain_edges(n: int, self_loops: bool = False) -> np.ndarray:
    edges = [(i, i + 1) for i in range(n - 1)]
    if self_loops:
        edges += [(i, i) for i in range(n)]
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def build_session_graphs(
    labeled: Sequence[LabeledEvent],
    feature_order: Sequence[str] = FEATURE_ORDER,
    self_loops: bool = False,
) -> list[SessionGraph]:
    """One chain graph per (device, road, date), oldest event first.

    Timestamp ties keep input order. Graphs come back sorted by session id.
    """
    groups: dict[SessionId, list[tuple[int, LabeledEvent]]] = defaultdict(list)
    for pos, le in enumerate(labeled):
        groups[make_session_id(le.event)].append((pos, le))
    graphs = []
    for sid in sorted(groups):
        members = sorted(groups[sid], key=lambda item: (item[1].event.timestamp, item[0]))
        x = np.vstack([build_feature_vector(le.event, feature_order) for _, le in members])
        label = session_label([le.safety_index for _, le in members])
        graphs.append(SessionGraph(sid, x, chain_edges(len(members), self_loops), label))
    return graphs


def write_graphs(path: str | Path, graphs: Iterable[SessionGraph]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(g.to_json() + "\n")


def read_graphs(path: str | Path) -> list[SessionGraph]:
    with open(path, encoding="utf-8") as fh:
        return [SessionGraph.from_json(line) for line in fh if line.strip()]


@dataclass
class GraphBatch:
    x: np.ndarray  # all nodes, concatenated
    edges: np.ndarray  # global node indices
    membership: np.ndarray  # node -> graph position in batch
    offsets: np.ndarray  # B + 1 node offsets
    labels: np.ndarray  # safety index per graph
    sessions: list[SessionId]

    @property
    def n_graphs(self) -> int:
        return len(self.labels)

    @classmethod
    def from_graphs(cls, graphs: Sequence[SessionGraph]) -> "GraphBatch":
        if not graphs:
            raise ValueError("cannot batch zero graphs")
        sizes = np.array([g.n_nodes for g in graphs])
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        edges = np.vstack([g.edges + off for g, off in zip(graphs, offsets[:-1])])
        return cls(
            x=np.vstack([g.x for g in graphs]),
            edges=edges.astype(np.int64),
            membership=np.repeat(np.arange(len(graphs)), sizes),
            offsets=offsets,
            labels=np.array([g.label for g in graphs]),
            sessions=[g.session for g in graphs],
        )

    def unbatch(self) -> list[SessionGraph]:
        out = []
        for k in range(self.n_graphs):
            lo, hi = self.offsets[k], self.offsets[k + 1]
            mask = (self.edges[:, 0] >= lo) & (self.edges[:, 0] < hi)
            out.append(SessionGraph(self.sessions[k], self.x[lo:hi].copy(), self.edges[mask] - lo, int(self.labels[k])))
        return out


def batch_graphs(graphs: Sequence[SessionGraph], batch_size: int = 20, seed=None, shuffle: bool = True) -> list[GraphBatch]:
    if not graphs:
        raise ValueError("no graphs to batch")
    order = np.arange(len(graphs))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(graphs))
    return [
        GraphBatch.from_graphs([graphs[i] for i in order[s : s + batch_size]])
        for s in range(0, len(graphs), batch_size)
    ]


def split_sessions(
    graphs: Sequence[SessionGraph],
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
    seed=None,
) -> tuple[list[SessionGraph], list[SessionGraph], list[SessionGraph]]:
    """Whole-session train/val/test split, stratified by label.

    Per-label quotas come from largest-remainder rounding so the overall split
    sizes match the fractions; every split gets at least one session.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1: {fractions}")
    n = len(graphs)
    if n < 3:
        raise TooFewSessions(f"need >= 3 sessions, got {n}")
    rng = np.random.default_rng(seed)
    targets = _largest_remainder(n, fractions)
    targets = _at_least_one(targets)

    by_label: dict[int, list[int]] = defaultdict(list)
    for i, g in enumerate(graphs):
        by_label[g.label].append(i)
    # interleave labels so a sequential deal yields stratified splits
    queue = []
    for label in sorted(by_label):
        idx = np.array(by_label[label])[rng.permutation(len(by_label[label]))]
        frac = (np.arange(len(idx)) + 0.5) / len(idx)
        queue += [(f, label, i) for f, i in zip(frac, idx)]
    queue.sort(key=lambda item: (item[0], item[1]))

    # deal each label's sessions round-robin by cumulative quota
    splits: list[list[int]] = [[], [], []]
    cum = np.cumsum(fractions)
    remaining = list(targets)
    leftovers = []
    for f, _, i in queue:
        k = int(np.searchsorted(cum, f, side="right"))
        k = min(k, 2)
        if remaining[k] > 0:
            splits[k].append(i)
            remaining[k] -= 1
        else:
            leftovers.append(i)
    for i in leftovers:
        k = int(np.argmax(remaining))
        splits[k].append(i)
        remaining[k] -= 1
    return tuple([graphs[i] for i in sorted(s)] for s in splits)


def _largest_remainder(n: int, fractions) -> list[int]:
    raw = [n * f for f in fractions]
    base = [int(np.floor(r)) for r in raw]
    rest = n - sum(base)
    order = sorted(range(len(raw)), key=lambda k: (-(raw[k] - base[k]), k))
    for k in order[:rest]:
        base[k] += 1
    return base


def _at_least_one(targets: list[int]) -> list[int]:
    targets = list(targets)
    for k in range(len(targets)):
        if targets[k] == 0:
            j = int(np.argmax(targets))
            targets[j] -= 1
            targets[k] += 1
    return targets


def standardize_graphs(graphs: Sequence[SessionGraph], scaler) -> list[SessionGraph]:
    return [SessionGraph(g.session, scaler.transform(g.x), g.edges, g.label) for g in graphs]

"""In-memory pipeline steps shared by the CLI, the experiment scripts and the tests."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .analysis import Scaler
from .config import MODEL_KINDS, PipelineConfig
from .data_model import AlertEvent
from .enrich import EnrichmentCache, FixtureClient, enrich_events
from .geo import IndexBinning, LabeledEvent, binary_label, label_events
from .gnn import graphs_proba, train_gnn
from .nn.metrics import auc_per_class, confusion_matrix
from .nn.models import Model
from .nn.train import EventSet, TrainResult, grouped_proba, safe_auc, sequences_proba, train_classifier, train_lstm
from .seeding import subseed
from .session_graph import SessionGraph, build_session_graphs, split_sessions, standardize_graphs
from .synth import generate


@dataclass
class Splits:
    train: list[SessionGraph]
    val: list[SessionGraph]
    test: list[SessionGraph]
    scaler: Scaler

    def names(self) -> dict[str, list[str]]:
        return {k: [str(g.session) for g in getattr(self, k)] for k in ("train", "val", "test")}


def label_and_graph(
    events: Sequence[AlertEvent], config: PipelineConfig, binning: IndexBinning | None = None
) -> tuple[list[LabeledEvent], IndexBinning, list[SessionGraph]]:
    labeled, binning = label_events(events, config.radius_km, config.counted(), binning)
    graphs = build_session_graphs(labeled, config.feature_order, config.self_loops)
    return labeled, binning, graphs


def split_raw(graphs: Sequence[SessionGraph], config: PipelineConfig):
    return split_sessions(graphs, tuple(config.split), seed=subseed(config.seed, "split"))


def make_splits(graphs: Sequence[SessionGraph], config: PipelineConfig) -> Splits:
    """Session split, then standardize every split with training-node statistics."""
    train, val, test = split_raw(graphs, config)
    scaler = Scaler.fit(np.vstack([g.x for g in train]))
    return Splits(*(standardize_graphs(s, scaler) for s in (train, val, test)), scaler)


def select(graphs: Sequence[SessionGraph], names: Sequence[str]) -> list[SessionGraph]:
    wanted = set(names)
    return [g for g in graphs if str(g.session) in wanted]


def binarize(graphs: Sequence[SessionGraph], threshold: int) -> list[SessionGraph]:
    """Relabel to 1 (safe) / 2 (prone) so the 1-based training code applies."""
    return [SessionGraph(g.session, g.x, g.edges, binary_label(g.label, threshold) + 1) for g in graphs]


def _sequences(graphs):
    return [(g.x, g.label) for g in graphs]


def train_model(kind: str, splits: Splits, config: PipelineConfig) -> TrainResult:
    mc = config.model(kind)
    tc = mc.train_config(config.seed, binary=mc.binary and kind == "logistic")
    train, val, test = splits.train, splits.val, splits.test
    if mc.binary:
        train, val, test = (binarize(s, config.binary_threshold) for s in (train, val, test))
        tc.n_classes = 2
    if kind in ("logistic", "ffnn"):
        return train_classifier(kind, EventSet.from_graphs(train), EventSet.from_graphs(val), tc, EventSet.from_graphs(test))
    if kind == "lstm":
        return train_lstm(_sequences(train), _sequences(val), tc, _sequences(test))
    if kind == "gnn":
        return train_gnn(train, val, test, tc)
    raise ValueError(f"unknown model {kind!r}")


def predict(kind: str, model: Model, graphs: Sequence[SessionGraph]) -> tuple[np.ndarray, np.ndarray]:
    """Session-level probabilities and 0-based labels for standardized graphs."""
    if kind in ("logistic", "ffnn"):
        return grouped_proba(model, EventSet.from_graphs(graphs))
    if kind == "lstm":
        return sequences_proba(model, _sequences(graphs))
    if kind == "gnn":
        return graphs_proba(model, list(graphs))
    raise ValueError(f"unknown model {kind!r}")


@dataclass
class Evaluation:
    macro_auc: float
    per_class: dict[int, float]
    confusion: np.ndarray
    n_sessions: int

    def to_dict(self) -> dict:
        return {
            "macro_auc": self.macro_auc,
            "per_class_auc": {str(k): v for k, v in self.per_class.items()},
            "confusion": self.confusion.tolist(),
            "n_sessions": self.n_sessions,
        }


def evaluate(kind: str, model: Model, graphs: Sequence[SessionGraph]) -> Evaluation:
    probs, labels = predict(kind, model, graphs)
    per_class = auc_per_class(probs, labels)
    return Evaluation(
        macro_auc=safe_auc(probs, labels),
        per_class={k + 1: v for k, v in per_class.items()},
        confusion=confusion_matrix(probs.argmax(axis=1), labels, probs.shape[1]),
        n_sessions=len(labels),
    )


@dataclass
class BenchmarkResult:
    results: dict[str, TrainResult] = field(default_factory=dict)
    splits: Splits | None = None

    def test_auc(self) -> dict[str, float]:
        return {k: r.best.test_auc for k, r in self.results.items()}


def synthetic_graphs(config: PipelineConfig) -> list[SessionGraph]:
    """generate -> enrich from fixtures -> label -> session graphs, all in memory."""
    ds = generate(config.synth_config())
    res = enrich_events(ds.events, FixtureClient(ds.fixtures), EnrichmentCache(), max_workers=1)
    return label_and_graph(res.enriched, config)[2]


def run_benchmark(config: PipelineConfig, kinds: Sequence[str] = MODEL_KINDS, graphs=None) -> BenchmarkResult:
    graphs = synthetic_graphs(config) if graphs is None else graphs
    splits = make_splits(graphs, config)
    out = BenchmarkResult(splits=splits)
    for kind in kinds:
        out.results[kind] = train_model(kind, splits, config)
    return out

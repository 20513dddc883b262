"""Mini-batch Adam training loop shared by all four classifiers."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..seeding import substream
from .layers import softmax
from .losses import PROB_FLOOR
from .metrics import DegenerateLabels, auc_macro
from .models import FeedForward, LogisticRegression, LstmClassifier, Model, SequenceBatch
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "loss", "train_auc", "val_auc", "test_auc")


class EmptyDataset(ValueError):
    pass


class NotStandardized(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 64
    patience: int | None = 10
    seed: int = 0
    n_classes: int = 5
    hidden: int = 64
    ffnn_hidden: tuple[int, ...] = (200, 200)
    depth: int = 2
    binary: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ffnn_hidden"] = list(self.ffnn_hidden)
        return d


@dataclass
class EpochLog:
    epoch: int
    loss: float
    train_auc: float
    val_auc: float
    test_auc: float = math.nan


@dataclass
class TrainResult:
    model: Model
    log: list[EpochLog]
    best_epoch: int
    optimizer: AdamState
    config: TrainConfig
    extras: dict = field(default_factory=dict)

    @property
    def best(self) -> EpochLog:
        return next(r for r in self.log if r.epoch == self.best_epoch)


def write_log(path: str | Path, rows: Sequence[EpochLog]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r.epoch] + [f"{getattr(r, c):.6f}" for c in LOG_COLUMNS[1:]])


def safe_auc(probs, labels) -> float:
    try:
        return auc_macro(probs, labels)
    except DegenerateLabels:
        return math.nan


def fit(
    model: Model,
    n_train: int,
    make_batch: Callable[[np.ndarray], tuple],
    evaluate: dict[str, Callable[[], float] | None],
    config: TrainConfig,
) -> TrainResult:
    """Shuffle, step Adam on every mini-batch, evaluate, keep the best-val parameters."""
    if n_train == 0:
        raise EmptyDataset("training set is empty")
    rng = substream(config.seed, "shuffle")
    opt = AdamState(lr=config.lr)
    rows: list[EpochLog] = []
    best_auc, best_epoch, best_params, stale = -math.inf, 0, model.copy_params(), 0

    def score(name):
        fn = evaluate.get(name)
        return fn() if fn is not None else math.nan

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_train)
        total = 0.0
        for start in range(0, n_train, config.batch_size):
            idx = order[start : start + config.batch_size]
            inputs, labels = make_batch(idx)
            loss, grads = model.loss_and_grads(inputs, labels)
            adam_step(opt, model.params, grads)
            total += loss * len(idx)
        row = EpochLog(epoch, total / n_train, score("train"), score("val"), score("test"))
        rows.append(row)
        log.debug("epoch %03d loss %.5f train %.4f val %.4f test %.4f", *[getattr(row, c) for c in LOG_COLUMNS])

        monitor = row.val_auc if not math.isnan(row.val_auc) else row.train_auc
        if monitor > best_auc:
            best_auc, best_epoch, best_params, stale = monitor, epoch, model.copy_params(), 0
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                break
    model.load_params(best_params)
    return TrainResult(model, rows, best_epoch, opt, config)


# --- per-event classifiers -------------------------------------------------


@dataclass
class EventSet:
    """Per-event features with 1-based labels; ``group`` ties events to a session."""

    x: np.ndarray
    y: np.ndarray
    group: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.group is not None:
            self.group = np.asarray(self.group, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.y)

    @classmethod
    def from_graphs(cls, graphs) -> "EventSet":
        if not graphs:
            return cls(np.zeros((0, 0)), np.zeros(0), np.zeros(0))
        x = np.vstack([g.x for g in graphs])
        y = np.concatenate([np.full(g.n_nodes, g.label) for g in graphs])
        group = np.concatenate([np.full(g.n_nodes, k) for k, g in enumerate(graphs)])
        return cls(x, y, group)


def grouped_proba(model: Model, data: EventSet) -> tuple[np.ndarray, np.ndarray]:
    """Class probabilities and 0-based labels, pooled per session when groups are given.

    Pooling treats events as independent evidence: the session distribution is
    the normalized geometric mean of its events' distributions.
    """
    probs = model.predict_proba(data.x)
    labels = data.y - 1
    if data.group is None:
        return probs, labels
    n = int(data.group.max()) + 1
    counts = np.bincount(data.group, minlength=n)[:, None]
    logp = np.zeros((n, probs.shape[1]))
    np.add.at(logp, data.group, np.log(np.clip(probs, PROB_FLOOR, 1.0)))
    pooled = softmax(logp / counts)
    glabels = np.zeros(n, dtype=np.int64)
    np.maximum.at(glabels, data.group, labels)
    return pooled, glabels


def make_event_model(kind: str, n_in: int, config: TrainConfig) -> Model:
    rng = substream(config.seed, f"init/{kind}")
    if kind == "logistic":
        return LogisticRegression(n_in, config.n_classes, binary=config.binary, rng=rng)
    if kind == "ffnn":
        return FeedForward(n_in, config.ffnn_hidden, config.n_classes, rng=rng)
    raise ValueError(f"unknown per-event model {kind!r}")


def train_classifier(
    kind: str,
    train: EventSet,
    val: EventSet,
    config: TrainConfig | None = None,
    test: EventSet | None = None,
) -> TrainResult:
    """Train logistic regression or the 2x200 ReLU net with Adam + cross-entropy.

    Inputs must already be standardized with training-set statistics. Labels
    are safety indices 1..n_classes (or 0/1 + 1 in binary mode).
    """
    config = config or TrainConfig()
    if len(train) == 0:
        raise EmptyDataset("training set is empty")
    if np.any(np.abs(train.x.mean(axis=0)) > 0.1):
        raise NotStandardized("training features have column means > 0.1; standardize first")
    model = make_event_model(kind, train.x.shape[1], config)

    def evaluator(data):
        if data is None or len(data) == 0:
            return None
        return lambda: safe_auc(*grouped_proba(model, data))

    return fit(
        model,
        len(train),
        lambda idx: (train.x[idx], train.y[idx] - 1),
        {"train": evaluator(train), "val": evaluator(val), "test": evaluator(test)},
        config,
    )


# --- LSTM --------------------------------------------------------------------


class EmptySession(ValueError):
    pass


def sequences_proba(model: LstmClassifier, sessions, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    probs = [
        model.predict_proba(SequenceBatch.from_sequences([s for s, _ in sessions[i : i + batch_size]]))
        for i in range(0, len(sessions), batch_size)
    ]
    return np.vstack(probs), np.array([label - 1 for _, label in sessions])


def train_lstm(
    train: Sequence[tuple[np.ndarray, int]],
    val: Sequence[tuple[np.ndarray, int]],
    config: TrainConfig | None = None,
    test: Sequence[tuple[np.ndarray, int]] | None = None,
) -> TrainResult:
    """LSTM(hidden) over time-ordered event sequences -> softmax over safety index."""
    config = config or TrainConfig(batch_size=20)
    for split in (train, val, test or ()):
        for seq, _ in split:
            if len(seq) == 0:
                raise EmptySession("session with no events")
    if not train:
        raise EmptyDataset("training set is empty")
    n_in = np.asarray(train[0][0]).shape[1]
    model = LstmClassifier(n_in, config.hidden, config.n_classes, rng=substream(config.seed, "init/lstm"))

    def evaluator(data):
        if not data:
            return None
        return lambda: safe_auc(*sequences_proba(model, data))

    def make_batch(idx):
        chosen = [train[i] for i in idx]
        return SequenceBatch.from_sequences([s for s, _ in chosen]), np.array([lab - 1 for _, lab in chosen])

    return fit(
        model,
        len(train),
        make_batch,
        {"train": evaluator(train), "val": evaluator(val), "test": evaluator(test)},
        config,
    )

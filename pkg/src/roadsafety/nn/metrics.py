"""ROC AUC via the Mann-Whitney U statistic, plus macro one-vs-rest averaging."""

from __future__ import annotations

import logging

import numpy as np
from scipy.stats import rankdata

log = logging.getLogger(__name__)


class DegenerateLabels(ValueError):
    pass


def auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), from average ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("need at least one positive and one negative")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_per_class(probs, labels, n_classes: int | None = None) -> dict[int, float]:
    """One-vs-rest AUC per class id; classes without both positives and negatives are omitted."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    n_classes = n_classes or probs.shape[1]
    out = {}
    for c in range(n_classes):
        pos = labels == c
        if pos.any() and not pos.all():
            out[c] = auc(probs[:, c], pos)
    return out


def auc_macro(probs, labels) -> float:
    per = auc_per_class(probs, labels)
    if not per:
        raise DegenerateLabels("no class has both positives and negatives")
    skipped = sorted(set(range(np.asarray(probs).shape[1])) - set(per))
    if skipped:
        log.info("macro AUC skips classes without positives or negatives: %s", skipped)
    return float(np.mean(list(per.values())))


def confusion_matrix(pred, labels, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(pred)), 1)
    return cm

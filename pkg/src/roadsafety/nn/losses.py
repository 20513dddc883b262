from __future__ import annotations

import numpy as np

from .layers import ShapeMismatch

PROB_FLOOR = 1e-12


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of integer class ids under row-stochastic ``probs``."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ShapeMismatch(f"probs {probs.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ValueError("label out of range")
    p = np.clip(probs[np.arange(len(labels)), labels], PROB_FLOOR, 1.0)
    return float(-np.mean(np.log(p)))


def cross_entropy_grad(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(mean CE)/d(probs); zero where the probability sits on the clamp floor."""
    n = len(labels)
    grad = np.zeros_like(probs, dtype=np.float64)
    rows = np.arange(n)
    p = probs[rows, labels]
    grad[rows, labels] = np.where(p > PROB_FLOOR, -1.0 / (n * np.maximum(p, PROB_FLOOR)), 0.0)
    return grad


def squared_error(pred: np.ndarray, target: np.ndarray) -> float:
    d = np.asarray(pred, dtype=np.float64) - target
    return float(np.sum(d * d) / len(d))

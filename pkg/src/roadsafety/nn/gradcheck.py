from __future__ import annotations

from typing import Callable

import numpy as np

# Gradients smaller than this are compared absolutely; central differences
# carry ~1e-11 of round-off, so pure relative error is meaningless near zero.
REL_FLOOR = 1e-7


def numerical_gradients(loss_fn: Callable[[], float], params: dict[str, np.ndarray], eps: float = 1e-5):
    """Central differences of ``loss_fn`` w.r.t. every entry of every parameter (perturbed in place)."""
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return np.abs(analytic - numeric) / denom


def check_gradients(model, inputs, labels, eps: float = 1e-5) -> dict[str, float]:
    """Max relative error per parameter between backprop and central differences."""
    _, analytic = model.loss_and_grads(inputs, labels)
    numeric = numerical_gradients(lambda: model.loss(inputs, labels), model.params, eps)
    return {name: float(relative_error(analytic[name], numeric[name]).max()) for name in model.params}

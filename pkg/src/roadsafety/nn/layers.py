"""Dense layers and activations on plain float64 numpy arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeMismatch(ValueError):
    pass


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


ACTIVATIONS = {
    "identity": lambda z: z,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": np.tanh,
    "softmax": softmax,
}


def activation_backward(name: str, grad_out: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. pre-activation, given gradient w.r.t. the activation output."""
    if name == "identity":
        return grad_out
    if name == "relu":
        return grad_out * (out > 0)
    if name == "sigmoid":
        return grad_out * out * (1.0 - out)
    if name == "tanh":
        return grad_out * (1.0 - out * out)
    if name == "softmax":
        return out * (grad_out - np.sum(grad_out * out, axis=-1, keepdims=True))
    raise ValueError(f"unknown activation {name!r}")


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values after {where}")
    return x


@dataclass
class DenseLayer:
    W: np.ndarray  # out x in
    b: np.ndarray  # out
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeMismatch(f"W {self.W.shape} and b {self.b.shape} are inconsistent")

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int, n_out: int, activation: str = "identity") -> "DenseLayer":
        return cls(glorot_uniform(rng, n_out, n_in), np.zeros(n_out), activation)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return dense_forward(self, x)


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    return affine_act(x, layer.W, layer.b, layer.activation)[0]


def affine_act(x: np.ndarray, W: np.ndarray, b: np.ndarray, activation: str):
    """activation(x W^T + b); returns (output, cache for :func:`affine_act_backward`)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ShapeMismatch(f"input {x.shape} does not match weights {W.shape}")
    out = ACTIVATIONS[activation](x @ W.T + b)
    check_finite(out, f"dense/{activation}")
    return out, (x, W, out, activation)


def affine_act_backward(grad_out: np.ndarray, cache):
    """Returns (grad_x, grad_W, grad_b)."""
    x, W, out, activation = cache
    gz = activation_backward(activation, grad_out, out)
    return gz @ W, gz.T @ x, gz.sum(axis=0)

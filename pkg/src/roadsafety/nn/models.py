"""Baseline classifiers: logistic regression, feed-forward net and LSTM.

Every model keeps its weights in ``params`` (name -> array) and exposes
``forward`` / ``backward`` so the optimizer, checkpointing and gradient
checker can treat them uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import ShapeMismatch, affine_act, affine_act_backward, check_finite, glorot_uniform, sigmoid
from .losses import cross_entropy, cross_entropy_grad


class Model:
    kind = "model"
    params: dict[str, np.ndarray]

    def forward(self, inputs):
        raise NotImplementedError

    def backward(self, cache, grad_probs) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def config(self) -> dict:
        raise NotImplementedError

    def predict_proba(self, inputs) -> np.ndarray:
        return self.forward(inputs)[0]

    def loss(self, inputs, labels) -> float:
        return cross_entropy(self.predict_proba(inputs), labels)

    def loss_and_grads(self, inputs, labels):
        probs, cache = self.forward(inputs)
        loss = cross_entropy(probs, labels)
        return loss, self.backward(cache, cross_entropy_grad(probs, labels))

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, params: dict[str, np.ndarray]) -> None:
        for k, v in params.items():
            if self.params[k].shape != v.shape:
                raise ShapeMismatch(f"{k}: expected {self.params[k].shape}, got {v.shape}")
            self.params[k] = np.array(v, dtype=np.float64)


class LogisticRegression(Model):
    """Softmax regression over ``n_classes``; with ``binary=True`` a single sigmoid unit.

    The binary form outputs ``[1 - p, p]`` so it plugs into the same loss and
    metrics as the multinomial one.
    """

    kind = "logistic"

    def __init__(self, n_in: int, n_classes: int = 5, binary: bool = False, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_classes, self.binary = n_in, (2 if binary else n_classes), binary
        n_out = 1 if binary else n_classes
        self.params = {"W": glorot_uniform(rng, n_out, n_in), "b": np.zeros(n_out)}

    def config(self):
        return {"n_in": self.n_in, "n_classes": self.n_classes, "binary": self.binary}

    def forward(self, x):
        act = "sigmoid" if self.binary else "softmax"
        out, cache = affine_act(x, self.params["W"], self.params["b"], act)
        if self.binary:
            out = np.hstack([1.0 - out, out])
        return out, cache

    def backward(self, cache, grad_probs):
        if self.binary:
            grad_probs = grad_probs[:, 1:] - grad_probs[:, :1]
        _, gW, gb = affine_act_backward(grad_probs, cache)
        return {"W": gW, "b": gb}


class FeedForward(Model):
    kind = "ffnn"

    def __init__(self, n_in: int, hidden=(200, 200), n_classes: int = 5, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.hidden, self.n_classes = n_in, tuple(hidden), n_classes
        sizes = [n_in, *self.hidden, n_classes]
        self.params = {}
        for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
            self.params[f"W{i}"] = glorot_uniform(rng, b, a)
            self.params[f"b{i}"] = np.zeros(b)
        self.n_layers = len(sizes) - 1

    def config(self):
        return {"n_in": self.n_in, "hidden": list(self.hidden), "n_classes": self.n_classes}

    def forward(self, x):
        caches = []
        h = x
        for i in range(self.n_layers):
            act = "softmax" if i == self.n_layers - 1 else "relu"
            h, c = affine_act(h, self.params[f"W{i}"], self.params[f"b{i}"], act)
            caches.append(c)
        return h, caches

    def backward(self, caches, grad_probs):
        grads = {}
        g = grad_probs
        for i in reversed(range(self.n_layers)):
            g, grads[f"W{i}"], grads[f"b{i}"] = affine_act_backward(g, caches[i])
        return grads


@dataclass
class SequenceBatch:
    """Right-padded sequences: ``x`` is B x T x n_in, ``lengths`` the true lengths."""

    x: np.ndarray
    lengths: np.ndarray

    @classmethod
    def from_sequences(cls, seqs) -> "SequenceBatch":
        if not seqs:
            raise ValueError("empty batch")
        lengths = np.array([len(s) for s in seqs])
        if lengths.min() < 1:
            raise ValueError("empty sequence")
        n_in = np.asarray(seqs[0]).shape[1]
        x = np.zeros((len(seqs), lengths.max(), n_in))
        for i, s in enumerate(seqs):
            x[i, : len(s)] = s
        return cls(x, lengths)


GATES = ("i", "f", "o", "g")


@dataclass
class LstmCell:
    """Gate weights act on the concatenation [x_t; h_{t-1}]."""

    W: dict[str, np.ndarray]
    b: dict[str, np.ndarray]

    @property
    def hidden(self) -> int:
        return self.W["i"].shape[0]

    @classmethod
    def init(cls, rng, n_in: int, hidden: int) -> "LstmCell":
        W = {g: glorot_uniform(rng, hidden, n_in + hidden) for g in GATES}
        return cls(W, {g: np.zeros(hidden) for g in GATES})


def _lstm_run(W, b, x, lengths):
    """Masked LSTM over a padded batch; returns final hidden state and per-step caches."""
    B, T, n_in = x.shape
    H = W["i"].shape[0]
    for g in GATES:
        if W[g].shape != (H, n_in + H):
            raise ShapeMismatch(f"gate {g} weights {W[g].shape}, expected {(H, n_in + H)}")
    Wcat = np.vstack([W[g] for g in GATES])
    bcat = np.concatenate([b[g] for g in GATES])
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    caches = []
    for t in range(T):
        m = (t < lengths).astype(np.float64)[:, None]
        z = np.hstack([x[:, t], h])
        a = z @ Wcat.T + bcat
        i, f, o = sigmoid(a[:, :H]), sigmoid(a[:, H : 2 * H]), sigmoid(a[:, 2 * H : 3 * H])
        g = np.tanh(a[:, 3 * H :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        caches.append((m, z, c, i, f, o, g, tc))
        c = m * c_new + (1 - m) * c
        h = m * h_new + (1 - m) * h
    check_finite(h, "lstm")
    return h, (caches, Wcat, H, n_in)


def _lstm_backward(dh, cache):
    caches, Wcat, H, n_in = cache
    dW = np.zeros_like(Wcat)
    db = np.zeros(Wcat.shape[0])
    dc = np.zeros_like(dh)
    for m, z, c_prev, i, f, o, g, tc in reversed(caches):
        dh_new, dh_keep = m * dh, (1 - m) * dh
        dc_new, dc_keep = m * dc, (1 - m) * dc
        do = dh_new * tc
        dc_new = dc_new + dh_new * o * (1 - tc * tc)
        da = np.hstack([
            dc_new * g * i * (1 - i),
            dc_new * c_prev * f * (1 - f),
            do * o * (1 - o),
            dc_new * i * (1 - g * g),
        ])
        dW += da.T @ z
        db += da.sum(axis=0)
        dz = da @ Wcat
        dh = dz[:, n_in:] + dh_keep
        dc = dc_new * f + dc_keep
    grads_W = {gate: dW[k * H : (k + 1) * H] for k, gate in enumerate(GATES)}
    grads_b = {gate: db[k * H : (k + 1) * H] for k, gate in enumerate(GATES)}
    return grads_W, grads_b


def lstm_forward(cell: LstmCell, sequence: np.ndarray) -> np.ndarray:
    """Final hidden state of one T x n_in sequence (h0 = c0 = 0)."""
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.ndim != 2 or len(seq) < 1:
        raise ShapeMismatch(f"sequence must be T x n_in with T >= 1, got {seq.shape}")
    h, _ = _lstm_run(cell.W, cell.b, seq[None], np.array([len(seq)]))
    return h[0]


class LstmClassifier(Model):
    """LSTM over the event sequence, softmax head on the final hidden state."""

    kind = "lstm"

    def __init__(self, n_in: int, hidden: int = 64, n_classes: int = 5, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.hidden, self.n_classes = n_in, hidden, n_classes
        cell = LstmCell.init(rng, n_in, hidden)
        self.params = {f"W_{g}": cell.W[g] for g in GATES}
        self.params.update({f"b_{g}": cell.b[g] for g in GATES})
        self.params["W_out"] = glorot_uniform(rng, n_classes, hidden)
        self.params["b_out"] = np.zeros(n_classes)

    def config(self):
        return {"n_in": self.n_in, "hidden": self.hidden, "n_classes": self.n_classes}

    @property
    def cell(self) -> LstmCell:
        return LstmCell({g: self.params[f"W_{g}"] for g in GATES}, {g: self.params[f"b_{g}"] for g in GATES})

    def forward(self, batch: SequenceBatch):
        cell = self.cell
        h, lcache = _lstm_run(cell.W, cell.b, batch.x, batch.lengths)
        probs, hcache = affine_act(h, self.params["W_out"], self.params["b_out"], "softmax")
        return probs, (lcache, hcache)

    def backward(self, cache, grad_probs):
        lcache, hcache = cache
        dh, gW, gb = affine_act_backward(grad_probs, hcache)
        grads = {"W_out": gW, "b_out": gb}
        dW, db = _lstm_backward(dh, lcache)
        grads.update({f"W_{g}": dW[g] for g in GATES})
        grads.update({f"b_{g}": db[g] for g in GATES})
        return grads

"""SageConv message passing, mean-pool readout and the session-graph classifier.

Each conv layer computes, for node i with in-neighbours N(i)::

    out_i = relu(W_self x_i + W_neigh mean_{j in N(i)} x_j + b)

with a zero aggregate when N(i) is empty. Edge features are not used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .nn.layers import ShapeMismatch, affine_act, affine_act_backward, check_finite, glorot_uniform
from .nn.models import Model
from .nn.train import TrainConfig, fit, safe_auc
from .seeding import substream
from .session_graph import GraphBatch


class InvalidEdgeIndex(ValueError):
    pass


class EmptyGraph(ValueError):
    pass


def mean_aggregator(edges: np.ndarray, n_nodes: int) -> sparse.csr_matrix:
    """Sparse A with A[i, j] = 1/indeg(i) for every edge j -> i."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n_nodes):
        raise InvalidEdgeIndex(f"edge endpoint outside [0, {n_nodes})")
    src, dst = edges[:, 0], edges[:, 1]
    indeg = np.bincount(dst, minlength=n_nodes).astype(np.float64)
    weights = 1.0 / indeg[dst] if len(dst) else np.zeros(0)
    return sparse.csr_matrix((weights, (dst, src)), shape=(n_nodes, n_nodes))


def mean_pool(membership: np.ndarray, n_graphs: int) -> sparse.csr_matrix:
    membership = np.asarray(membership, dtype=np.int64)
    counts = np.bincount(membership, minlength=n_graphs).astype(np.float64)
    if np.any(counts == 0):
        raise EmptyGraph("a graph in the batch has no nodes")
    n = len(membership)
    return sparse.csr_matrix((1.0 / counts[membership], (membership, np.arange(n))), shape=(n_graphs, n))


@dataclass
class SageConvLayer:
    W_self: np.ndarray  # out x in
    W_neigh: np.ndarray  # out x in
    b: np.ndarray

    @classmethod
    def init(cls, rng, n_in: int, n_out: int) -> "SageConvLayer":
        return cls(glorot_uniform(rng, n_out, n_in), glorot_uniform(rng, n_out, n_in), np.zeros(n_out))


def _conv(x, agg_matrix, W_self, W_neigh, b):
    if x.shape[1] != W_self.shape[1] or W_self.shape != W_neigh.shape:
        raise ShapeMismatch(f"node features {x.shape} vs weights {W_self.shape}/{W_neigh.shape}")
    agg = agg_matrix @ x
    out = np.maximum(x @ W_self.T + agg @ W_neigh.T + b, 0.0)
    check_finite(out, "sage_conv")
    return out, (x, agg, agg_matrix, out)


def _conv_backward(g_out, cache, W_self, W_neigh):
    x, agg, agg_matrix, out = cache
    gz = g_out * (out > 0)
    gx = gz @ W_self + agg_matrix.T @ (gz @ W_neigh)
    return gx, gz.T @ x, gz.T @ agg, gz.sum(axis=0)


def sage_conv_forward(layer: SageConvLayer, x: np.ndarray, edges: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return _conv(x, mean_aggregator(edges, len(x)), layer.W_self, layer.W_neigh, layer.b)[0]


def readout_mean(h: np.ndarray, membership: np.ndarray, n_graphs: int | None = None) -> np.ndarray:
    membership = np.asarray(membership)
    if n_graphs is None:
        n_graphs = int(membership.max()) + 1 if len(membership) else 0
    if len(membership) != len(h):
        raise ShapeMismatch("membership must cover every node")
    return mean_pool(membership, n_graphs) @ h


class GnnModel(Model):
    """Stacked SageConv layers -> mean readout -> softmax head."""

    kind = "gnn"

    def __init__(self, n_in: int = 14, hidden: int = 64, n_classes: int = 5, depth: int = 2, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.hidden, self.n_classes, self.depth = n_in, hidden, n_classes, depth
        self.params = {}
        sizes = [n_in] + [hidden] * depth
        for k, (a, b) in enumerate(zip(sizes, sizes[1:])):
            layer = SageConvLayer.init(rng, a, b)
            self.params[f"conv{k}_W_self"] = layer.W_self
            self.params[f"conv{k}_W_neigh"] = layer.W_neigh
            self.params[f"conv{k}_b"] = layer.b
        self.params["head_W"] = glorot_uniform(rng, n_classes, hidden)
        self.params["head_b"] = np.zeros(n_classes)

    def config(self):
        return {"n_in": self.n_in, "hidden": self.hidden, "n_classes": self.n_classes, "depth": self.depth}

    def layer(self, k: int) -> SageConvLayer:
        p = self.params
        return SageConvLayer(p[f"conv{k}_W_self"], p[f"conv{k}_W_neigh"], p[f"conv{k}_b"])

    def forward(self, batch: GraphBatch):
        agg_matrix = mean_aggregator(batch.edges, len(batch.x))
        pool = mean_pool(batch.membership, batch.n_graphs)
        h = batch.x
        caches = []
        for k in range(self.depth):
            L = self.layer(k)
            h, c = _conv(h, agg_matrix, L.W_self, L.W_neigh, L.b)
            caches.append(c)
        r = pool @ h
        probs, hc = affine_act(r, self.params["head_W"], self.params["head_b"], "softmax")
        return probs, (caches, pool, hc)

    def backward(self, cache, grad_probs):
        caches, pool, hc = cache
        gr, gW, gb = affine_act_backward(grad_probs, hc)
        grads = {"head_W": gW, "head_b": gb}
        g = pool.T @ gr
        for k in reversed(range(self.depth)):
            L = self.layer(k)
            g, gs, gn, gbk = _conv_backward(g, caches[k], L.W_self, L.W_neigh)
            grads[f"conv{k}_W_self"], grads[f"conv{k}_W_neigh"], grads[f"conv{k}_b"] = gs, gn, gbk
        return grads


def gnn_forward(model: GnnModel, batch: GraphBatch) -> np.ndarray:
    return model.predict_proba(batch)


class EmptySplit(ValueError):
    pass


def graphs_proba(model: GnnModel, graphs, batch_size: int = 200) -> tuple[np.ndarray, np.ndarray]:
    probs = [
        model.predict_proba(GraphBatch.from_graphs(graphs[i : i + batch_size]))
        for i in range(0, len(graphs), batch_size)
    ]
    return np.vstack(probs), np.array([g.label - 1 for g in graphs])


def train_gnn(train, val, test=None, config=None):
    """Adam + cross-entropy over shuffled batches of session graphs.

    The log mirrors a Table-style row per epoch (loss, train/val/test macro
    AUC); the returned model holds the best-validation parameters.
    """
    config = config or TrainConfig(batch_size=20)
    if not train or not val:
        raise EmptySplit("train and validation splits must be non-empty")
    seen = {g.session for g in train}
    if any(g.session in seen for g in list(val) + list(test or [])):
        raise ValueError("splits share sessions")
    rng = substream(config.seed, "init/gnn")
    model = GnnModel(train[0].x.shape[1], config.hidden, config.n_classes, config.depth, rng=rng)

    def evaluator(data):
        if not data:
            return None
        return lambda: safe_auc(*graphs_proba(model, data))

    def make_batch(idx):
        batch = GraphBatch.from_graphs([train[i] for i in idx])
        return batch, batch.labels - 1

    return fit(
        model,
        len(train),
        make_batch,
        {"train": evaluator(train), "val": evaluator(val), "test": evaluator(test)},
        config,
    )

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from roadsafety.nn.gradcheck import check_gradients, numerical_gradients
from roadsafety.nn.layers import DenseLayer, ShapeMismatch, affine_act, affine_act_backward, dense_forward, softmax
from roadsafety.nn.losses import cross_entropy, squared_error
from roadsafety.nn.metrics import DegenerateLabels, auc, auc_macro, auc_per_class, confusion_matrix
from roadsafety.nn.models import (
    FeedForward,
    LogisticRegression,
    LstmCell,
    LstmClassifier,
    SequenceBatch,
    lstm_forward,
)
from roadsafety.nn.optim import AdamState, adam_step
from roadsafety.nn.train import (
    EmptyDataset,
    EmptySession,
    EventSet,
    NotStandardized,
    TrainConfig,
    train_classifier,
    train_lstm,
)

# scalar LSTM oracle (50-digit mpmath): x1 = 0.5, then x2 = -1.0
GATE_X = {"i": 0.3, "f": -0.2, "o": 0.7, "g": 1.1}
GATE_H = {"i": 0.5, "f": -0.4, "o": 0.2, "g": 0.9}
GATE_B = {"i": 0.1, "f": 0.4, "o": -0.3, "g": 0.05}
H1 = 0.15019537004958197023
H2 = -0.040499302762284037346


# --- layers and losses -------------------------------------------------------------


def test_dense_examples():
    x = np.array([[1.5, -2.0, 0.25]])
    assert np.array_equal(dense_forward(DenseLayer(np.eye(3), np.zeros(3)), x), x)
    np.testing.assert_allclose(softmax(np.zeros((1, 5))), [[0.2] * 5], atol=1e-15)
    assert dense_forward(DenseLayer(np.eye(2), np.zeros(2), "relu"), np.array([[-1.0, 2.0]])).tolist() == [[0.0, 2.0]]
    with pytest.raises(ShapeMismatch):
        dense_forward(DenseLayer(np.eye(2), np.zeros(2)), x)
    with pytest.raises(ValueError):
        DenseLayer(np.eye(2), np.zeros(2), "swish")


@given(arrays(np.float64, (4, 6), elements=st.floats(-700, 700)))
def test_softmax_rows_are_distributions(z):
    p = softmax(z)
    assert np.all((p >= 0) & (p <= 1))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_non_finite_activation_raises():
    with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
        affine_act(np.array([[1e308]]), np.array([[10.0]]), np.zeros(1), "identity")


def test_cross_entropy_examples():
    assert cross_entropy(np.eye(3), np.arange(3)) <= 1e-11
    assert cross_entropy(np.full((4, 5), 0.2), np.array([0, 1, 2, 3])) == pytest.approx(math.log(5))
    assert cross_entropy(np.array([[0.5, 0.5]]), np.array([1])) == pytest.approx(math.log(2))
    # clamped, not infinite
    assert cross_entropy(np.array([[1.0, 0.0]]), np.array([1])) == pytest.approx(-math.log(1e-12))
    with pytest.raises(ShapeMismatch):
        cross_entropy(np.eye(3), np.arange(2))


def test_linear_squared_error_gradient():
    x = np.array([[0.5, -1.5, 2.0]])
    W, b, y = np.array([[0.2, 0.1, -0.3]]), np.array([0.05]), np.array([[1.0]])
    yhat, cache = affine_act(x, W, b, "identity")
    _, gW, gb = affine_act_backward(2 * (yhat - y), cache)
    np.testing.assert_allclose(gW, 2 * (yhat - y) * x)
    np.testing.assert_allclose(gb, 2 * (yhat - y)[0])
    params = {"W": W.copy(), "b": b.copy()}
    num = numerical_gradients(lambda: squared_error(affine_act(x, params["W"], params["b"], "identity")[0], y), params)
    np.testing.assert_allclose(num["W"], gW, rtol=1e-7)


def test_zero_weight_softmax_bias_gradient():
    model = LogisticRegression(3, 5)
    model.params["W"][:] = 0.0
    x = np.random.default_rng(0).normal(size=(4, 3))
    labels = np.array([0, 0, 1, 1])
    _, grads = model.loss_and_grads(x, labels)
    np.testing.assert_allclose(grads["b"], [0.2 - 0.5, 0.2 - 0.5, 0.2, 0.2, 0.2], atol=1e-15)


# --- gradient checks -------------------------------------------------------------


def assert_grads_ok(errors, tol=1e-4):
    bad = {k: v for k, v in errors.items() if not v <= tol}
    assert not bad, bad


def test_gradcheck_logistic(rng):
    x = rng.normal(size=(6, 4))
    assert_grads_ok(check_gradients(LogisticRegression(4, 5, rng=rng), x, rng.integers(0, 5, 6)))
    assert_grads_ok(check_gradients(LogisticRegression(4, binary=True, rng=rng), x, rng.integers(0, 2, 6)))


def test_gradcheck_ffnn(rng):
    model = FeedForward(5, (7, 6), 5, rng=rng)
    assert_grads_ok(check_gradients(model, rng.normal(size=(8, 5)), rng.integers(0, 5, 8)))


def test_gradcheck_lstm_through_time(rng):
    model = LstmClassifier(3, hidden=4, n_classes=5, rng=rng)
    for k in model.params:
        model.params[k] = model.params[k] + rng.normal(scale=0.3, size=model.params[k].shape)
    batch = SequenceBatch.from_sequences([rng.normal(size=(t, 3)) for t in (3, 1, 2, 3)])
    assert_grads_ok(check_gradients(model, batch, np.array([0, 3, 2, 4])))


# --- optimizer -------------------------------------------------------------------


def test_adam_first_step():
    params = {"w": np.array([0.0])}
    state = AdamState(lr=0.001)
    adam_step(state, params, {"w": np.array([1.0])})
    assert abs(params["w"][0] - (-0.000999999990000001)) < 1e-15
    assert abs(params["w"][0] + 0.001) < 1e-6
    assert state.t == 1


def test_adam_zero_gradient_is_a_no_op(rng):
    params = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=2)}
    before = {k: v.copy() for k, v in params.items()}
    state = AdamState()
    for _ in range(5):
        adam_step(state, params, {k: np.zeros_like(v) for k, v in params.items()})
    for k in params:
        assert np.array_equal(params[k], before[k])


def test_adam_deterministic_and_serializable():
    def run():
        r = np.random.default_rng(3)
        params = {"w": r.normal(size=(2, 2))}
        state = AdamState()
        for _ in range(10):
            adam_step(state, params, {"w": r.normal(size=(2, 2))})
        return params["w"], state

    (a, sa), (b, _) = run(), run()
    assert np.array_equal(a, b)
    back = AdamState.from_dict(sa.to_dict(), {"w": (2, 2)})
    assert back.t == sa.t and np.array_equal(back.m["w"], sa.m["w"])
    with pytest.raises(ShapeMismatch):
        adam_step(AdamState(), {"w": np.zeros(2)}, {"w": np.zeros(3)})


# --- AUC -------------------------------------------------------------------------


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    return sum((p > n) + 0.5 * (p == n) for p in pos for n in neg) / (len(pos) * len(neg))


def test_auc_examples():
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    with pytest.raises(DegenerateLabels):
        auc([0.1, 0.2], [1, 1])


@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=40))
def test_auc_matches_pair_enumeration(pairs):
    scores = [s for s, _ in pairs]
    labels = [y for _, y in pairs]
    if all(labels) or not any(labels):
        return
    assert auc(scores, labels) == pytest.approx(brute_auc(scores, labels), abs=1e-12)


# scores on a 0.01 grid so the float transforms below stay strictly monotone
@given(st.lists(st.tuples(st.integers(-500, 500), st.booleans()), min_size=2, max_size=40))
def test_auc_monotone_invariance(pairs):
    s = np.array([p for p, _ in pairs]) / 100.0
    y = np.array([q for _, q in pairs])
    if y.all() or not y.any():
        return
    assert auc(s, y) == auc(np.exp(s) * 3 + 1, y) == auc(s**3, y)


def test_macro_auc_skips_absent_classes():
    probs = np.array([[0.7, 0.2, 0.1], [0.2, 0.7, 0.1], [0.6, 0.3, 0.1], [0.1, 0.8, 0.1]])
    labels = np.array([0, 1, 0, 1])
    per = auc_per_class(probs, labels)
    assert set(per) == {0, 1}
    assert auc_macro(probs, labels) == 1.0
    with pytest.raises(DegenerateLabels):
        auc_macro(probs, np.zeros(4, dtype=int))


def test_confusion_rows_are_truth():
    cm = confusion_matrix(pred=[0, 1, 1, 2], labels=[0, 0, 1, 2], n_classes=3)
    assert cm.tolist() == [[1, 1, 0], [0, 1, 0], [0, 0, 1]]


# --- LSTM cell ---------------------------------------------------------------------


def scalar_cell():
    W = {g: np.array([[GATE_X[g], GATE_H[g]]]) for g in GATE_X}
    b = {g: np.array([GATE_B[g]]) for g in GATE_B}
    return LstmCell(W, b)


def test_lstm_scalar_hand_values():
    cell = scalar_cell()
    assert lstm_forward(cell, np.array([[0.5]]))[0] == pytest.approx(H1, abs=1e-15)
    assert lstm_forward(cell, np.array([[0.5], [-1.0]]))[0] == pytest.approx(H2, abs=1e-15)


def test_lstm_zero_weights_give_zero_state(rng):
    cell = LstmCell({g: np.zeros((3, 5)) for g in "ifog"}, {g: np.zeros(3) for g in "ifog"})
    assert np.array_equal(lstm_forward(cell, rng.normal(size=(7, 2))), np.zeros(3))


def test_lstm_shape_errors(rng):
    cell = LstmCell.init(rng, 2, 3)
    with pytest.raises(ShapeMismatch):
        lstm_forward(cell, rng.normal(size=(4, 5)))
    with pytest.raises(ShapeMismatch):
        lstm_forward(cell, np.zeros((0, 2)))


def test_padding_does_not_change_final_state(rng):
    model = LstmClassifier(3, hidden=5, rng=rng)
    seqs = [rng.normal(size=(t, 3)) for t in (2, 5, 1)]
    together = model.predict_proba(SequenceBatch.from_sequences(seqs))
    alone = np.vstack([model.predict_proba(SequenceBatch.from_sequences([s])) for s in seqs])
    np.testing.assert_allclose(together, alone, atol=1e-14)


# --- training --------------------------------------------------------------------


def standardized(x):
    return (x - x.mean(axis=0)) / x.std(axis=0)


def test_logistic_separates_toy_set(rng):
    x = standardized(rng.normal(size=(300, 4)))
    y = 1 + (x @ [1.0, -2.0, 0.5, 0.0] > 0)
    cfg = TrainConfig(epochs=200, lr=1e-2, batch_size=32, patience=None, n_classes=2)
    res = train_classifier("logistic", EventSet(x, y), EventSet(x, y), cfg)
    assert max(r.train_auc for r in res.log) >= 0.99
    assert res.log[-1].loss < res.log[0].loss


def test_null_labels_give_chance_auc(rng):
    x = standardized(rng.normal(size=(1500, 6)))
    y = rng.integers(1, 6, 1500)
    cfg = TrainConfig(epochs=20, lr=1e-3, batch_size=64, n_classes=5)
    res = train_classifier("ffnn", EventSet(x[:500], y[:500]), EventSet(x[500:], y[500:]), cfg)
    assert 0.4 <= res.best.val_auc <= 0.6


def test_training_guards(rng):
    with pytest.raises(NotStandardized):
        train_classifier("logistic", EventSet(rng.normal(5, 1, (20, 3)), np.ones(20)), EventSet(np.zeros((0, 3)), np.zeros(0)))
    with pytest.raises(EmptyDataset):
        train_classifier("logistic", EventSet(np.zeros((0, 3)), np.zeros(0)), EventSet(np.zeros((0, 3)), np.zeros(0)))
    with pytest.raises(EmptySession):
        train_lstm([(np.zeros((0, 3)), 1)], [])


def test_training_is_deterministic(rng):
    x = standardized(rng.normal(size=(120, 3)))
    y = 1 + (x[:, 0] > 0)
    cfg = TrainConfig(epochs=5, n_classes=2, seed=11)
    a = train_classifier("ffnn", EventSet(x, y), EventSet(x, y), cfg)
    b = train_classifier("ffnn", EventSet(x, y), EventSet(x, y), cfg)
    assert a.log == b.log
    assert all(np.array_equal(a.model.params[k], b.model.params[k]) for k in a.model.params)


def first_event_sessions(rng, n, shuffle=False):
    """Label = sign of feature 0 of the first event; later events are noise."""
    out = []
    for _ in range(n):
        seq = rng.normal(size=(rng.integers(2, 6), 3))
        label = 1 + int(seq[0, 0] > 0)
        if shuffle:
            seq = rng.permutation(seq)
        out.append((seq, label))
    return out


LSTM_CFG = TrainConfig(epochs=40, lr=1e-2, batch_size=20, patience=None, n_classes=2, hidden=8, seed=3)


def test_lstm_learns_planted_first_event_signal():
    rng = np.random.default_rng(5)
    res = train_lstm(first_event_sessions(rng, 400), first_event_sessions(rng, 200), LSTM_CFG)
    assert res.best.val_auc >= 0.9


def test_lstm_order_matters():
    rng = np.random.default_rng(5)
    ordered = train_lstm(first_event_sessions(rng, 400), first_event_sessions(rng, 200), LSTM_CFG)
    rng = np.random.default_rng(5)
    shuffled = train_lstm(first_event_sessions(rng, 400, True), first_event_sessions(rng, 200, True), LSTM_CFG)
    assert shuffled.best.val_auc < ordered.best.val_auc - 0.1


def test_lstm_single_event_sessions(rng):
    data = [(rng.normal(size=(1, 3)), int(rng.integers(1, 3))) for _ in range(30)]
    res = train_lstm(data, data, TrainConfig(epochs=2, n_classes=2, hidden=4))
    assert len(res.log) == 2

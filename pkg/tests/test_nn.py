import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from _oracles import scalar_gru
from cvdetect.nn import (
    AdamState,
    Dense,
    Dropout,
    GRULayer,
    Param,
    adam_step,
    binary_xent,
    dense,
    dropout,
    grad_check,
    gru_backward,
    gru_forward,
    softmax,
    softmax_xent,
)


def randomize(layer, rng, scale=0.5):
    for p in layer.params():
        p.value[...] = rng.normal(0, scale, p.shape)


# --- GRU -------------------------------------------------------------------------


def test_zero_parameters_give_zero_states(rng):
    layer = GRULayer(3, 4, rng)
    for p in layer.params():
        p.value[...] = 0.0
    out = gru_forward(layer, rng.normal(size=(5, 3)))
    assert np.all(out == 0.0)


def test_backward_direction_on_single_step_equals_forward(rng):
    layer = GRULayer(3, 4, rng)
    seq = rng.normal(size=(1, 3))
    np.testing.assert_array_equal(gru_forward(layer, seq, "backward"), gru_forward(layer, seq, "forward"))


def test_matches_scalar_loop_oracle(rng):
    layer = GRULayer(2, 4, rng)
    randomize(layer, rng)
    seq = rng.normal(size=(3, 2))
    assert np.max(np.abs(gru_forward(layer, seq) - scalar_gru(layer, seq))) < 1e-12
    back = gru_forward(layer, seq, "backward")
    assert np.max(np.abs(back - scalar_gru(layer, seq[::-1])[::-1])) < 1e-12


def test_padded_batch_equals_individual_runs(rng):
    layer = GRULayer(3, 5, rng)
    seqs = [rng.normal(size=(n, 3)) for n in (4, 1, 7)]
    x = np.zeros((3, 7, 3))
    for i, s in enumerate(seqs):
        x[i, : len(s)] = s
    lengths = np.array([4, 1, 7])
    for reverse, direction in ((False, "forward"), (True, "backward")):
        batched = layer.forward(x, lengths, reverse=reverse)
        for i, s in enumerate(seqs):
            assert np.max(np.abs(batched[i, : len(s)] - gru_forward(layer, s, direction))) < 1e-12


def test_zero_upstream_gives_zero_gradients(rng):
    layer = GRULayer(3, 4, rng)
    seq = rng.normal(size=(5, 3))
    gru_forward(layer, seq)
    dx = gru_backward(layer, np.zeros((5, 4)))
    assert np.all(dx == 0.0)
    assert all(np.all(p.grad == 0.0) for p in layer.params())


def test_gradients_accumulate_across_calls(rng):
    layer = GRULayer(2, 3, rng)
    s1, s2 = rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
    g1, g2 = rng.normal(size=(4, 3)), rng.normal(size=(3, 3))

    def grads(pairs):
        for p in layer.params():
            p.zero_grad()
        for s, g in pairs:
            gru_forward(layer, s)
            gru_backward(layer, g)
        return [p.grad.copy() for p in layer.params()]

    both = grads([(s1, g1), (s2, g2)])
    sep = [a + b for a, b in zip(grads([(s1, g1)]), grads([(s2, g2)]))]
    for a, b in zip(both, sep):
        assert np.max(np.abs(a - b)) < 1e-12


def test_backward_without_forward_fails(rng):
    with pytest.raises(RuntimeError, match="without a cached forward"):
        GRULayer(2, 2, rng).backward(np.zeros((1, 1, 2)))


@pytest.mark.parametrize("seq, msg", [(np.zeros((0, 3)), "T >= 1"), (np.zeros((2, 4)), "input dim")])
def test_gru_input_errors(rng, seq, msg):
    with pytest.raises(ValueError, match=msg):
        gru_forward(GRULayer(3, 2, rng), seq)


def test_gru_forward_is_pure(rng):
    layer = GRULayer(3, 4, rng)
    seq = rng.normal(size=(6, 3))
    np.testing.assert_array_equal(gru_forward(layer, seq), gru_forward(layer, seq))


# --- gradient checks -------------------------------------------------------------


def test_grad_check_dense_squared_loss(rng):
    layer = Dense(4, 3, rng)
    x, y = rng.normal(size=(5, 4)), rng.normal(size=(5, 3))

    def loss():
        out = layer.forward(x)
        layer.backward(out - y)
        return 0.5 * float(np.sum((out - y) ** 2))

    assert grad_check(layer.params(), loss) < 1e-7


def test_grad_check_gru_softmax(rng):
    layer = GRULayer(3, 3, rng)
    head = Dense(3, 4, rng)
    seq = rng.normal(size=(5, 3))

    def loss():
        h = gru_forward(layer, seq, "backward")
        logits = head.forward(h)
        value, d = softmax_xent(logits, np.array([0, 1, 2, 3, 1]))
        gru_backward(layer, head.backward(d))
        return value

    assert grad_check(layer.params() + head.params(), loss) < 1e-4


def test_grad_check_with_frozen_dropout(rng):
    layer = Dense(6, 3, rng)
    drop = Dropout(0.5)
    x = rng.normal(size=(4, 6))
    mask = (rng.random(x.shape) >= 0.5) / 0.5

    def loss():
        out = layer.forward(drop.forward(x, training=True, mask=mask))
        value, d = softmax_xent(out, np.array([0, 1, 2, 0]))
        layer.backward(d)
        return value

    assert grad_check(layer.params(), loss) < 1e-4


def test_grad_check_sampling_and_non_finite(rng):
    p = Param(rng.normal(size=(30, 10)))

    def loss():
        p.grad += 2 * p.value
        return float(np.sum(p.value**2))

    assert grad_check([p], loss, max_entries=200) < 1e-7
    with pytest.raises(ValueError, match="at least 200"):
        grad_check([p], loss, max_entries=10)
    with pytest.raises(FloatingPointError):
        grad_check([p], lambda: float("nan"))


# --- losses ----------------------------------------------------------------------


def test_uniform_logits_give_log_k():
    loss, _ = softmax_xent(np.zeros(7), 3)
    assert abs(loss - math.log(7)) < 1e-15


def test_binary_xent_at_half():
    for label in (0, 1):
        loss, _ = binary_xent(0.5, label)
        assert abs(loss - math.log(2)) < 1e-15


def test_softmax_confident_case():
    loss, _ = softmax_xent(np.array([10.0, 0.0, 0.0]), 0)
    assert abs(loss - math.log(1 + 2 * math.exp(-10))) < 1e-15
    assert abs(loss - 9.08e-5) < 1e-7


def test_softmax_target_out_of_range():
    with pytest.raises(ValueError, match="out of range"):
        softmax_xent(np.zeros((2, 3)), np.array([0, 3]))


def test_dense_function():
    W, b, x = np.array([[1.0, 2.0]]), np.array([0.5]), np.array([3.0, 4.0])
    np.testing.assert_array_equal(dense(W, b, x), [11.5])


logit_rows = arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50))


@given(logit_rows, st.floats(-100, 100))
def test_softmax_sums_to_one_and_is_shift_invariant(logits, c):
    p = softmax(logits)
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.max(np.abs(softmax(logits + c) - p)) < 1e-12


@given(st.floats(0.0, 1.0), st.sampled_from([0, 1]))
def test_binary_xent_finite_on_closed_interval(p, label):
    loss, grad = binary_xent(p, label)
    assert math.isfinite(loss) and np.all(np.isfinite(grad))


# --- dropout ---------------------------------------------------------------------


def test_dropout_identities(rng):
    x = rng.normal(size=(4, 5))
    np.testing.assert_array_equal(dropout(x, 0.0, rng, True), x)
    np.testing.assert_array_equal(dropout(x, 0.9, rng, False), x)


def test_dropout_preserves_mean(rng):
    out = dropout(np.ones(100_000), 0.5, rng, True)
    assert abs(out.mean() - 1.0) < 0.01
    assert set(np.unique(out)) <= {0.0, 2.0}


def test_dropout_rate_validation():
    with pytest.raises(ValueError, match=r"\[0, 1\)"):
        Dropout(1.0)


# --- Adam ------------------------------------------------------------------------


def test_adam_zero_grad_zero_decay_is_noop(rng):
    p = Param(rng.normal(size=5))
    before = p.value.copy()
    adam_step([p], AdamState(weight_decay=0.0))
    np.testing.assert_array_equal(p.value, before)


def test_adam_first_step_moves_by_learning_rate(rng):
    p = Param(np.zeros(6))
    g = rng.normal(size=6)
    p.grad[...] = g
    state = AdamState(learning_rate=1e-3, weight_decay=0.0)
    adam_step([p], state)
    # bias-corrected m/sqrt(v) = g/|g| on the first step
    expected = -1e-3 * g / (np.abs(g) + 1e-8)
    assert np.max(np.abs(p.value - expected)) < 1e-15
    assert np.all(p.grad == 0.0)
    assert state.step == 1


def test_adam_decay_only(rng):
    p = Param(rng.normal(size=5))
    before = p.value.copy()
    adam_step([p], AdamState(learning_rate=0.001, weight_decay=0.0005))
    np.testing.assert_array_equal(p.value, before - 0.001 * 0.0005 * before)
    assert np.max(np.abs(p.value - before * (1 - 5e-7))) < 1e-15


def test_adam_rejects_non_finite_gradients():
    p = Param(np.zeros(2), "w")
    p.grad[0] = np.inf
    with pytest.raises(FloatingPointError, match="w"):
        adam_step([p], AdamState())


def test_grad_check_catches_small_relative_errors(rng):
    layer = Dense(4, 3, rng)
    x, y = rng.normal(size=(5, 4)), rng.normal(size=(5, 3))

    def loss():
        out = layer.forward(x)
        layer.backward(1.001 * (out - y))  # gradient off by 0.1%
        return 0.5 * float(np.sum((out - y) ** 2))

    assert 5e-4 < grad_check(layer.params(), loss) < 2e-3

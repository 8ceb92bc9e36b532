import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ehrfuse.errors import DataError
from ehrfuse.heads import (cross_entropy_grad_logits, head_backward,
                           head_forward, head_items, init_head, mse_grad_preds,
                           mse_loss, softmax, weighted_cross_entropy)


def test_softmax_worked_example():
    p = softmax(np.array([np.log(2.0), 0.0]))
    assert np.allclose(p, [2 / 3, 1 / 3], atol=1e-12)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    p = softmax(rng.standard_normal((20, 5)) * 50)
    assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(p > 0)


def test_softmax_shift_invariance():
    x = np.array([1.0, -2.0, 0.5])
    assert np.allclose(softmax(x), softmax(x + 1000.0))


def test_softmax_extreme_logits_finite():
    p = softmax(np.array([1e4, 0.0, -1e4]))
    assert np.all(np.isfinite(p))
    assert np.allclose(p.sum(), 1.0)


def test_cross_entropy_worked_examples():
    w = np.ones(2)
    # p(correct)=0.5 -> ln 2
    loss, _ = weighted_cross_entropy(np.array([[0.5, 0.5]]), np.array([0]), w)
    assert abs(loss - np.log(2.0)) < 1e-12
    # p(correct)=0.25 -> 2 ln 2
    loss, _ = weighted_cross_entropy(np.array([[0.25, 0.75]]), np.array([0]), w)
    assert abs(loss - 2 * np.log(2.0)) < 1e-12
    # certain and correct -> 0
    loss, _ = weighted_cross_entropy(np.array([[1.0, 0.0]]), np.array([0]), w)
    assert loss == 0.0


def test_cross_entropy_floor():
    w = np.ones(2)
    loss, _ = weighted_cross_entropy(np.array([[0.0, 1.0]]), np.array([0]), w)
    assert np.isfinite(loss)
    assert abs(loss - (-np.log(1e-12))) < 1e-9


def test_cross_entropy_uniform_weight_identity():
    rng = np.random.default_rng(0)
    probs = softmax(rng.standard_normal((64, 2)))
    labels = rng.integers(0, 2, size=64)
    lw, _ = weighted_cross_entropy(probs, labels, np.ones(2))
    plain = -np.log(probs[np.arange(64), labels]).mean()
    assert lw == plain


def test_cross_entropy_weight_scaling():
    # scaling all weights by c scales the loss and gradient by c exactly
    rng = np.random.default_rng(1)
    logits = rng.standard_normal((32, 2))
    labels = rng.integers(0, 2, size=32)
    probs = softmax(logits)
    base, _ = weighted_cross_entropy(probs, labels, np.ones(2))
    g_base = cross_entropy_grad_logits(logits, labels, np.ones(2))
    for c in (0.5, 2.0, 7.5):
        scaled, _ = weighted_cross_entropy(probs, labels, c * np.ones(2))
        g_scaled = cross_entropy_grad_logits(logits, labels, c * np.ones(2))
        assert abs(scaled - c * base) < 1e-10
        assert np.max(np.abs(g_scaled - c * g_base)) < 1e-10


def test_cross_entropy_grad_matches_fd():
    rng = np.random.default_rng(2)
    logits = rng.standard_normal((8, 3))
    labels = rng.integers(0, 3, size=8)
    weights = np.array([1.0, 2.5, 0.5])
    grad = cross_entropy_grad_logits(logits, labels, weights)
    h = 1e-6
    for idx in [(0, 0), (3, 2), (7, 1)]:
        lp = logits.copy(); lp[idx] += h
        lm = logits.copy(); lm[idx] -= h
        fp, _ = weighted_cross_entropy(softmax(lp), labels, weights)
        fm, _ = weighted_cross_entropy(softmax(lm), labels, weights)
        fd = (fp - fm) / (2 * h)
        assert abs(fd - grad[idx]) < 1e-6


def test_cross_entropy_length_mismatch():
    with pytest.raises(DataError):
        weighted_cross_entropy(np.array([[0.5, 0.5]]), np.array([0, 1]),
                               np.ones(2))


def test_mse_worked_examples():
    loss, _ = mse_loss(np.array([2.0, 1.0]), np.array([-3.0, 1.0]))
    assert loss == 12.5
    loss, _ = mse_loss(np.array([0.0]), np.array([3.0]))
    assert loss == 9.0
    loss, _ = mse_loss(np.array([4.0, 4.0]), np.array([4.0, 4.0]))
    assert loss == 0.0


def test_mse_grad_matches_fd():
    rng = np.random.default_rng(3)
    preds = rng.standard_normal(10)
    targets = rng.standard_normal(10)
    grad = mse_grad_preds(preds, targets)
    h = 1e-6
    for i in (0, 4, 9):
        pp = preds.copy(); pp[i] += h
        pm = preds.copy(); pm[i] -= h
        fd = (mse_loss(pp, targets)[0] - mse_loss(pm, targets)[0]) / (2 * h)
        assert abs(fd - grad[i]) < 1e-6


def test_mse_empty_rejected():
    with pytest.raises(DataError):
        mse_loss(np.array([]), np.array([]))


def test_head_forward_shapes():
    head = init_head(8, 2, seed=0)
    out, _ = head_forward(head, np.zeros((5, 8)))
    assert out.shape == (5, 2)
    # zero input with zero biases gives zero output
    assert np.allclose(out, 0.0)


def test_head_backward_matches_fd():
    head = init_head(6, 2, seed=1)
    rng = np.random.default_rng(4)
    e = rng.standard_normal((4, 6))
    dout = rng.standard_normal((4, 2))

    def loss():
        out, _ = head_forward(head, e)
        return float((out * dout).sum())

    out, cache = head_forward(head, e)
    grads, de = head_backward(head, cache, dout)
    h = 1e-6
    worst = 0.0
    for name, arr in head_items(head):
        for k in range(0, arr.size, max(1, arr.size // 5)):
            idx = np.unravel_index(k, arr.shape)
            old = arr[idx]
            arr[idx] = old + h; lp = loss()
            arr[idx] = old - h; lm = loss()
            arr[idx] = old
            fd = (lp - lm) / (2 * h)
            worst = max(worst, abs(fd - grads[name][idx]))
    for idx in [(0, 0), (3, 5)]:
        old = e[idx]
        e[idx] = old + h; lp = loss()
        e[idx] = old - h; lm = loss()
        e[idx] = old
        fd = (lp - lm) / (2 * h)
        worst = max(worst, abs(fd - de[idx]))
    assert worst < 1e-5


def test_init_head_deterministic():
    a = init_head(8, 2, seed=9)
    b = init_head(8, 2, seed=9)
    for (_, x), (_, y) in zip(head_items(a), head_items(b)):
        assert np.array_equal(x, y)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=-20, max_value=20), min_size=2,
                max_size=8))
def test_softmax_probability_simplex(logits):
    p = softmax(np.array(logits))
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) < 1e-9

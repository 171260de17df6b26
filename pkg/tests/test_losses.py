import numpy as np
import pytest

from sll.losses import (mse, mse_with_grad, cross_entropy, cross_entropy_with_grad,
                        bce_logit, bce_logit_with_grad, accuracy, sigmoid)


def test_mse_value_and_grad():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[0.0, 2.0], [3.0, 2.0]])
    assert mse(a, b) == pytest.approx((1 + 0 + 0 + 4) / 4)
    loss, g = mse_with_grad(a, b)
    assert np.allclose(g, 2.0 * (a - b) / 4)


def test_mse_shape_mismatch():
    with pytest.raises(ValueError):
        mse(np.zeros((2, 2)), np.zeros((2, 3)))


def test_cross_entropy_uniform_logits_is_log_k():
    logits = np.zeros((4, 3))
    labels = np.array([0, 1, 2, 0])
    assert cross_entropy(logits, labels) == pytest.approx(np.log(3.0), abs=1e-12)


def test_cross_entropy_hand_example():
    logits = np.array([[2.0, 0.0]])
    # p0 = e^2/(e^2+1)
    want = -np.log(np.exp(2.0) / (np.exp(2.0) + 1.0))
    assert cross_entropy(logits, np.array([0])) == pytest.approx(want, abs=1e-12)
    _, g = cross_entropy_with_grad(logits, np.array([0]))
    p0 = np.exp(2.0) / (np.exp(2.0) + 1.0)
    assert np.allclose(g, [[p0 - 1.0, 1.0 - p0]], atol=1e-12)


def test_cross_entropy_shift_invariance_and_stability():
    logits = np.array([[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]])
    labels = np.array([2, 1])
    base = cross_entropy(logits, labels)
    assert cross_entropy(logits + 1000.0, labels) == pytest.approx(base, abs=1e-9)
    big = cross_entropy(np.array([[10000.0, 0.0]]), np.array([0]))
    assert np.isfinite(big) and big >= 0


def test_cross_entropy_grad_matches_fd():
    logits = np.array([[1.0, -0.5, 0.2], [0.3, 0.3, -1.0]])
    labels = np.array([0, 2])
    _, g = cross_entropy_with_grad(logits, labels)
    h = 1e-6
    for i in range(2):
        for j in range(3):
            lp = logits.copy(); lp[i, j] += h
            lm = logits.copy(); lm[i, j] -= h
            num = (cross_entropy(lp, labels) - cross_entropy(lm, labels)) / (2 * h)
            assert abs(num - g[i, j]) < 1e-8


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((2, 3)), np.array([0, 3]))
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((2, 3)), np.array([-1, 0]))
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((0, 3)), np.array([], dtype=int))


def test_sigmoid_stable_at_extremes():
    assert sigmoid(np.array([800.0]))[0] == 1.0
    assert sigmoid(np.array([-800.0]))[0] == 0.0
    assert sigmoid(np.array([0.0]))[0] == 0.5


def test_bce_hand_example_and_grad():
    s = np.array([0.0, 2.0])
    t = np.array([1.0, 0.0])
    p = sigmoid(s)
    want = -(np.log(p[0]) + np.log(1 - p[1])) / 2
    assert bce_logit(s, t) == pytest.approx(want, abs=1e-12)
    _, g = bce_logit_with_grad(s, t)
    assert np.allclose(g, (p - t) / 2, atol=1e-12)


def test_bce_saturated_logits_stay_finite_with_exact_grad():
    s = np.array([500.0, -500.0])
    t = np.array([0.0, 1.0])
    loss, g = bce_logit_with_grad(s, t)
    assert np.isfinite(loss)
    # the gradient bypasses the probability clamp: sigma(s) - t exactly
    assert np.allclose(g, [0.5, -0.5], atol=1e-12)


def test_accuracy():
    logits = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 1.0], [0.1, 0.2]])
    assert accuracy(logits, np.array([0, 1, 1, 1])) == 0.75

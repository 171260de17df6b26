"""Scalar losses and their gradients w.r.t. the prediction."""

import numpy as np

from .layers import ensure_finite


def _check_nonempty(a):
    if a.shape[0] == 0:
        raise ValueError("empty batch")


def mse(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    _check_nonempty(a)
    return float(np.mean((a - b) ** 2))


def mse_with_grad(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    _check_nonempty(a)
    diff = a - b
    loss = float(np.mean(diff ** 2))
    return loss, (2.0 / a.size) * diff


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits, labels):
    loss, _ = cross_entropy_with_grad(logits, labels)
    return loss


def cross_entropy_with_grad(logits, labels):
    _check_nonempty(logits)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label out of range")
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(n), labels].mean())
    ensure_finite(np.array(loss), "cross-entropy loss")
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def accuracy(logits, labels):
    return float((logits.argmax(axis=1) == np.asarray(labels)).mean())


# probability clamp keeps log() finite when a sigmoid saturates
PROB_EPS = 1e-7


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def bce_logit(scores, targets):
    loss, _ = bce_logit_with_grad(scores, targets)
    return loss


def bce_logit_with_grad(scores, targets):
    _check_nonempty(scores)
    if scores.shape != np.shape(targets):
        targets = np.broadcast_to(targets, scores.shape)
    p = np.clip(sigmoid(scores), PROB_EPS, 1.0 - PROB_EPS)
    loss = float(-np.mean(targets * np.log(p) + (1.0 - targets) * np.log(1.0 - p)))
    grad = (sigmoid(scores) - targets) / scores.size
    return loss, grad

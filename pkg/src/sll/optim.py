"""SGD-with-momentum and Adam, operating in place on a parameter list."""

import numpy as np


class Optimizer:
    def __init__(self, params, lr):
        if lr <= 0:
            raise ValueError("learning rate must be > 0")
        self.lr = float(lr)
        self.params = list(params)
        self.step_count = 0

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        for p, g in zip(self.params, grads):
            if p.shape != g.shape:
                raise ValueError(f"grad shape {g.shape} != param shape {p.shape}")
        self.step_count += 1
        self._apply(grads)

    def _apply(self, grads):
        raise NotImplementedError


class SGDMomentum(Optimizer):
    def __init__(self, params, lr, momentum=0.9):
        super().__init__(params, lr)
        self.momentum = float(momentum)
        self.velocity = [np.zeros_like(p) for p in self.params]

    def _apply(self, grads):
        for p, g, v in zip(self.params, grads, self.velocity):
            v *= self.momentum
            v += g
            p -= (self.lr * v).astype(p.dtype, copy=False)


class Adam(Optimizer):
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = float(beta1), float(beta2), float(eps)
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def _apply(self, grads):
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps))
            p -= update.astype(p.dtype, copy=False)


def make_optimizer(kind, params, lr, **kw):
    if kind == "sgd-momentum":
        return SGDMomentum(params, lr, **kw)
    if kind == "adam":
        return Adam(params, lr, **kw)
    raise ValueError(f"unknown optimizer kind {kind!r}")

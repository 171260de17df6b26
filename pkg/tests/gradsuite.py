"""Shared architecture suite for finite-difference gradient verification.

Every layer kind appears at least once, both isolated and inside composites,
so a single sweep over this list exercises the full backward surface.
Shapes are kept tiny; the FD loop is O(#params) full forwards.
"""

import numpy as np

from sll import Rng, build_network, grad_check
from sll.network import (conv, convT, linear, relu, tanh, maxpool,
                         batchnorm, resblock)

# (name, specs, input  CxHxW, loss kind)
SUITE = [
    ("conv3x3", [conv(4)], (3, 6, 6), "mse"),
    ("conv-stride2", [conv(4, stride=2)], (3, 8, 8), "mse"),
    ("conv-nobias", [conv(4, bias=False)], (3, 6, 6), "mse"),
    ("convT-up2", [convT(4)], (3, 4, 4), "mse"),
    ("linear", [linear(5)], (3, 4, 4), "ce"),
    ("batchnorm", [batchnorm()], (3, 4, 4), "mse"),
    ("relu", [relu()], (3, 4, 4), "mse"),
    ("tanh", [tanh()], (3, 4, 4), "mse"),
    ("maxpool", [maxpool(2)], (3, 4, 4), "mse"),
    ("resblock", [resblock()], (3, 4, 4), "mse"),
    ("conv-bn-relu-pool", [conv(4, bias=False), batchnorm(), relu(), maxpool(2)],
     (3, 8, 8), "mse"),
    ("encoder-head", [conv(4, stride=2), tanh(), linear(5)], (3, 8, 8), "ce"),
    ("res-chain", [conv(4, bias=False), batchnorm(), tanh(), resblock(),
                   linear(4)], (3, 6, 6), "ce"),
    ("decoder", [convT(4), tanh(), convT(2), tanh()], (3, 4, 4), "mse"),
    ("critic", [conv(4, stride=2), relu(), resblock(), linear(1)], (3, 8, 8), "bce"),
]


def run_case(name, specs, in_shape, loss_kind, seed, batch=2):
    net = build_network(specs, in_shape, Rng(seed).spawn(1), dtype=np.float64)
    x = Rng(seed).spawn(3).normal(size=(batch,) + in_shape)
    labels, target = None, None
    out_shape = (batch,) + net.output_shape
    if loss_kind == "ce":
        k = net.output_shape[0]
        labels = Rng(seed).spawn(4).integers(0, k, size=batch)
    elif loss_kind == "mse":
        # random target; an all-zero target would zero out some gradients
        # structurally (e.g. batchnorm beta) and FD noise would dominate
        target = Rng(seed).spawn(5).normal(size=out_shape)
    elif loss_kind == "bce":
        target = Rng(seed).spawn(5).uniform(0.2, 0.8, size=out_shape)
    return grad_check(net, x, loss_kind=loss_kind, target=target, labels=labels)

import numpy as np
import pytest

from sll import Rng, build_network, grad_check
from sll.network import linear, tanh, conv
from sll.layers import ReLU

from gradsuite import SUITE, run_case


@pytest.mark.parametrize("name,specs,shape,loss", SUITE, ids=[c[0] for c in SUITE])
def test_suite_case_passes_tolerance(name, specs, shape, loss):
    err = run_case(name, specs, shape, loss, seed=17)
    assert err < 1e-4, f"{name}: max rel err {err:.3e}"


def test_zero_linear_tanh_net_is_exact():
    # with all-zero weights both analytic and central-difference gradients
    # vanish identically (the loss is an even function of each perturbation),
    # so the reported error is exactly zero, not merely small
    net = build_network([linear(4), tanh(), linear(2)], (3,), Rng(0).spawn(1),
                        dtype=np.float64)
    for p in net.params:
        p[...] = 0.0
    x = Rng(0).spawn(2).normal(size=(3, 3))
    assert grad_check(net, x, loss_kind="mse") == 0.0


def test_fp32_parameters_rejected():
    net = build_network([linear(2)], (3,), Rng(0).spawn(1), dtype=np.float32)
    with pytest.raises(ValueError):
        grad_check(net, np.ones((1, 3)))


def test_detects_a_broken_backward():
    class SkewedReLU(ReLU):
        def backward(self, dout):
            return super().backward(dout) * 1.01

    net = build_network([conv(4), linear(3)], (3, 6, 6), Rng(5).spawn(1),
                        dtype=np.float64)
    net.layers.insert(1, SkewedReLU())
    net.output_shape = (3,)
    x = Rng(5).spawn(2).normal(size=(2, 3, 6, 6))
    assert grad_check(net, x, loss_kind="mse") > 1e-3

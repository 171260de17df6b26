import numpy as np
import pytest

from sll import Rng, build_network, subnetwork
from sll.network import (LayerSpec, conv, convT, linear, relu, tanh, maxpool,
                         batchnorm, resblock)
from sll.layers import ShapeError, NonFiniteError


SPECS = [conv(4, bias=False), batchnorm(), relu(), maxpool(2),
         conv(8, stride=2), tanh(), linear(5)]


def test_forward_shape_and_output_shape_agree():
    net = build_network(SPECS, (3, 16, 16), Rng(1).spawn(1))
    x = Rng(1).spawn(2).normal(size=(4, 3, 16, 16)).astype(np.float32)
    y = net.forward(x, train=False)
    assert y.shape == (4,) + net.output_shape
    assert net.output_shape == (5,)


def test_forward_rejects_wrong_input_shape():
    net = build_network(SPECS, (3, 16, 16), Rng(1).spawn(1))
    with pytest.raises(ShapeError):
        net.forward(np.zeros((2, 3, 8, 8), dtype=np.float32))


def test_backward_requires_train_forward():
    net = build_network([linear(2)], (3,), Rng(0).spawn(1))
    with pytest.raises(RuntimeError):
        net.backward(np.ones((1, 2)))
    net.forward(np.ones((1, 3), dtype=np.float32), train=True)
    dx, grads = net.backward(np.ones((1, 2)))
    assert dx.shape == (1, 3) and len(grads) == len(net.params)


def test_same_seed_same_init():
    a = build_network(SPECS, (3, 16, 16), Rng(42).spawn(1))
    b = build_network(SPECS, (3, 16, 16), Rng(42).spawn(1))
    for pa, pb in zip(a.params, b.params):
        assert np.array_equal(pa, pb)
    c = build_network(SPECS, (3, 16, 16), Rng(43).spawn(1))
    assert not all(np.array_equal(pa, pc) for pa, pc in zip(a.params, c.params))


def test_subnetwork_shares_parameters_and_composes():
    net = build_network(SPECS, (3, 16, 16), Rng(7).spawn(1), dtype=np.float64)
    front = subnetwork(net, 0, 4)
    back = subnetwork(net, 4, len(net.layers))
    x = Rng(7).spawn(2).normal(size=(2, 3, 16, 16))
    whole = net.forward(x, train=False)
    split = back.forward(front.forward(x, train=False), train=False)
    assert np.array_equal(whole, split)
    # mutating through the view must be visible in the parent
    front.params[0][...] += 1.0
    assert np.array_equal(net.params[0], front.params[0])


def test_state_dict_round_trip():
    net = build_network(SPECS, (3, 16, 16), Rng(3).spawn(1))
    x = Rng(3).spawn(2).normal(size=(2, 3, 16, 16)).astype(np.float32)
    net.forward(x, train=True)  # move batchnorm running stats off init
    state = {k: v.copy() for k, v in net.state_dict().items()}
    other = build_network(SPECS, (3, 16, 16), Rng(99).spawn(1))
    other.load_state_dict(state)
    ya = net.forward(x, train=False)
    yb = other.forward(x, train=False)
    assert np.array_equal(ya, yb)


def test_load_state_dict_rejects_mismatched_keys():
    net = build_network([linear(2)], (3,), Rng(0).spawn(1))
    with pytest.raises(KeyError):
        net.load_state_dict({"bogus": np.zeros(1)})


def test_resblock_state_dict_covers_running_stats():
    net = build_network([resblock()], (3, 4, 4), Rng(5).spawn(1))
    keys = set(net.state_dict())
    assert "00.bn1.running_mean" in keys and "00.bn2.running_var" in keys


def test_layer_spec_json_round_trip():
    for spec in SPECS + [convT(6), resblock(), maxpool(2)]:
        d = spec.to_json()
        back = LayerSpec.from_json(d)
        assert back.kind == spec.kind and back.hyper == spec.hyper


def test_unknown_layer_kind_rejected():
    with pytest.raises(ValueError):
        LayerSpec("dropout")


def test_nonfinite_output_detected():
    net = build_network([linear(2)], (3,), Rng(0).spawn(1), dtype=np.float64)
    net.layers[0].w[...] = np.inf
    with pytest.raises(NonFiniteError):
        net.forward(np.ones((1, 3)))


def test_param_count():
    net = build_network([conv(4, kernel=3)], (3, 8, 8), Rng(0).spawn(1))
    assert net.param_count() == 4 * 3 * 3 * 3 + 4

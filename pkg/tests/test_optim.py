import numpy as np
import pytest

from sll import SGDMomentum, Adam, make_optimizer


def test_sgd_momentum_two_steps_by_hand():
    p = np.array([1.0, 2.0])
    opt = SGDMomentum([p], lr=0.1, momentum=0.9)
    g = np.array([1.0, -1.0])
    opt.step([g])
    # v1 = g, p1 = p0 - lr*v1
    assert np.allclose(p, [1.0 - 0.1, 2.0 + 0.1], atol=1e-12)
    opt.step([g])
    # v2 = 0.9*g + g = 1.9g
    assert np.allclose(p, [0.9 - 0.19, 2.1 + 0.19], atol=1e-12)
    assert opt.step_count == 2


def test_adam_first_step_is_signed_lr():
    p = np.array([1.0, -3.0, 0.5])
    opt = Adam([p], lr=0.01)
    g = np.array([100.0, -0.001, 2.0])
    opt.step([g])
    # bias correction makes mhat/sqrt(vhat) = sign(g) regardless of |g|
    assert np.allclose(p, [1.0 - 0.01, -3.0 + 0.01, 0.5 - 0.01], atol=1e-5)


def test_adam_converges_on_quadratic():
    p = np.array([5.0])
    opt = Adam([p], lr=0.1)
    for _ in range(500):
        opt.step([2.0 * p])
    assert abs(p[0]) < 1e-2


def test_updates_preserve_param_dtype():
    p = np.ones(3, dtype=np.float32)
    SGDMomentum([p], lr=0.1).step([np.ones(3, dtype=np.float64)])
    assert p.dtype == np.float32


def test_rejects_bad_lr_and_shape_mismatch():
    with pytest.raises(ValueError):
        SGDMomentum([np.ones(2)], lr=0.0)
    opt = Adam([np.ones(2)], lr=0.1)
    with pytest.raises(ValueError):
        opt.step([np.ones(3)])
    with pytest.raises(ValueError):
        opt.step([np.ones(2), np.ones(2)])


def test_make_optimizer_dispatch():
    p = [np.ones(2)]
    assert isinstance(make_optimizer("sgd-momentum", p, 0.1), SGDMomentum)
    assert isinstance(make_optimizer("adam", p, 0.1), Adam)
    with pytest.raises(ValueError):
        make_optimizer("rmsprop", p, 0.1)

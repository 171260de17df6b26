import numpy as np
import pytest

from sll import Rng, build_network
from sll.datasets import SyntheticSpec, gen_synthetic
from sll.rng import STREAM_DATA, STREAM_ATTACK
from sll.protocol import SessionConfig, run_training
from sll.models import discriminator_specs, inverse_specs, substitute_specs, smashed_shape
from sll.optim import make_optimizer
from sll.framing import Message
from sll.attack import (KernelSet, median_bandwidth, kernel_ladder, mmd2,
                        mmd2_with_grad, disc_step, disc_loss_value,
                        substitute_step, train_inverse, reconstruct,
                        AttackConfig, AttackObserver, CompositeObserver,
                        MMD_KERNEL_COUNT)


def test_kernel_set_validation():
    with pytest.raises(ValueError):
        KernelSet((1.0, 1.0), (0.5, 0.5))
    with pytest.raises(ValueError):
        KernelSet((1.0, -2.0), (0.5, 0.5))
    with pytest.raises(ValueError):
        KernelSet((1.0, 2.0), (0.9, 0.3))
    with pytest.raises(ValueError):
        KernelSet((), ())


def test_median_bandwidth_oracle():
    # three collinear points: pairwise distances 1, 1, 2 -> median 1
    p = np.array([[0.0], [1.0], [2.0]])
    assert median_bandwidth(p) == 1.0
    assert median_bandwidth(np.zeros((4, 2))) == 1.0  # coincident fallback


def test_kernel_ladder_structure():
    pts = Rng(0).spawn(1).normal(size=(32, 4))
    ks = kernel_ladder(pts)
    assert ks.m == MMD_KERNEL_COUNT
    assert all(w == 1.0 / MMD_KERNEL_COUNT for w in ks.weights)
    two_sq = [2.0 * s * s for s in ks.bandwidths]
    for lo, hi in zip(two_sq, two_sq[1:]):
        assert hi / lo == pytest.approx(2.0, rel=1e-12)
    med = median_bandwidth(pts)
    assert two_sq[MMD_KERNEL_COUNT // 2] == pytest.approx(med * med / 2.0, rel=1e-12)


def test_mmd2_self_is_exactly_zero():
    a = Rng(1).spawn(1).normal(size=(16, 5))
    ks = kernel_ladder(a)
    assert mmd2(a, a, ks) == 0.0


def test_mmd2_two_point_closed_form():
    # singleton sets: mmd2 = sum_j beta_j (2 - 2 exp(-|a-b|^2 / (2 s_j^2)))
    a = np.array([[0.3, -1.2, 0.7]])
    b = np.array([[-0.5, 0.4, 0.1]])
    ks = KernelSet((0.5, 1.0, 2.0), (0.2, 0.3, 0.5))
    d2 = float(((a - b) ** 2).sum())
    want = sum(w * (2.0 - 2.0 * np.exp(-d2 / (2.0 * s * s)))
               for s, w in zip(ks.bandwidths, ks.weights))
    # note: n=1 sets are below the estimator's minimum, so compute via 2 copies
    aa = np.vstack([a, a])
    bb = np.vstack([b, b])
    got = mmd2(aa, bb, ks)
    assert got == pytest.approx(want, abs=1e-12)


def test_mmd2_separates_shifted_distributions():
    for seed in range(3):
        rng = Rng(seed)
        a = rng.spawn(1).normal(size=(256, 8))
        same = rng.spawn(2).normal(size=(256, 8))
        far = rng.spawn(3).normal(loc=3.0, size=(256, 8))
        ks = kernel_ladder(np.vstack([a, same]))
        assert mmd2(a, far, ks) >= 10.0 * mmd2(a, same, ks)


def test_mmd2_grad_matches_finite_differences():
    rng = Rng(2)
    a = rng.spawn(1).normal(size=(6, 4))
    b = rng.spawn(2).normal(size=(8, 4))
    ks = kernel_ladder(np.vstack([a, b]))
    val, grad = mmd2_with_grad(a, b, ks)
    assert val == mmd2(a, b, ks)
    h = 1e-6
    for idx in [(0, 0), (2, 3), (5, 1)]:
        ap = a.copy(); ap[idx] += h
        am = a.copy(); am[idx] -= h
        fd = (mmd2(ap, b, ks) - mmd2(am, b, ks)) / (2.0 * h)
        assert grad[idx] == pytest.approx(fd, rel=1e-6, abs=1e-10)


def test_mmd2_input_validation():
    ks = KernelSet((1.0,), (1.0,))
    with pytest.raises(ValueError):
        mmd2(np.zeros((4, 3)), np.zeros((4, 2)), ks)
    with pytest.raises(ValueError):
        mmd2(np.zeros((1, 3)), np.zeros((4, 3)), ks)


def feature_nets(seed, feat=(8, 8, 8)):
    disc = build_network(discriminator_specs(feat), feat, Rng(seed).spawn(102),
                         dtype=np.float64)
    return disc


def test_disc_step_learns_to_separate():
    feat = (8, 8, 8)
    disc = feature_nets(3, feat)
    opt = make_optimizer("adam", disc.params, lr=5e-3)
    rng = Rng(3)
    z_priv = rng.spawn(1).normal(loc=0.5, size=(16,) + feat)
    z_aux = rng.spawn(2).normal(loc=-0.5, size=(16,) + feat)
    first = disc_step(disc, z_priv, z_aux, opt)
    for _ in range(60):
        last = disc_step(disc, z_priv, z_aux, opt)
    assert last < first  # loss decreasing = the critic is separating the sides


def test_disc_weight_clip_projects_parameters():
    disc = feature_nets(4)
    opt = make_optimizer("adam", disc.params, lr=0.5)  # huge lr to force clipping
    rng = Rng(4)
    z_a = rng.spawn(1).normal(size=(8, 8, 8, 8))
    z_b = rng.spawn(2).normal(loc=1.0, size=(8, 8, 8, 8))
    for _ in range(5):
        disc_step(disc, z_a, z_b, opt, weight_clip=0.1)
    assert all(np.abs(p).max() <= 0.1 for p in disc.params)


def test_disc_loss_value_is_finite_at_extremes():
    v = disc_loss_value(np.array([1.0, 1.0]), np.array([0.0, 0.0]))
    assert np.isfinite(v)


def test_substitute_step_reduces_mmd():
    feat = smashed_shape(16, 8, 2)
    sub = build_network(substitute_specs("vgg", 2, 16, 8), (3, 16, 16),
                        Rng(5).spawn(101), dtype=np.float64)
    disc = build_network(discriminator_specs(feat), feat, Rng(5).spawn(102),
                         dtype=np.float64)
    opt = make_optimizer("adam", sub.params, lr=2e-3)
    rng = Rng(5)
    x_aux = gen_synthetic(SyntheticSpec(), 32, rng.spawn(STREAM_DATA)).images
    z_priv = rng.spawn(7).normal(scale=0.5, size=(32,) + feat)
    zh = sub.forward(x_aux.astype(np.float64), train=False)
    ks = kernel_ladder(np.vstack([z_priv.reshape(32, -1), zh.reshape(32, -1)]))
    start = mmd2(zh.reshape(32, -1), z_priv.reshape(32, -1), ks)
    for _ in range(80):
        substitute_step(sub, disc, z_priv, x_aux, ks, opt, no_disc=True)
    zh = sub.forward(x_aux.astype(np.float64), train=False)
    end = mmd2(zh.reshape(32, -1), z_priv.reshape(32, -1), ks)
    assert end < 0.5 * start


def test_substitute_step_grad_cap_bounds_adversarial_push():
    feat = smashed_shape(16, 8, 1)
    sub = build_network(substitute_specs("vgg", 1, 16, 8), (3, 16, 16),
                        Rng(6).spawn(101), dtype=np.float64)
    disc = build_network(discriminator_specs(feat), feat, Rng(6).spawn(102),
                         dtype=np.float64)
    # push the critic head hard so the uncapped upstream would be large
    for p in disc.params:
        p += 0.5
    x = gen_synthetic(SyntheticSpec(), 8, Rng(6).spawn(STREAM_DATA)).images
    z_priv = Rng(6).spawn(7).normal(size=(8,) + feat)
    ks = kernel_ladder(z_priv.reshape(8, -1))

    seen = {}
    real_backward = sub.backward

    def spy(upstream):
        seen["norm"] = float(np.linalg.norm(upstream))
        return real_backward(upstream)

    sub.backward = spy
    opt = make_optimizer("adam", sub.params, lr=1e-3)
    substitute_step(sub, disc, z_priv, x, ks, opt, no_mkmmd=True,
                    disc_grad_cap=0.03)
    assert seen["norm"] <= 0.03 + 1e-12


def test_substitute_both_ablations_is_a_no_op():
    feat = smashed_shape(16, 8, 2)
    sub = build_network(substitute_specs("vgg", 2, 16, 8), (3, 16, 16),
                        Rng(7).spawn(101))
    before = [p.copy() for p in sub.params]
    out = substitute_step(sub, None, None, None, None, None,
                          no_disc=True, no_mkmmd=True)
    assert out == (0.0, 0.0)
    assert all(a.tobytes() == b.tobytes() for a, b in zip(before, sub.params))


def toy_session(seed, observer, iters=12):
    priv = gen_synthetic(SyntheticSpec(), 32, Rng(seed).spawn(STREAM_DATA))
    cfg = SessionConfig(split_point=2, batch_size=16, iterations=iters,
                        dtype=np.float64, server_observer=observer)
    return run_training(cfg, priv, Rng(seed))


def make_observer(seed, aux_n=48, **kw):
    aux = gen_synthetic(SyntheticSpec(), aux_n, Rng(seed + 100).spawn(STREAM_DATA))
    cfg = AttackConfig(inverse_epochs=2, **kw)
    return AttackObserver(cfg, aux, 2, 16, 8, Rng(seed).spawn(STREAM_ATTACK))


def test_observer_is_transparent_to_the_session():
    # attaching the attack must not change what the parties compute
    with_ob = toy_session(8, make_observer(8))
    without = toy_session(8, None)
    for a, b in zip(with_ob.full_net.params, without.full_net.params):
        assert a.tobytes() == b.tobytes()


def test_observer_phase_gates():
    ob = make_observer(9)
    with pytest.raises(RuntimeError):
        ob.fit_inverse()  # before any observation
    res = toy_session(9, ob)
    with pytest.raises(RuntimeError):
        ob.reconstruct(res.snapshot)  # inverse not trained yet
    with pytest.raises(RuntimeError):
        ob.fit_inverse()  # observation not finished
    ob.finish_observation()
    history = ob.fit_inverse()
    assert len(history) == 2
    recon = ob.reconstruct(res.snapshot)
    truth = np.concatenate([p[1] for p in res.snapshot.evaluation_pairs()])
    assert recon.shape == truth.shape
    closing = Message("SmashedData", 0, np.zeros((2, 8, 8, 8), dtype=np.float32))
    with pytest.raises(RuntimeError):
        ob.observe(closing)  # stream is closed


def test_observer_records_loss_history():
    ob = make_observer(10)
    toy_session(10, ob, iters=6)
    assert len(ob.loss_history) == 6
    row = ob.loss_history[-1]
    assert set(row) == {"attack_l_d", "attack_l_disc", "attack_l_mmd"}
    assert np.isfinite(row["attack_l_mmd"])


def test_train_inverse_reduces_reconstruction_error():
    ob = make_observer(11)
    toy_session(11, ob, iters=8)
    ob.finish_observation()
    ob.cfg.inverse_epochs = 6
    history = ob.fit_inverse()
    assert history[-1] < history[0]


def test_composite_observer_fans_out_identically():
    # two identically seeded observers behind one composite see the same stream
    ob_a = make_observer(12)
    ob_b = make_observer(12)
    toy_session(12, CompositeObserver([ob_a, ob_b]), iters=6)
    for pa, pb in zip(ob_a.sub.params, ob_b.sub.params):
        assert pa.tobytes() == pb.tobytes()
    assert CompositeObserver([]).last_losses is None


def test_reconstruct_requires_entries():
    inv = build_network(inverse_specs((8, 8, 8), 16), (8, 8, 8), Rng(0).spawn(1))

    class Empty:
        def smashed_entries(self):
            return []

    with pytest.raises(ValueError):
        reconstruct(inv, Empty())

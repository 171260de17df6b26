import numpy as np
import pytest

from sll import Rng
from sll.detection import GsConfig, GsState, batch_similarities, make_monitor


def test_config_validation():
    with pytest.raises(ValueError):
        GsConfig(warmup=-1)
    with pytest.raises(ValueError):
        GsConfig(window=1)
    with pytest.raises(ValueError):
        GsConfig(lam=-0.5)
    assert make_monitor(None) is None
    assert isinstance(make_monitor(GsConfig()), GsState)


def test_batch_similarities_hand_oracle():
    # two identical rows per label, orthogonal across labels:
    # same-label cosine 1, different-label cosine 0
    g = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    y = np.array([0, 0, 1, 1])
    s_same, s_diff = batch_similarities(g, y)
    assert s_same == pytest.approx(1.0)
    assert s_diff == pytest.approx(0.0)
    # one aligned and two opposed pairs within one label: (1 - 1 - 1) / 3
    g2 = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    s_same, s_diff = batch_similarities(g2, np.zeros(3))
    assert s_same == pytest.approx(-1.0 / 3.0)
    assert s_diff is None  # single class: no cross pairs


def test_batch_similarities_excludes_zero_rows():
    g = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    y = np.array([0, 0, 1])
    s_same, s_diff = batch_similarities(g, y)
    assert s_same is None  # the only same-label partner was the zero row
    assert s_diff == pytest.approx(0.0)
    with pytest.raises(ValueError):
        batch_similarities(np.zeros((3, 2)), np.array([0, 0, 1]))
    with pytest.raises(ValueError):
        batch_similarities(np.ones((2, 2)), np.array([0]))
    with pytest.raises(ValueError):
        batch_similarities(np.ones((1, 2)), np.array([0]))


def honest_batch(rng, n=8):
    """Per-label base direction plus small noise: clear positive gap."""
    dirs = np.eye(4)
    y = rng.integers(0, 4, size=n)
    g = dirs[y] + 0.1 * rng.normal(size=(n, 4))
    return g, y


def random_batch(rng, n=8):
    """Label-agnostic gradients: no similarity structure."""
    return rng.normal(size=(n, 4)), rng.integers(0, 4, size=n)


def test_warmup_suppresses_readings():
    state = GsState(GsConfig(warmup=5, window=2))
    rng = Rng(0).spawn(1)
    for i in range(5):
        assert state.update(*random_batch(rng)) is None
    assert state.iteration == 5
    assert state.gaps == []


def test_window_must_fill_before_scoring():
    state = GsState(GsConfig(warmup=0, window=4))
    rng = Rng(1).spawn(1)
    outs = [state.update(*honest_batch(rng)) for _ in range(6)]
    assert outs[:3] == [None, None, None]
    for out in outs[3:]:
        score, verdict = out
        assert verdict in ("ok", "attack")
    assert len(state.gaps) == 4  # sliding, never grows past the window


def test_honest_gradients_score_ok():
    state = GsState(GsConfig(warmup=0, window=8, tau=0.05))
    rng = Rng(2).spawn(1)
    verdicts = []
    for _ in range(20):
        out = state.update(*honest_batch(rng, n=12))
        if out is not None:
            verdicts.append(out[1])
    assert verdicts and all(v == "ok" for v in verdicts)


def test_label_agnostic_gradients_score_attack():
    state = GsState(GsConfig(warmup=0, window=8, tau=0.05))
    rng = Rng(3).spawn(1)
    verdicts = []
    for _ in range(20):
        out = state.update(*random_batch(rng, n=12))
        if out is not None:
            verdicts.append(out[1])
    assert verdicts and all(v == "attack" for v in verdicts)


def test_score_components():
    # constant positive gaps: mean c, no overshoots, exact linear fit
    state = GsState(GsConfig(warmup=0, window=4, tau=0.05, lam=0.5))
    state.gaps = [0.3, 0.3, 0.3, 0.3]
    assert state._score() == pytest.approx(0.3, abs=1e-12)
    # half the window non-positive costs lam * 0.5
    state.gaps = [0.3, 0.0, 0.3, 0.0]
    g = np.asarray(state.gaps)
    t = np.arange(4.0)
    coef = np.polyfit(t, g, 1)
    e = float(np.sqrt(((g - np.polyval(coef, t)) ** 2).mean()))
    assert state._score() == pytest.approx(0.15 - 0.5 * 0.5 - e, abs=1e-12)


def test_single_class_batches_never_reach_the_window():
    state = GsState(GsConfig(warmup=0, window=2))
    g = np.ones((4, 3))
    y = np.zeros(4)
    assert state.update(g, y) is None
    assert state.update(g, y) is None
    assert state.gaps == []

"""Feature-alignment reconstruction attack in three phases.

Phase a (during split learning): a server-side observer trains a substitute
client on auxiliary data so its features match the victim's smashed data,
driven by a discriminator loss and a multi-kernel MMD loss.

Phase b (after training): a decoder is fit to invert the frozen substitute on
the auxiliary set.

Phase c: the decoder maps the archived final-pass smashed data back to images.

The observer is read-only with respect to the protocol: it copies payloads and
never writes a message or touches party state.
"""

from dataclasses import dataclass, field

import numpy as np

from .losses import sigmoid, mse_with_grad, PROB_EPS
from .models import substitute_specs, discriminator_specs, inverse_specs
from .network import build_network
from .optim import make_optimizer
from .rng import Rng

MMD_KERNEL_COUNT = 5


@dataclass(frozen=True)
class KernelSet:
    """Gaussian kernel mixture: k(x,y) = sum_j beta_j exp(-|x-y|^2 / (2 s_j^2))."""
    bandwidths: tuple  # sigma_j, strictly positive, distinct
    weights: tuple     # beta_j on the simplex

    def __post_init__(self):
        bw = tuple(float(b) for b in self.bandwidths)
        w = tuple(float(v) for v in self.weights)
        object.__setattr__(self, "bandwidths", bw)
        object.__setattr__(self, "weights", w)
        if len(bw) != len(w) or not bw:
            raise ValueError("bandwidths and weights must align and be nonempty")
        if any(b <= 0 for b in bw):
            raise ValueError("bandwidths must be strictly positive")
        if len(set(bw)) != len(bw):
            raise ValueError("bandwidths must be distinct")
        if any(v < 0 for v in w) or abs(sum(w) - 1.0) > 1e-9:
            raise ValueError("weights must be on the simplex (sum 1, nonnegative)")

    @property
    def m(self):
        return len(self.bandwidths)


def median_bandwidth(points) -> float:
    """Median pairwise distance of the pooled sample; 1.0 if all coincide."""
    p = np.asarray(points, dtype=np.float64).reshape(len(points), -1)
    if len(p) < 2:
        raise ValueError("need at least 2 points")
    sq = (p * p).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (p @ p.T)
    iu = np.triu_indices(len(p), k=1)
    med = float(np.median(np.sqrt(np.maximum(d2[iu], 0.0))))
    return med if med > 0.0 else 1.0


def kernel_ladder(points, m: int = MMD_KERNEL_COUNT) -> KernelSet:
    """Median-heuristic ladder: the median distance squared and halved serves
    as the middle 2*sigma^2; neighbors step by powers of two."""
    base = median_bandwidth(points) ** 2 / 2.0  # middle 2 sigma^2
    if base <= 0.0:
        base = 1.0
    mid = m // 2
    two_sigma_sq = [base * 2.0 ** (j - mid) for j in range(m)]
    bandwidths = tuple(np.sqrt(t / 2.0) for t in two_sigma_sq)
    return KernelSet(bandwidths, tuple(1.0 / m for _ in range(m)))


def _pairwise_sq(a, b):
    sa = (a * a).sum(axis=1)
    sb = (b * b).sum(axis=1)
    d2 = sa[:, None] + sb[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def mmd2(a, b, kernels: KernelSet) -> float:
    """Biased squared MMD estimator between two flattened sample sets."""
    v, _ = _mmd2_impl(a, b, kernels, want_grad=False)
    return v


def mmd2_with_grad(a, b, kernels: KernelSet):
    """(mmd2 value, gradient w.r.t. a); b is treated as constant."""
    return _mmd2_impl(a, b, kernels, want_grad=True)


def _mmd2_impl(a, b, kernels, want_grad):
    af = np.asarray(a, dtype=np.float64).reshape(len(a), -1)
    bf = np.asarray(b, dtype=np.float64).reshape(len(b), -1)
    if af.shape[1] != bf.shape[1]:
        raise ValueError(f"feature dims differ: {af.shape[1]} vs {bf.shape[1]}")
    n, m = len(af), len(bf)
    if n < 2 or m < 2:
        raise ValueError("need at least 2 samples per set")
    d_aa = _pairwise_sq(af, af)
    d_bb = _pairwise_sq(bf, bf)
    d_ab = _pairwise_sq(af, bf)
    value = 0.0
    grad = np.zeros_like(af) if want_grad else None
    for sigma, beta in zip(kernels.bandwidths, kernels.weights):
        t = 2.0 * sigma * sigma
        k_aa = np.exp(-d_aa / t)
        k_bb = np.exp(-d_bb / t)
        k_ab = np.exp(-d_ab / t)
        value += beta * (k_aa.mean() + k_bb.mean() - 2.0 * k_ab.mean())
        if want_grad:
            # d k(x,y)/dx = k * (y - x) * 2/t; diagonal of k_aa is constant 1
            coeff = beta * 2.0 / t
            row_aa = k_aa.sum(axis=1)
            grad += coeff * (2.0 / (n * n)) * (k_aa @ af - row_aa[:, None] * af)
            row_ab = k_ab.sum(axis=1)
            grad -= coeff * (2.0 / (n * m)) * (k_ab @ bf - row_ab[:, None] * af)
    if want_grad:
        return float(value), grad.reshape(np.asarray(a).shape)
    return float(value), None


# ---------------------------------------------------------------------------
# discriminator and substitute steps

def _disc_forward_backward(disc, feats, upstream_per_score):
    """Push per-score upstream through the critic; returns (scores, grads)."""
    scores = disc.forward(feats, train=True)
    _, grads = disc.backward(upstream_per_score)
    return scores, grads


def disc_loss_value(p_priv, p_aux):
    p_priv = np.clip(p_priv, PROB_EPS, 1.0 - PROB_EPS)
    p_aux = np.clip(p_aux, PROB_EPS, 1.0 - PROB_EPS)
    return float(np.mean(np.log(1.0 - p_priv)) + np.mean(np.log(p_aux)))


def disc_step(disc, z_priv, z_aux, opt, weight_clip=None) -> float:
    """One critic update: push D(real victim features) up, D(substitute
    features) down; returns the batch loss (decreasing is learning).

    weight_clip projects critic weights to [-c, c] after the step. An
    unconstrained critic develops cliffs in its score field and feeds the
    substitute rare huge gradient bursts instead of a steady signal; the
    projection keeps it smooth and close to the decision boundary.
    """
    if len(z_priv) < 1 or len(z_aux) < 1:
        raise ValueError("empty batch")
    z_priv = np.asarray(z_priv, dtype=disc.params[0].dtype)
    z_aux = np.asarray(z_aux, dtype=disc.params[0].dtype)
    s_priv = disc.forward(z_priv, train=True)
    # d mean(log(1-sigmoid(s)))/ds = -sigmoid(s)/n, dead above the prob clamp
    # (the clamp sits inside the loss, so a saturated side stops pulling and
    # the optimizer can recover the other one)
    p_priv = sigmoid(s_priv)
    up_priv = np.where(p_priv <= 1.0 - PROB_EPS, -p_priv, 0.0) / s_priv.shape[0]
    _, g_priv = disc.backward(up_priv.astype(s_priv.dtype))
    s_aux = disc.forward(z_aux, train=True)
    # d mean(log(sigmoid(s)))/ds = (1-sigmoid(s))/n, dead below the clamp
    p_aux = sigmoid(s_aux)
    up_aux = np.where(p_aux >= PROB_EPS, 1.0 - p_aux, 0.0) / s_aux.shape[0]
    _, g_aux = disc.backward(up_aux.astype(s_aux.dtype))
    opt.step([ga + gb for ga, gb in zip(g_priv, g_aux)])
    if weight_clip is not None:
        for p in disc.params:
            np.clip(p, -weight_clip, weight_clip, out=p)
    return disc_loss_value(p_priv, p_aux)


def substitute_step(sub, disc, z_priv, x_aux, kernels, opt,
                    no_disc=False, no_mkmmd=False,
                    disc_weight=1.0, mmd_weight=1.0, disc_grad_cap=None):
    """One substitute update: fool the critic and close the MMD gap.

    The victim batch z_priv is a constant (the attacker cannot backpropagate
    into the real client), and the critic is frozen here. disc_grad_cap
    rescales the adversarial upstream to at most that L2 norm: a relu critic
    has locally steep regions, and rare burst gradients otherwise swamp the
    optimizer's step-size statistics for thousands of iterations.
    """
    if no_disc and no_mkmmd:
        return 0.0, 0.0
    dtype = sub.params[0].dtype
    x_aux = np.asarray(x_aux, dtype=dtype)
    z_hat = sub.forward(x_aux, train=True)
    if z_hat.shape[1:] != np.asarray(z_priv).shape[1:]:
        raise ValueError(f"substitute output {z_hat.shape[1:]} does not match "
                         f"victim features {np.asarray(z_priv).shape[1:]}")
    upstream = np.zeros_like(z_hat)
    l_disc, l_mmd = 0.0, 0.0
    if not no_disc:
        s = disc.forward(z_hat, train=True)
        p = sigmoid(s)
        l_disc = float(np.mean(np.log(1.0 - np.clip(p, PROB_EPS, 1.0 - PROB_EPS))))
        # same clamp-in-loss rule: once the critic is fully fooled the
        # adversarial push goes quiet instead of growing without bound
        up_s = np.where(p <= 1.0 - PROB_EPS, -p, 0.0) / s.shape[0]
        dz, _ = disc.backward(up_s.astype(s.dtype))  # critic stays frozen
        if disc_grad_cap is not None:
            norm = float(np.linalg.norm(dz))
            if norm > disc_grad_cap:
                dz = dz * (disc_grad_cap / norm)
        upstream += disc_weight * dz
    if not no_mkmmd:
        l_mmd, g_mmd = mmd2_with_grad(z_hat.reshape(len(z_hat), -1),
                                      np.asarray(z_priv).reshape(len(z_priv), -1),
                                      kernels)
        upstream += mmd_weight * g_mmd.reshape(z_hat.shape).astype(dtype)
    _, grads = sub.backward(upstream)
    opt.step(grads)
    return l_disc, l_mmd


def train_inverse(inv, sub, aux, epochs, opt, rng: Rng, batch_size=32):
    """Fit the decoder to invert the frozen substitute over auxiliary images."""
    dtype = inv.params[0].dtype
    n = len(aux)
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        epoch_loss, seen = 0.0, 0
        for i in range(0, n, batch_size):
            idx = order[i:i + batch_size]
            x = aux.images[idx].astype(dtype)
            z = sub.forward(x, train=False)  # frozen: eval pass, no update
            y = inv.forward(z.astype(dtype), train=True)
            loss, dy = mse_with_grad(y, x)
            _, grads = inv.backward(dy.astype(dtype))
            opt.step(grads)
            epoch_loss += loss * len(idx)
            seen += len(idx)
        history.append(epoch_loss / seen)
    return history


def reconstruct(inv, snapshot):
    """Decode every archived smashed batch; one image per snapshot row."""
    entries = snapshot.smashed_entries()
    if not entries:
        raise ValueError("empty snapshot")
    dtype = inv.params[0].dtype
    out = [inv.forward(z.astype(dtype), train=False) for _, z in entries]
    return np.concatenate(out, axis=0)


# ---------------------------------------------------------------------------
# configuration and the protocol observer

@dataclass
class AttackConfig:
    family: str = "vgg"  # substitute block family: vgg | res | dense
    kernel_count: int = MMD_KERNEL_COUNT
    disc_weight: float = 1.0
    mmd_weight: float = 1.0
    disc_steps: int = 1
    sub_steps: int = 1
    disc_weight_clip: float = 0.1  # None disables the critic projection
    disc_grad_cap: float = 0.03    # L2 cap on the adversarial upstream
    no_disc: bool = False
    no_mkmmd: bool = False
    inverse_epochs: int = 50
    batch_size: int = 32
    disc_optimizer: dict = field(default_factory=lambda: {"kind": "adam", "lr": 5e-3})
    sub_optimizer: dict = field(default_factory=lambda: {"kind": "adam", "lr": 2e-3})
    inv_optimizer: dict = field(default_factory=lambda: {"kind": "adam", "lr": 2e-3})
    kernel_refresh: int = 50  # iterations between median-heuristic refreshes


class AttackObserver:
    """Server-side read-only hook running phase a online.

    Phases are gated: the decoder can only be trained after observation ends,
    and reconstruction only after the decoder exists.
    """

    def __init__(self, cfg: AttackConfig, aux, split_point, image_size,
                 base_channels, rng: Rng, dtype=np.float32):
        self.cfg = cfg
        self.aux = aux
        self.rng = rng
        self.dtype = dtype
        self.image_size = image_size
        self._built = False
        self._finished = False
        self.split_point = split_point
        self.base_channels = base_channels
        self.sub = None
        self.disc = None
        self.inv = None
        self.kernels = None
        self.last_losses = None
        self.loss_history = []
        self._iteration = 0

    def _build(self, feature_shape):
        sub_specs = substitute_specs(self.cfg.family, self.split_point,
                                     self.image_size, self.base_channels)
        self.sub = build_network(sub_specs, (3, self.image_size, self.image_size),
                                 self.rng.spawn(101), dtype=self.dtype)
        if tuple(self.sub.output_shape) != tuple(feature_shape):
            raise ValueError(f"substitute output {self.sub.output_shape} does not "
                             f"match observed features {feature_shape}")
        self.disc = build_network(discriminator_specs(feature_shape), feature_shape,
                                  self.rng.spawn(102), dtype=self.dtype)
        self._opt_disc = make_optimizer(self.cfg.disc_optimizer["kind"], self.disc.params,
                                        **{k: v for k, v in self.cfg.disc_optimizer.items()
                                           if k != "kind"})
        self._opt_sub = make_optimizer(self.cfg.sub_optimizer["kind"], self.sub.params,
                                       **{k: v for k, v in self.cfg.sub_optimizer.items()
                                          if k != "kind"})
        self._built = True

    def _aux_batch(self):
        idx = self.rng.choice(len(self.aux), size=min(self.cfg.batch_size, len(self.aux)),
                              replace=False)
        return self.aux.images[idx].astype(self.dtype)

    def observe(self, msg):
        """Consume one SmashedData message; never mutates it."""
        if msg.kind != "SmashedData":
            return
        if self._finished:
            raise RuntimeError("observer already finished")
        z_priv = np.array(msg.payload, copy=True)  # detached victim features
        if not self._built:
            self._build(z_priv.shape[1:])
        if self.cfg.no_disc and self.cfg.no_mkmmd:
            self.last_losses = None
            self._iteration += 1
            return
        if self.kernels is None or (self.cfg.kernel_refresh > 0
                                    and self._iteration % self.cfg.kernel_refresh == 0):
            zf = z_priv.reshape(len(z_priv), -1)
            z_hat = self.sub.forward(self._aux_batch(), train=False)
            pool = np.concatenate([zf, z_hat.reshape(len(z_hat), -1)])
            self.kernels = kernel_ladder(pool, self.cfg.kernel_count)
        l_d = None
        if not self.cfg.no_disc:
            for _ in range(self.cfg.disc_steps):
                with_sub = self.sub.forward(self._aux_batch(), train=True)
                l_d = disc_step(self.disc, z_priv, with_sub, self._opt_disc,
                                weight_clip=self.cfg.disc_weight_clip)
        l_disc, l_mmd = 0.0, 0.0
        for _ in range(self.cfg.sub_steps):
            l_disc, l_mmd = substitute_step(self.sub, self.disc, z_priv,
                                            self._aux_batch(), self.kernels,
                                            self._opt_sub,
                                            no_disc=self.cfg.no_disc,
                                            no_mkmmd=self.cfg.no_mkmmd,
                                            disc_weight=self.cfg.disc_weight,
                                            mmd_weight=self.cfg.mmd_weight,
                                            disc_grad_cap=self.cfg.disc_grad_cap)
        self.last_losses = {"attack_l_d": l_d, "attack_l_disc": l_disc,
                            "attack_l_mmd": l_mmd}
        self.loss_history.append(self.last_losses)
        self._iteration += 1

    def finish_observation(self):
        self._finished = True

    def fit_inverse(self):
        """Phase b: train the decoder against the frozen substitute."""
        if not self._finished:
            raise RuntimeError("phase gate: finish observation before inverse training")
        if not self._built:
            raise RuntimeError("observer never saw any features")
        feature_shape = tuple(self.sub.output_shape)
        self.inv = build_network(inverse_specs(feature_shape, self.image_size),
                                 feature_shape, self.rng.spawn(103), dtype=self.dtype)
        opt = make_optimizer(self.cfg.inv_optimizer["kind"], self.inv.params,
                             **{k: v for k, v in self.cfg.inv_optimizer.items()
                                if k != "kind"})
        return train_inverse(self.inv, self.sub, self.aux, self.cfg.inverse_epochs,
                             opt, self.rng.spawn(104), self.cfg.batch_size)

    def reconstruct(self, snapshot):
        """Phase c: map the archived smashed data back to image space."""
        if self.inv is None:
            raise RuntimeError("phase gate: train the inverse before reconstructing")
        return reconstruct(self.inv, snapshot)


class CompositeObserver:
    """Fan one message stream out to several observers (ablation studies share
    a single session)."""

    def __init__(self, observers):
        self.observers = list(observers)

    def observe(self, msg):
        for ob in self.observers:
            ob.observe(msg)

    @property
    def last_losses(self):
        return self.observers[0].last_losses if self.observers else None

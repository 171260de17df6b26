"""Client-side defenses: distance-correlation regularization, DP-style
gradient sanitization, and Laplacian feature obfuscation.

All defenses act strictly on the client: they transform the outgoing smashed
batch or the returned gradient, and the server never sees their configs.
"""

from dataclasses import dataclass

import numpy as np

from .rng import Rng


def _pairwise_dist(v):
    """Euclidean distance matrix of row vectors."""
    sq = (v * v).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (v @ v.T)
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def _double_center(d):
    return d - d.mean(axis=0, keepdims=True) - d.mean(axis=1, keepdims=True) + d.mean()


def distance_correlation(x, z):
    """Sample distance correlation between two row-matched batches, in [0,1].

    Rows are flattened per sample; returns 0 when either marginal distance
    variance vanishes (constant input convention).
    """
    r, _ = _dcor_parts(np.asarray(x, dtype=np.float64).reshape(len(x), -1),
                       np.asarray(z, dtype=np.float64).reshape(len(z), -1))
    return r


def _dcor_parts(xf, zf):
    n = xf.shape[0]
    if n != zf.shape[0]:
        raise ValueError("batch sizes differ")
    if n < 4:
        raise ValueError("distance correlation needs n >= 4")
    a = _pairwise_dist(xf)
    b = _pairwise_dist(zf)
    A = _double_center(a)
    B = _double_center(b)
    v_xy = (A * B).mean()
    v_xx = (A * A).mean()
    v_zz = (B * B).mean()
    if v_xx <= 0.0 or v_zz <= 0.0:
        return 0.0, None
    r2 = v_xy / np.sqrt(v_xx * v_zz)
    r = float(min(np.sqrt(max(r2, 0.0)), 1.0))
    return r, (b, A, B, v_xy, v_xx, v_zz, r)


def distance_correlation_grad(x, z):
    """(dCor value, gradient of dCor w.r.t. z), z gradient shaped like z."""
    xf = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    zf = np.asarray(z, dtype=np.float64).reshape(len(z), -1)
    r, parts = _dcor_parts(xf, zf)
    if parts is None or r == 0.0:
        return r, np.zeros_like(np.asarray(z, dtype=np.float64))
    b, A, B, v_xy, v_xx, v_zz, _ = parts
    n = xf.shape[0]
    # r = sqrt(v_xy) / (v_xx * v_zz)^(1/4); differentiate through the
    # double-centered Frobenius products, using that A and B are centered so
    # d v_xy / d b = A / n^2 and d v_zz / d b = 2 B / n^2
    dr_db = (A / v_xy - B / v_zz) * (r / (2.0 * n * n))
    # chain through b_kl = |z_k - z_l|; dr_db is symmetric so the two
    # occurrences of z_k contribute twice
    safe_b = np.where(b > 0.0, b, 1.0)
    w = 2.0 * dr_db / safe_b
    np.fill_diagonal(w, 0.0)
    row = w.sum(axis=1)
    gz = row[:, None] * zf - w @ zf
    return r, gz.reshape(np.asarray(z).shape)


@dataclass
class DefenseConfig:
    kind: str = "none"  # dcor | dp | noise | none
    alpha: float = 0.0  # dcor mixing weight
    clip: float = 1.0   # dp clip norm C
    scale: float = 0.0  # dp Laplace scale b
    sigma: float = 0.0  # noise Laplace scale

    def __post_init__(self):
        if self.kind not in ("dcor", "dp", "noise", "none"):
            raise ValueError(f"unknown defense kind {self.kind!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0,1]")
        if self.clip <= 0:
            raise ValueError("clip norm must be > 0")
        if self.scale < 0 or self.sigma < 0:
            raise ValueError("noise scales must be >= 0")

    def eps_label(self):
        """Nominal per-step epsilon recorded in transcripts (a label, not an
        accounting guarantee)."""
        if self.kind == "dp" and self.scale > 0:
            return self.clip / self.scale
        return None


def dp_sanitize(grad, clip, scale, rng: Rng):
    """Per-sample L2 clip to norm <= clip, then elementwise Laplace(0, scale)."""
    if clip <= 0:
        raise ValueError("clip norm must be > 0")
    if scale < 0:
        raise ValueError("scale must be >= 0")
    g = np.asarray(grad)
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite gradient")
    flat = g.reshape(len(g), -1)
    norms = np.linalg.norm(flat, axis=1)
    factor = np.minimum(1.0, clip / np.maximum(norms, 1e-12))
    out = flat * factor[:, None]
    if scale > 0:
        out = out + rng.laplace(0.0, scale, size=out.shape)
    return out.reshape(g.shape).astype(g.dtype, copy=False)


def noise_obfuscate(z, sigma, rng: Rng):
    """Additive elementwise Laplace(0, sigma) on the outgoing features."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return z
    return (z + rng.laplace(0.0, sigma, size=z.shape)).astype(z.dtype, copy=False)


def dcor_client_gradient(x, z, g_task, alpha):
    """Mix the decorrelation gradient with the server's task gradient:
    alpha * d dCor(x,z)/dz + (1-alpha) * g_task."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0,1]")
    if alpha == 0.0:
        return g_task
    _, gz = distance_correlation_grad(x, z)
    return alpha * gz.astype(g_task.dtype) + (1.0 - alpha) * g_task


class Defense:
    """Session hook wrapping one DefenseConfig; see protocol driver."""

    def __init__(self, config: DefenseConfig, rng: Rng):
        self.config = config
        self.rng = rng

    def transform_smashed(self, z, x):
        if self.config.kind == "noise":
            return noise_obfuscate(z, self.config.sigma, self.rng)
        return z

    def transform_upstream(self, g, x, z):
        if self.config.kind == "dp":
            return dp_sanitize(g, self.config.clip, self.config.scale, self.rng)
        if self.config.kind == "dcor":
            return dcor_client_gradient(x, z, g, self.config.alpha)
        return g

    def describe(self):
        d = {"defense": self.config.kind}
        eps = self.config.eps_label()
        if eps is not None:
            d["eps_label"] = eps
        return d


def make_defense(config: DefenseConfig, rng: Rng):
    if config.kind == "none":
        return None
    return Defense(config, rng)

"""Gradient-anomaly monitor for split-learning clients.

Honest task training returns gradients whose pairwise cosine similarity is
higher within a label class than across classes.  A hijacking server that
returns gradients unrelated to the labels loses that structure.  The monitor
tracks the per-batch similarity gap over a sliding window and scores

    score = G - lambda * O - E

where G is the mean gap (same-label minus different-label cosine), O the
fraction of window batches with a non-positive gap, and E the RMS residual of
a least-squares linear fit to the gap series.  A score below the threshold is
an attack verdict and terminates the session.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class GsConfig:
    warmup: int = 450
    window: int = 32
    tau: float = 0.05
    lam: float = 0.5

    def __post_init__(self):
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


def batch_similarities(grads, labels):
    """Mean pairwise cosine within and across label groups.

    Returns (s_same, s_diff); a side with no pairs is None.  Zero-norm rows
    are excluded; excluding everything is an error.
    """
    g = np.asarray(grads, dtype=np.float64).reshape(len(grads), -1)
    y = np.asarray(labels)
    if len(g) != len(y):
        raise ValueError("gradients and labels disagree on batch size")
    if len(g) < 2:
        raise ValueError("need at least 2 rows")
    norms = np.linalg.norm(g, axis=1)
    keep = norms > 0.0
    if not keep.any():
        raise ValueError("all gradient rows are zero")
    g, y, norms = g[keep], y[keep], norms[keep]
    if len(g) < 2:
        raise ValueError("fewer than 2 nonzero gradient rows")
    unit = g / norms[:, None]
    cos = np.clip(unit @ unit.T, -1.0, 1.0)
    same = y[:, None] == y[None, :]
    iu = np.triu_indices(len(g), k=1)
    cos_u, same_u = cos[iu], same[iu]
    s_same = float(cos_u[same_u].mean()) if same_u.any() else None
    s_diff = float(cos_u[~same_u].mean()) if (~same_u).any() else None
    return s_same, s_diff


class GsState:
    """Sliding-window monitor; one instance per session."""

    def __init__(self, config: GsConfig):
        self.config = config
        self.gaps = []  # most recent <= window similarity gaps
        self.iteration = 0
        self.verdict = None

    def _score(self):
        gaps = np.asarray(self.gaps)
        g = float(gaps.mean())
        o = float((gaps <= 0.0).mean())
        t = np.arange(len(gaps), dtype=np.float64)
        coef = np.polyfit(t, gaps, 1)
        resid = gaps - np.polyval(coef, t)
        e = float(np.sqrt((resid ** 2).mean()))
        return g - self.config.lam * o - e

    def update(self, grads, labels) -> Optional[tuple]:
        """Feed one returned-gradient batch; returns (score, verdict) once the
        window is full, None during warmup or while it fills."""
        self.iteration += 1
        if self.iteration <= self.config.warmup:
            return None
        s_same, s_diff = batch_similarities(grads, labels)
        if s_same is None or s_diff is None:
            return None  # single-class or degenerate batch: no gap reading
        self.gaps.append(s_same - s_diff)
        if len(self.gaps) > self.config.window:
            self.gaps.pop(0)
        if len(self.gaps) < self.config.window:
            return None
        score = self._score()
        self.verdict = "attack" if score < self.config.tau else "ok"
        return score, self.verdict


def make_monitor(config: Optional[GsConfig]):
    return GsState(config) if config is not None else None

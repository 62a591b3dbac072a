"""Diffusion baselines: local and global consistency (LGC) and label propagation (LP).

Both use a dense Gaussian affinity ``exp(-|xi - xj|^2 / (2 sigma^2))`` with a
zero diagonal and iterate to a fixed point instead of inverting a matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .datasets import Dataset, LabelConfig
from .engine import LabelAssignment


@dataclass(frozen=True)
class AffinityConfig:
    sigma: float = 1.0
    alpha_lgc: float = 0.99
    max_sweeps: int = 10_000
    tol: float = 1e-6

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0.0 < self.alpha_lgc < 1.0:
            raise ValueError("alpha_lgc must lie in (0, 1)")


def squared_distances(features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    return cdist(x, x, "sqeuclidean")


def affinity(sqdist: np.ndarray, sigma: float) -> np.ndarray:
    w = np.exp(-sqdist / (2.0 * sigma * sigma))
    np.fill_diagonal(w, 0.0)
    return w


def transition_matrix(sqdist: np.ndarray, sigma: float) -> np.ndarray:
    """Row-normalized affinity ``D^-1 W``.

    Each row is shifted by its smallest off-diagonal distance before
    exponentiating; the shift cancels in the normalization and keeps rows
    from underflowing to zero at small ``sigma``.
    """
    z = -sqdist / (2.0 * sigma * sigma)
    np.fill_diagonal(z, -np.inf)
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return p


def seed_matrix(cfg: LabelConfig, c: int) -> np.ndarray:
    y = np.zeros((cfg.n, c))
    idx = cfg.labeled_indices
    y[idx, cfg.given_labels[idx]] = 1.0
    return y


def _inputs(d: Dataset, sqdist):
    return squared_distances(d.features) if sqdist is None else sqdist


def lgc_classify(d: Dataset, cfg: LabelConfig, ac: AffinityConfig, sqdist=None) -> LabelAssignment:
    """Spread labels with ``F <- a S F + (1 - a) Y``, ``S = D^-1/2 W D^-1/2``.

    Every row, labeled or not, is labeled by its argmax. Isolated rows (zero
    affinity everywhere) keep their seed row. If ``max_sweeps`` is exhausted
    the last iterate is used and ``truncated`` is set.
    """
    w = affinity(_inputs(d, sqdist), ac.sigma)
    deg = w.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    np.divide(1.0, np.sqrt(deg), out=inv_sqrt, where=deg > 0)
    s = inv_sqrt[:, None] * w * inv_sqrt[None, :]
    y = seed_matrix(cfg, d.c)
    base = (1.0 - ac.alpha_lgc) * y
    f = y.copy()
    converged = False
    sweeps = 0
    while sweeps < ac.max_sweeps:
        nxt = ac.alpha_lgc * (s @ f) + base
        sweeps += 1
        change = np.abs(nxt - f).max()
        f = nxt
        if change < ac.tol:
            converged = True
            break
    return LabelAssignment(
        labels=np.argmax(f, axis=1).astype(np.int64),
        decision=f,
        variant="LGC",
        iterations=sweeps,
        truncated=not converged,
    )


def lp_classify(d: Dataset, cfg: LabelConfig, ac: AffinityConfig, sqdist=None) -> LabelAssignment:
    """Harmonic label propagation: ``F <- D^-1 W F`` with labeled rows clamped."""
    p = transition_matrix(_inputs(d, sqdist), ac.sigma)
    y = seed_matrix(cfg, d.c)
    lab = cfg.labeled_mask
    f = y.copy()
    converged = False
    sweeps = 0
    while sweeps < ac.max_sweeps:
        nxt = p @ f
        nxt[lab] = y[lab]
        sweeps += 1
        change = np.abs(nxt - f).max()
        f = nxt
        if change < ac.tol:
            converged = True
            break
    labels = np.argmax(f, axis=1).astype(np.int64)
    labels[lab] = cfg.given_labels[lab]
    return LabelAssignment(
        labels=labels,
        decision=f,
        variant="LP",
        iterations=sweeps,
        truncated=not converged,
    )

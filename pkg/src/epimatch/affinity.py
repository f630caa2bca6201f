"""Node / edge affinities and the factorized nm x nm affinity matrix.

The global affinity is never formed in the production path.  Assignment
``(i1, i2)`` is flattened row-major to ``i1 * m + i2``.  Every undirected
edge pair ``(e1, e2)`` links two assignment pairs in each of two ways:

* parallel: tails matched to tails and heads to heads, weight ``me``;
* crossed: tail of ``e1`` to head of ``e2`` and vice versa, weight
  ``me_cross`` (edge affinity against the reversed ``e2``).

Both links are written into ``M`` symmetrically.  Without ``me_cross`` only
the parallel links exist, which is the plain directed-representative form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimMismatch, TooLarge
from .graph import ObjectGraph, reverse_edge_features

DENSE_LIMIT = 4096


def symmetric_lambda(lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.ndim != 2 or lam.shape[0] != lam.shape[1]:
        raise DimMismatch(f"lambda must be square, got {lam.shape}")
    return 0.5 * (lam + lam.T)


def default_lambda(descriptor_dim: int, sum_weight: float = 0.15,
                   displacement_weight: float = 1.2) -> np.ndarray:
    """Untrained edge metric: descriptor-sum agreement plus displacement agreement.

    The absolute-difference block gets zero weight; its inner products are a
    near-constant positive offset that would make every edge pair look alike.
    """
    d = int(descriptor_dim)
    return np.diag(np.r_[np.full(d, sum_weight), np.zeros(d), np.full(2, displacement_weight)])


def node_affinity(x1, x2, penalty=None) -> np.ndarray:
    """Rectified inner products, optionally scaled by an epipolar penalty."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.ndim != 2 or x2.ndim != 2 or x1.shape[1] != x2.shape[1]:
        raise DimMismatch(f"feature dims differ: {x1.shape} vs {x2.shape}")
    mp = np.maximum(x1 @ x2.T, 0.0)
    if penalty is not None:
        w = getattr(penalty, "w", penalty)
        w = np.asarray(w, dtype=float)
        if w.shape != mp.shape:
            raise DimMismatch(f"penalty shape {w.shape} != {mp.shape}")
        mp = mp * w
    return mp


def edge_affinity(h1, h2, lam) -> np.ndarray:
    h1 = np.asarray(h1, dtype=float)
    h2 = np.asarray(h2, dtype=float)
    lam = symmetric_lambda(lam)
    if h1.ndim != 2 or h2.ndim != 2 or h1.shape[1] != lam.shape[0] or h2.shape[1] != lam.shape[0]:
        raise DimMismatch(f"edge features {h1.shape}, {h2.shape} vs lambda {lam.shape}")
    return np.maximum(h1 @ lam @ h2.T, 0.0)


@dataclass(frozen=True)
class AffinityFactors:
    mp: np.ndarray
    me: np.ndarray
    tails1: np.ndarray
    heads1: np.ndarray
    tails2: np.ndarray
    heads2: np.ndarray
    me_cross: Optional[np.ndarray] = None
    _idx: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        mp = np.asarray(self.mp, dtype=float)
        n, m = mp.shape
        t1, h1 = np.asarray(self.tails1, dtype=int), np.asarray(self.heads1, dtype=int)
        t2, h2 = np.asarray(self.tails2, dtype=int), np.asarray(self.heads2, dtype=int)
        me = np.asarray(self.me, dtype=float).reshape(len(t1), len(t2))
        if np.any(mp < 0) or np.any(me < 0):
            raise ValueError("affinities must be nonnegative")
        mc = None
        if self.me_cross is not None:
            mc = np.asarray(self.me_cross, dtype=float).reshape(me.shape)
            if np.any(mc < 0):
                raise ValueError("affinities must be nonnegative")
        T1, H1 = t1[:, None], h1[:, None]
        T2, H2 = t2[None, :], h2[None, :]
        idx = {"tt": (T1 * m + T2).ravel(), "hh": (H1 * m + H2).ravel(),
               "th": (T1 * m + H2).ravel(), "ht": (H1 * m + T2).ravel()}
        for k, v in (("mp", mp), ("me", me), ("me_cross", mc), ("tails1", t1), ("heads1", h1),
                     ("tails2", t2), ("heads2", h2), ("_idx", idx)):
            object.__setattr__(self, k, v)

    @property
    def n(self) -> int:
        return self.mp.shape[0]

    @property
    def m(self) -> int:
        return self.mp.shape[1]

    @property
    def size(self) -> int:
        return self.mp.size

    def with_mp(self, mp) -> "AffinityFactors":
        return AffinityFactors(mp, self.me, self.tails1, self.heads1, self.tails2, self.heads2,
                               self.me_cross)


def build_factors(g1: ObjectGraph, g2: ObjectGraph, x1, x2, h1, h2, lam,
                  penalty=None, crossed: bool = True) -> AffinityFactors:
    mp = node_affinity(x1, x2, penalty)
    if g1.p == 0 or g2.p == 0:
        z = np.zeros((g1.p, g2.p))
        return AffinityFactors(mp, z, g1.tails, g1.heads, g2.tails, g2.heads, z if crossed else None)
    me = edge_affinity(h1, h2, lam)
    mc = edge_affinity(h1, reverse_edge_features(h2), lam) if crossed else None
    return AffinityFactors(mp, me, g1.tails, g1.heads, g2.tails, g2.heads, mc)


def assemble_dense_affinity(factors: AffinityFactors) -> np.ndarray:
    """Materialize M; reference path for small problems only."""
    n, m = factors.n, factors.m
    nm = n * m
    if nm > DENSE_LIMIT:
        raise TooLarge(f"dense affinity of size {nm} exceeds {DENSE_LIMIT}")
    M = np.diag(factors.mp.ravel()).astype(float)
    for e1, (a1, b1) in enumerate(zip(factors.tails1, factors.heads1)):
        for e2, (a2, b2) in enumerate(zip(factors.tails2, factors.heads2)):
            w = factors.me[e1, e2]
            M[a1 * m + a2, b1 * m + b2] += w
            M[b1 * m + b2, a1 * m + a2] += w
            if factors.me_cross is not None:
                wc = factors.me_cross[e1, e2]
                M[a1 * m + b2, b1 * m + a2] += wc
                M[b1 * m + a2, a1 * m + b2] += wc
    return M


def affinity_matvec(factors: AffinityFactors, v) -> np.ndarray:
    """``M @ v`` in O(nm + pq) without forming M."""
    v = np.asarray(v, dtype=float)
    nm = factors.size
    if v.shape != (nm,):
        raise DimMismatch(f"vector of length {v.shape} for affinity of size {nm}")
    out = factors.mp.ravel() * v
    if factors.me.size == 0:
        return out
    idx = factors._idx
    w = factors.me.ravel()
    out += np.bincount(idx["tt"], w * v[idx["hh"]], minlength=nm)
    out += np.bincount(idx["hh"], w * v[idx["tt"]], minlength=nm)
    if factors.me_cross is not None:
        wc = factors.me_cross.ravel()
        out += np.bincount(idx["th"], wc * v[idx["ht"]], minlength=nm)
        out += np.bincount(idx["ht"], wc * v[idx["th"]], minlength=nm)
    return out


def matvec_edge_grads(factors: AffinityFactors, g, v):
    """Gradients of ``g . (M v)`` with respect to ``me`` and ``me_cross``."""
    idx = factors._idx
    shape = factors.me.shape
    d_me = (g[idx["tt"]] * v[idx["hh"]] + g[idx["hh"]] * v[idx["tt"]]).reshape(shape)
    d_mc = None
    if factors.me_cross is not None:
        d_mc = (g[idx["th"]] * v[idx["ht"]] + g[idx["ht"]] * v[idx["th"]]).reshape(shape)
    return d_me, d_mc

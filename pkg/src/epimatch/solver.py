"""Spectral relaxation of the matching QAP, inference, and the NN / ENN baselines."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .affinity import AffinityFactors, affinity_matvec, build_factors, default_lambda, node_affinity
from .errors import DimMismatch
from .geometry import epipolar_penalty_matrix
from .graph import ObjectGraph, build_object_graph, edge_feature_matrix, node_feature_matrix

log = logging.getLogger(__name__)

METHODS = ("NN", "ENN", "GMN", "EGMNet-FC", "EGMNet-DT")


@dataclass
class EigenResult:
    vector: np.ndarray
    eigenvalue: float
    iterations: int
    residual: float
    converged: bool


@dataclass
class MatchingScores:
    s: np.ndarray
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True


@dataclass
class Assignment:
    pairs: List[Tuple[int, int]]
    unmatched1: List[int]
    unmatched2: List[int]
    confidence: List[float] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.pairs) + len(self.unmatched1)

    @property
    def m(self) -> int:
        return len(self.pairs) + len(self.unmatched2)

    def partners1(self) -> np.ndarray:
        out = np.full(self.n, -1, dtype=int)
        for i, j in self.pairs:
            out[i] = j
        return out

    def partners2(self) -> np.ndarray:
        out = np.full(self.m, -1, dtype=int)
        for i, j in self.pairs:
            out[j] = i
        return out

    @classmethod
    def from_entries(cls, entries, n: Optional[int] = None, m: Optional[int] = None) -> "Assignment":
        """Build from ``(i, j)`` entries where -1 marks the unmatched side."""
        pairs = sorted((int(i), int(j)) for i, j in entries if i >= 0 and j >= 0)
        seen1 = {i for i, _ in pairs}
        seen2 = {j for _, j in pairs}
        u1 = sorted({int(i) for i, j in entries if i >= 0 and j < 0} - seen1)
        u2 = sorted({int(j) for i, j in entries if j >= 0 and i < 0} - seen2)
        if n is not None:
            u1 = sorted(set(range(n)) - seen1)
        if m is not None:
            u2 = sorted(set(range(m)) - seen2)
        return cls(pairs, u1, u2, [1.0] * len(pairs))


@dataclass(frozen=True)
class MatchOptions:
    gamma: float = 0.5
    sigma: object = 2.0              # float or "adaptive"
    normalize_by: str = "second"
    tol: float = 1e-10
    max_iter: int = 1000
    crossed: bool = True


def leading_eigenvector_power(factors, tol: float = 1e-10, max_iter: int = 1000,
                              v0=None) -> EigenResult:
    """Perron vector of a nonnegative symmetric affinity by power iteration.

    ``factors`` is an :class:`AffinityFactors` or a dense square array.  Starts
    from the uniform vector; stops once ``||Mv - lam v|| <= tol * lam``.  When
    ``max_iter`` runs out the last iterate is returned with ``converged=False``.
    """
    if isinstance(factors, AffinityFactors):
        size = factors.size
        matvec = lambda x: affinity_matvec(factors, x)
    else:
        M = np.asarray(factors, dtype=float)
        size = M.shape[0]
        matvec = lambda x: M @ x
    v = np.full(size, 1.0 / np.sqrt(size)) if v0 is None else np.asarray(v0, dtype=float)
    v = v / np.linalg.norm(v)
    lam, res = 0.0, np.inf
    for it in range(1, max_iter + 1):
        w = matvec(v)
        lam = float(v @ w)
        res = float(np.linalg.norm(w - lam * v))
        if res <= tol * lam:
            return EigenResult(v, lam, it, res, True)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            # M v = 0: v is an eigenvector of eigenvalue 0
            return EigenResult(v, 0.0, it, 0.0, True)
        v = w / nrm
    log.info("power iteration stopped after %d iterations (residual %.3g)", max_iter, res)
    return EigenResult(v, lam, max_iter, res, False)


def reshape_scores(v, n: int, m: int) -> MatchingScores:
    v = np.asarray(v, dtype=float)
    if v.shape != (n * m,):
        raise DimMismatch(f"vector of length {v.size} cannot be reshaped to {n}x{m}")
    return MatchingScores(v.reshape(n, m).copy())


def infer_matching(scores, gamma: float = 0.5) -> "Assignment":
    """Mutual argmax plus threshold; ties go to the lowest index."""
    s = getattr(scores, "s", scores)
    s = np.asarray(s, dtype=float)
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    n, m = s.shape
    if n == 0 or m == 0:
        return Assignment([], list(range(n)), list(range(m)), [])
    row_best = np.argmax(s, axis=1)
    col_best = np.argmax(s, axis=0)
    pairs, conf = [], []
    for i in range(n):
        j = int(row_best[i])
        if col_best[j] == i and s[i, j] > gamma:
            pairs.append((i, j))
            conf.append(float(s[i, j]))
    m1 = {i for i, _ in pairs}
    m2 = {j for _, j in pairs}
    return Assignment(pairs, [i for i in range(n) if i not in m1],
                      [j for j in range(m) if j not in m2], conf)


def _unit_frobenius(s: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(s)
    return s / nrm if nrm > 0 else s


def nn_scores(x1, x2, penalty=None) -> MatchingScores:
    return MatchingScores(_unit_frobenius(node_affinity(x1, x2, penalty)))


def match_nn(x1, x2, gamma: float = 0.5) -> Assignment:
    return infer_matching(nn_scores(x1, x2), gamma)


def match_enn(x1, x2, penalty, gamma: float = 0.5) -> Assignment:
    return infer_matching(nn_scores(x1, x2, penalty), gamma)


def spectral_scores(factors: AffinityFactors, tol: float = 1e-10,
                    max_iter: int = 1000) -> MatchingScores:
    """Leading-eigenvector scores; no bi-stochastic normalization is applied.

    With no edge affinity at all M is diagonal and every basis vector is an
    eigenvector, so the relaxation carries no preference beyond the node
    affinities themselves; those are returned, scaled to unit norm.
    """
    n, m = factors.n, factors.m
    edge_free = not np.any(factors.me) and (factors.me_cross is None or not np.any(factors.me_cross))
    if edge_free:
        return MatchingScores(_unit_frobenius(factors.mp.copy()))
    if not np.any(factors.mp) and not np.any(factors.me) and not np.any(factors.me_cross):
        return MatchingScores(np.zeros((n, m)))
    res = leading_eigenvector_power(factors, tol, max_iter)
    out = reshape_scores(np.abs(res.vector), n, m)
    out.iterations, out.residual, out.converged = res.iterations, res.residual, res.converged
    return out


def graph_match(g1: ObjectGraph, g2: ObjectGraph, f=None, lam=None,
                options: MatchOptions = MatchOptions(), descriptors1=None, descriptors2=None):
    """Features -> (penalty) -> affinities -> power iteration -> inference.

    ``f`` of None gives plain graph matching; a fundamental matrix adds the
    epipolar penalty to the node affinities.  ``lam`` defaults to
    :func:`default_lambda`.
    """
    x1 = node_feature_matrix(g1, descriptors1)
    x2 = node_feature_matrix(g2, descriptors2)
    penalty = None
    if f is not None:
        penalty = epipolar_penalty_matrix(f, g1.nodes, g2.nodes, options.sigma, options.normalize_by)
    h1 = edge_feature_matrix(g1, descriptors1) if g1.p else np.zeros((0, 2 * x1.shape[1] - 2))
    h2 = edge_feature_matrix(g2, descriptors2) if g2.p else np.zeros((0, 2 * x2.shape[1] - 2))
    if lam is None:
        lam = default_lambda(x1.shape[1] - 2)
    factors = build_factors(g1, g2, x1, x2, h1, h2, lam, penalty, options.crossed)
    scores = spectral_scores(factors, options.tol, options.max_iter)
    return scores, infer_matching(scores, options.gamma)


def method_spec(method: str):
    """(uses_graph, uses_epipolar, topology) for a method name."""
    table = {
        "NN": (False, False, None),
        "ENN": (False, True, None),
        "GMN": (True, False, "dt"),
        "GMN-DT": (True, False, "dt"),
        "GMN-FC": (True, False, "fc"),
        "EGMNet-FC": (True, True, "fc"),
        "EGMNet-DT": (True, True, "dt"),
    }
    if method not in table:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(table)}")
    return table[method]


def score_pair(method: str, pair, lam=None, options: MatchOptions = MatchOptions()) -> MatchingScores:
    """Score matrix of one method on one scene pair (before thresholding)."""
    uses_graph, uses_epi, topo = method_spec(method)
    size = pair.image_size
    f = pair.f if uses_epi else None
    if not uses_graph:
        x1 = node_feature_matrix(_flat_graph(pair.detections1, size))
        x2 = node_feature_matrix(_flat_graph(pair.detections2, size))
        penalty = None
        if f is not None:
            penalty = epipolar_penalty_matrix(f, pair.detections1, pair.detections2,
                                              options.sigma, options.normalize_by)
        return nn_scores(x1, x2, penalty)
    g1 = build_object_graph(pair.detections1, topo, size)
    g2 = build_object_graph(pair.detections2, topo, size)
    scores, _ = graph_match(g1, g2, f, lam, options)
    return scores


def _flat_graph(detections, size) -> ObjectGraph:
    return ObjectGraph(list(detections), [], "none", float(size[0]), float(size[1]))


def match_pair(method: str, pair, lam=None, options: MatchOptions = MatchOptions()):
    scores = score_pair(method, pair, lam, options)
    return scores, infer_matching(scores, options.gamma)

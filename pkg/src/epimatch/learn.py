"""Matching / contrastive losses, gradients, and fitting of the edge metric."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .affinity import (AffinityFactors, affinity_matvec, matvec_edge_grads, node_affinity,
                       symmetric_lambda)
from .errors import DimMismatch, NoImprovement, ShapeMismatch
from .geometry import epipolar_penalty_matrix
from .graph import build_object_graph, edge_feature_matrix, node_feature_matrix, reverse_edge_features
from .scenegen import ChangeModel, NoiseModel, PairConfig, SceneConfig
from .solver import MatchOptions, infer_matching, method_spec

log = logging.getLogger(__name__)

DEFAULT_TAU_M = 0.1
DEFAULT_CHANGE_THRESHOLD = 0.05


# ---------------------------------------------------------------------------
# losses

def _softmax(s, axis):
    z = s - s.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _log_softmax(s, axis):
    z = s - s.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def _check_pair(s, s_gt):
    s = np.asarray(getattr(s, "s", s), dtype=float)
    s_gt = np.asarray(s_gt, dtype=float)
    if s.shape != s_gt.shape:
        raise ShapeMismatch(f"scores {s.shape} vs ground truth {s_gt.shape}")
    return s, s_gt


def matching_loss(s, s_gt) -> float:
    """Cross-entropy of the ground truth under row- and column-softmax of the scores."""
    s, s_gt = _check_pair(s, s_gt)
    if s.size == 0:
        return 0.0
    return float(-np.sum(s_gt * (_log_softmax(s, 1) + _log_softmax(s, 0))))


def matching_loss_grad(s, s_gt) -> np.ndarray:
    s, s_gt = _check_pair(s, s_gt)
    if s.size == 0:
        return np.zeros_like(s)
    rows = s_gt.sum(axis=1, keepdims=True)
    cols = s_gt.sum(axis=0, keepdims=True)
    return _softmax(s, 1) * rows + _softmax(s, 0) * cols - 2.0 * s_gt


def contrastive_loss(c1, c2, t, tau_m: float = DEFAULT_TAU_M) -> float:
    """``t = 1`` marks an unchanged pair, ``t = 0`` a changed one."""
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    if c1.shape != c2.shape:
        raise DimMismatch(f"descriptor shapes differ: {c1.shape} vs {c2.shape}")
    d = float(np.sum((c1 - c2) ** 2))
    return t * d + (1 - t) * max(tau_m - d, 0.0)


@dataclass(frozen=True)
class ChangeVerdict:
    label: str          # "changed" or "unchanged"
    distance: float

    @property
    def changed(self) -> bool:
        return self.label == "changed"


def classify_change(c1, c2, threshold: float = DEFAULT_CHANGE_THRESHOLD,
                    projection=None) -> ChangeVerdict:
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    if c1.shape != c2.shape:
        raise DimMismatch(f"descriptor shapes differ: {c1.shape} vs {c2.shape}")
    if projection is not None:
        c1, c2 = projection @ c1, projection @ c2
    d = float(np.sum((c1 - c2) ** 2))
    return ChangeVerdict("changed" if d > threshold else "unchanged", d)


# ---------------------------------------------------------------------------
# model

MODEL_VERSION = 1


@dataclass
class TrainedModel:
    lam: np.ndarray
    projection: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lam = symmetric_lambda(self.lam)

    @property
    def d_e(self) -> int:
        return self.lam.shape[0]

    @classmethod
    def identity(cls, descriptor_dim: int = 16) -> "TrainedModel":
        return cls(np.eye(2 * descriptor_dim + 2), None, {"epochs": 0})

    def to_dict(self):
        return {
            "version": MODEL_VERSION,
            "d_e": self.d_e,
            "lam": self.lam.ravel().tolist(),
            "projection": None if self.projection is None else self.projection.ravel().tolist(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d):
        if "version" not in d:
            raise ValueError("model file lacks a version field")
        if int(d["version"]) != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d['version']}")
        de = int(d["d_e"])
        lam = np.asarray(d["lam"], dtype=float).reshape(de, de)
        proj = d.get("projection")
        if proj is not None:
            proj = np.asarray(proj, dtype=float)
            k = int(round(np.sqrt(proj.size)))
            proj = proj.reshape(k, k)
        return cls(lam, proj, dict(d.get("metadata", {})))


# ---------------------------------------------------------------------------
# training instances and the unrolled solver

@dataclass
class TrainingInstance:
    mp: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    h2_rev: np.ndarray
    tails1: np.ndarray
    heads1: np.ndarray
    tails2: np.ndarray
    heads2: np.ndarray
    s_gt: np.ndarray
    crossed: bool = True

    @property
    def has_edges(self) -> bool:
        return len(self.tails1) > 0 and len(self.tails2) > 0


def make_instance(pair, method: str = "EGMNet-DT", options: MatchOptions = MatchOptions()):
    """Fixed (Lambda-independent) parts of the pipeline for one scene pair."""
    uses_graph, uses_epi, topo = method_spec(method)
    if not uses_graph:
        raise ValueError(f"{method} has no edge metric to train")
    size = pair.image_size
    g1 = build_object_graph(pair.detections1, topo, size)
    g2 = build_object_graph(pair.detections2, topo, size)
    x1, x2 = node_feature_matrix(g1), node_feature_matrix(g2)
    penalty = None
    if uses_epi and pair.f is not None:
        penalty = epipolar_penalty_matrix(pair.f, g1.nodes, g2.nodes, options.sigma, options.normalize_by)
    de = 2 * x1.shape[1] - 2
    h1 = edge_feature_matrix(g1) if g1.p else np.zeros((0, de))
    h2 = edge_feature_matrix(g2) if g2.p else np.zeros((0, de))
    return TrainingInstance(node_affinity(x1, x2, penalty), h1, h2, reverse_edge_features(h2),
                            g1.tails, g1.heads, g2.tails, g2.heads, pair.gt_matrix(), options.crossed)


def _factors(inst: TrainingInstance, lam):
    pre = inst.h1 @ lam @ inst.h2.T
    pre_c = inst.h1 @ lam @ inst.h2_rev.T if inst.crossed else None
    f = AffinityFactors(inst.mp, np.maximum(pre, 0.0), inst.tails1, inst.heads1,
                        inst.tails2, inst.heads2,
                        None if pre_c is None else np.maximum(pre_c, 0.0))
    return f, pre, pre_c


def unrolled_scores(inst: TrainingInstance, lam, steps: int = 30):
    """Scores after a fixed number of power steps from the uniform vector."""
    lam = symmetric_lambda(lam)
    n, m = inst.mp.shape
    if not inst.has_edges:
        s = inst.mp / max(np.linalg.norm(inst.mp), 1e-300)
        return s, None
    fac, _, _ = _factors(inst, lam)
    v = np.full(n * m, 1.0 / np.sqrt(n * m))
    for _ in range(steps):
        u = affinity_matvec(fac, v)
        v = u / max(np.linalg.norm(u), 1e-300)
    return v.reshape(n, m), fac


def instance_loss(inst: TrainingInstance, lam, steps: int = 30) -> float:
    s, _ = unrolled_scores(inst, lam, steps)
    return matching_loss(s, inst.s_gt)


def instance_loss_and_grad(inst: TrainingInstance, lam, steps: int = 30):
    """Loss and its gradient w.r.t. Lambda by reverse-mode through the power steps."""
    lam = symmetric_lambda(lam)
    n, m = inst.mp.shape
    de = lam.shape[0]
    if not inst.has_edges:
        return instance_loss(inst, lam, steps), np.zeros((de, de))
    fac, pre, pre_c = _factors(inst, lam)
    vs = [np.full(n * m, 1.0 / np.sqrt(n * m))]
    norms = []
    for _ in range(steps):
        u = affinity_matvec(fac, vs[-1])
        nrm = max(np.linalg.norm(u), 1e-300)
        norms.append(nrm)
        vs.append(u / nrm)
    s = vs[-1].reshape(n, m)
    loss = matching_loss(s, inst.s_gt)
    g_v = matching_loss_grad(s, inst.s_gt).ravel()
    d_me = np.zeros_like(fac.me)
    d_mc = np.zeros_like(fac.me) if fac.me_cross is not None else None
    for k in range(steps - 1, -1, -1):
        v_next = vs[k + 1]
        g_u = (g_v - v_next * (v_next @ g_v)) / norms[k]
        a, b = matvec_edge_grads(fac, g_u, vs[k])
        d_me += a
        if d_mc is not None:
            d_mc += b
        g_v = affinity_matvec(fac, g_u)       # M is symmetric
    g_pre = d_me * (pre > 0)
    grad = inst.h1.T @ g_pre @ inst.h2
    if d_mc is not None:
        grad += inst.h1.T @ (d_mc * (pre_c > 0)) @ inst.h2_rev
    return loss, 0.5 * (grad + grad.T)


def finite_difference_grad(inst: TrainingInstance, lam, steps: int = 30, h: float = 1e-6):
    """Central differences over the symmetric entries of Lambda (reference path)."""
    lam = symmetric_lambda(lam)
    de = lam.shape[0]
    grad = np.zeros((de, de))
    for a in range(de):
        for b in range(a, de):
            e = np.zeros((de, de))
            e[a, b] = e[b, a] = h
            g = (instance_loss(inst, lam + e, steps) - instance_loss(inst, lam - e, steps)) / (2 * h)
            if a == b:
                grad[a, a] = g
            else:
                # perturbing both mirrored entries: split the derivative evenly
                grad[a, b] = grad[b, a] = g / 2
    return grad


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 5e-4
    epochs: int = 50
    batch: int = 8
    seed: int = 0
    grad_mode: str = "unrolled"     # or "finite_diff"
    momentum: float = 0.0
    steps: int = 30
    keep_best: bool = True          # return the epoch-end iterate with the lowest loss


def mean_loss(instances: Sequence[TrainingInstance], lam, steps: int = 30) -> float:
    return float(np.mean([instance_loss(t, lam, steps) for t in instances]))


def fit_lambda(instances: Sequence[TrainingInstance], hyper: TrainHyper = TrainHyper(),
               init: Optional[TrainedModel] = None, raise_on_no_improvement: bool = True) -> TrainedModel:
    """Gradient descent (optionally with momentum) on the mean matching loss.

    Lambda is re-symmetrized after every step.  Raises :class:`NoImprovement`
    (carrying the fitted model) when the returned loss is not strictly below
    the initial one, e.g. for ``lr = 0``.
    """
    if not instances:
        raise ValueError("need at least one training pair")
    if hyper.grad_mode not in ("unrolled", "finite_diff"):
        raise ValueError(f"unknown grad_mode {hyper.grad_mode!r}")
    de = instances[0].h1.shape[1]
    init = init or TrainedModel(np.eye(de))
    lam = init.lam.copy()
    if lam.shape != (de, de):
        raise DimMismatch(f"initial lambda {lam.shape} vs edge features of dim {de}")
    rng = np.random.default_rng(hyper.seed)
    initial = mean_loss(instances, lam, hyper.steps)
    curve = [initial]
    best_lam, best_loss = lam.copy(), initial
    vel = np.zeros_like(lam)
    batch = max(1, min(hyper.batch, len(instances)))
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(instances))
        for start in range(0, len(order), batch):
            idx = order[start:start + batch]
            grad = np.zeros_like(lam)
            for t in idx:
                if hyper.grad_mode == "unrolled":
                    _, g = instance_loss_and_grad(instances[t], lam, hyper.steps)
                else:
                    g = finite_difference_grad(instances[t], lam, hyper.steps)
                grad += g
            grad /= len(idx)
            vel = hyper.momentum * vel - hyper.lr * grad
            lam = symmetric_lambda(lam + vel)
        curve.append(mean_loss(instances, lam, hyper.steps))
        log.debug("epoch %d loss %.6f", epoch + 1, curve[-1])
        if curve[-1] < best_loss:
            best_lam, best_loss = lam.copy(), curve[-1]
    final = curve[-1]
    if hyper.keep_best:
        # rectified edge affinities make the loss surface flat past a cliff
        # where every edge dies; the last iterate can fall over it
        lam, final = best_lam, best_loss
    meta = dict(init.metadata)
    meta.update({
        "epochs": int(meta.get("epochs", 0)) + hyper.epochs,
        "initial_loss": initial,
        "final_loss": final,
        "seed": hyper.seed,
        "lr": hyper.lr,
        "momentum": hyper.momentum,
        "grad_mode": hyper.grad_mode,
        "loss_curve": curve,
    })
    model = TrainedModel(lam, init.projection, meta)
    if raise_on_no_improvement and not final < initial:
        raise NoImprovement(f"loss did not decrease ({initial:.6g} -> {final:.6g}); check lr", model)
    return model


def degenerate_pair_config(n_objects: int = 8) -> PairConfig:
    """Scenes whose detections all share one descriptor and carry no noise.

    Appearance cannot tell objects apart, so only the graph structure (and,
    with a baseline, epipolar geometry) determines the correct matching.
    """
    return PairConfig(SceneConfig(n_objects=n_objects, n_classes=1, class_spread=0.0),
                      NoiseModel.none(), ChangeModel(0.0))


# ---------------------------------------------------------------------------
# change-feature projection

def gt_descriptor_pairs(pairs):
    """(c1, c2, t) for every ground-truth matched pair; t = 1 when unchanged."""
    a, b, t = [], [], []
    for pair in pairs:
        for (i, j), ch in zip(pair.gt_match, pair.gt_change):
            if i >= 0 and j >= 0:
                a.append(pair.detections1[i].descriptor)
                b.append(pair.detections2[j].descriptor)
                t.append(0.0 if ch else 1.0)
    return np.array(a), np.array(b), np.array(t)


def contrastive_objective(proj, c1, c2, t, tau_m: float = DEFAULT_TAU_M):
    """Mean contrastive loss of projected pairs and its gradient w.r.t. the projection."""
    diff = (c1 - c2) @ proj.T
    d = np.sum(diff ** 2, axis=1)
    hinge = (d < tau_m).astype(float)
    loss = np.mean(t * d + (1 - t) * np.maximum(tau_m - d, 0.0))
    coef = (t - (1 - t) * hinge) / len(d)
    grad = 2.0 * (diff * coef[:, None]).T @ (c1 - c2)
    return float(loss), grad


def fit_projection(pairs, tau_m: float = DEFAULT_TAU_M, lr: float = 0.5, epochs: int = 200,
                   init=None) -> np.ndarray:
    """Full-batch gradient descent of a linear change-feature projection."""
    c1, c2, t = gt_descriptor_pairs(pairs)
    if len(t) == 0:
        raise ValueError("no ground-truth matched pairs to train on")
    proj = np.eye(c1.shape[1]) if init is None else np.array(init, dtype=float)
    for _ in range(epochs):
        _, g = contrastive_objective(proj, c1, c2, t, tau_m)
        proj = proj - lr * g
    return proj


def evaluate_accuracy(instances, lam, gamma=0.0, steps: int = 30):
    """Node-level accuracy of unrolled scores against each instance's ground truth."""
    correct = total = 0
    for inst in instances:
        s, _ = unrolled_scores(inst, lam, steps)
        a = infer_matching(s, gamma)
        gt1 = np.where(inst.s_gt.any(axis=1), inst.s_gt.argmax(axis=1), -1)
        gt2 = np.where(inst.s_gt.any(axis=0), inst.s_gt.argmax(axis=0), -1)
        correct += int(np.sum(a.partners1() == gt1) + np.sum(a.partners2() == gt2))
        total += inst.s_gt.shape[0] + inst.s_gt.shape[1]
    return correct / total

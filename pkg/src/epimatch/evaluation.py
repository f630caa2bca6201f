"""Matching accuracy, change metrics, and the multi-method benchmark."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .affinity import default_lambda
from .errors import ConfigError, CoverageMismatch, EpimatchError, LengthMismatch
from .learn import DEFAULT_CHANGE_THRESHOLD, classify_change
from .scenegen import (CALIBRATION_STREAM, ChangeModel, NoiseModel, PairConfig, SceneConfig,
                       ViewpointProtocol, generate_pair, pair_seed)
from .solver import METHODS, Assignment, MatchOptions, infer_matching, method_spec, score_pair

log = logging.getLogger(__name__)

ACCURACY_MODES = ("node", "pair")


# ---------------------------------------------------------------------------
# matching accuracy

def _as_assignment(obj, n=None, m=None) -> Assignment:
    if isinstance(obj, Assignment):
        return obj
    if hasattr(obj, "gt_match"):
        return Assignment.from_entries(obj.gt_match, obj.n, obj.m)
    return Assignment.from_entries(list(obj), n, m)


def matching_counts(pred, gt, mode: str = "node") -> Tuple[int, int]:
    """(correct, total) verdicts; see :func:`matching_accuracy`."""
    if mode not in ACCURACY_MODES:
        raise ValueError(f"mode must be one of {ACCURACY_MODES}")
    pred = _as_assignment(pred)
    gt = _as_assignment(gt, pred.n, pred.m)
    if (pred.n, pred.m) != (gt.n, gt.m):
        raise CoverageMismatch(f"prediction covers {pred.n}+{pred.m} nodes, ground truth {gt.n}+{gt.m}")
    p1, p2 = pred.partners1(), pred.partners2()
    g1, g2 = gt.partners1(), gt.partners2()
    if mode == "node":
        return int(np.sum(p1 == g1) + np.sum(p2 == g2)), gt.n + gt.m
    # one verdict per ground-truth entry: matched pairs count once
    correct = sum(int(p1[i] == j) for i, j in gt.pairs)
    correct += sum(int(p1[i] == -1) for i in gt.unmatched1)
    correct += sum(int(p2[j] == -1) for j in gt.unmatched2)
    return correct, len(gt.pairs) + len(gt.unmatched1) + len(gt.unmatched2)


def matching_accuracy(pred, gt, mode: str = "node") -> float:
    """Fraction of correct partner verdicts.

    In ``node`` mode every node of both graphs is one verdict: its predicted
    partner (or the unmatched label) against the ground truth, over n + m.
    ``pair`` mode counts each ground-truth entry once instead.  ``gt`` may be
    an :class:`Assignment`, a scene pair, or a list of ``(i, j)`` entries
    with -1 for unmatched.
    """
    correct, total = matching_counts(pred, gt, mode)
    return correct / total if total else 1.0


# ---------------------------------------------------------------------------
# change detection

@dataclass(frozen=True)
class ChangeMetrics:
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    precision_defined: bool = True
    recall_defined: bool = True

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int) -> "ChangeMetrics":
        p_def = tp + fp > 0
        r_def = tp + fn > 0
        p = tp / (tp + fp) if p_def else 0.0
        r = tp / (tp + fn) if r_def else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f1, tp, fp, fn, tn, p_def, r_def)


def change_counts(pred, gt) -> Tuple[int, int, int, int]:
    pred = np.asarray(pred, dtype=bool).ravel()
    gt = np.asarray(gt, dtype=bool).ravel()
    if pred.shape != gt.shape:
        raise LengthMismatch(f"{pred.size} predicted labels vs {gt.size} ground-truth labels")
    tp = int(np.sum(pred & gt))
    fp = int(np.sum(pred & ~gt))
    fn = int(np.sum(~pred & gt))
    return tp, fp, fn, int(pred.size - tp - fp - fn)


def change_metrics(pred, gt) -> ChangeMetrics:
    """Precision / recall / F1 with ``changed`` (True) as the positive class.

    With no positive predictions precision is reported as 0 and flagged as
    undefined; likewise recall when the ground truth has no positives.
    """
    return ChangeMetrics.from_counts(*change_counts(pred, gt))


def predict_changes(pair, assignment: Assignment, threshold: float = DEFAULT_CHANGE_THRESHOLD,
                    projection=None) -> Tuple[np.ndarray, np.ndarray]:
    """Per-node change verdicts for both views; unmatched nodes count as changed."""
    c1 = np.ones(pair.n, dtype=bool)
    c2 = np.ones(pair.m, dtype=bool)
    for i, j in assignment.pairs:
        v = classify_change(pair.detections1[i].descriptor, pair.detections2[j].descriptor,
                            threshold, projection)
        c1[i] = c2[j] = v.changed
    return c1, c2


# ---------------------------------------------------------------------------
# benchmark

GAMMA_GRID = tuple(round(0.01 * k, 2) for k in range(51))


@dataclass(frozen=True)
class BenchConfig:
    methods: Tuple[str, ...] = METHODS
    sets: Tuple[int, ...] = (1, 2, 3, 4)
    pairs: int = 200
    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    changes: ChangeModel = field(default_factory=ChangeModel)
    gamma: object = "calibrate"           # float, or "calibrate" per method
    calibration_pairs: int = 25           # per set, from a separate seed stream
    change_threshold: float = DEFAULT_CHANGE_THRESHOLD
    sigma: object = 2.0
    normalize_by: str = "second"
    accuracy_mode: str = "node"
    lam: Optional[Tuple[Tuple[float, ...], ...]] = None
    projection: Optional[Tuple[Tuple[float, ...], ...]] = None
    timing: bool = True

    def validate(self) -> None:
        if not self.methods:
            raise ConfigError("no methods requested")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        if not self.sets:
            raise ConfigError("no viewpoint sets requested")
        for s in self.sets:
            if s not in (1, 2, 3, 4):
                raise ConfigError(f"viewpoint set must be 1-4, got {s}")
        if self.pairs < 1:
            raise ConfigError("pairs must be at least 1")
        if self.accuracy_mode not in ACCURACY_MODES:
            raise ConfigError(f"accuracy mode must be one of {ACCURACY_MODES}")
        if isinstance(self.gamma, str):
            if self.gamma != "calibrate":
                raise ConfigError("gamma must be a number or 'calibrate'")
            if self.calibration_pairs < 1:
                raise ConfigError("calibration needs at least one pair per set")
        elif float(self.gamma) < 0:
            raise ConfigError("gamma must be nonnegative")
        if self.change_threshold < 0:
            raise ConfigError("change threshold must be nonnegative")

    @property
    def pair_config(self) -> PairConfig:
        return PairConfig(self.scene, self.noise, self.changes)

    def lam_array(self) -> np.ndarray:
        if self.lam is None:
            return default_lambda(self.scene.descriptor_dim)
        return np.asarray(self.lam, dtype=float)

    def projection_array(self):
        return None if self.projection is None else np.asarray(self.projection, dtype=float)

    def options(self, gamma: float = 0.0) -> MatchOptions:
        return MatchOptions(gamma=gamma, sigma=self.sigma, normalize_by=self.normalize_by)

    def echo(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        d["sets"] = list(self.sets)
        d["scene"]["depth_range"] = list(self.scene.depth_range)
        for k in ("lam", "projection"):
            if d[k] is not None:
                d[k] = [list(r) for r in d[k]]
        return d


@dataclass
class ResultRow:
    method: str
    set_id: int
    pairs: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    seconds: float
    gamma: float = 0.0
    precision_defined: bool = True
    recall_defined: bool = True
    nonconverged: int = 0


@dataclass
class EvalReport:
    rows: List[ResultRow]
    config: dict
    gammas: Dict[str, float]

    def accuracy(self, method: str, set_id: int) -> float:
        for r in self.rows:
            if r.method == method and r.set_id == set_id:
                return r.accuracy
        raise KeyError((method, set_id))

    def aggregate_accuracy(self, method: str, sets: Sequence[int]) -> float:
        """Mean of per-set accuracies (sets weigh equally)."""
        return float(np.mean([self.accuracy(method, s) for s in sets]))

    def to_dict(self) -> dict:
        return {"config": self.config, "gammas": dict(self.gammas),
                "results": [asdict(r) for r in self.rows]}


def _calibration_task(args):
    cfg, set_id, index = args
    pair = generate_pair(ViewpointProtocol.from_set(set_id),
                         pair_seed(cfg.seed, set_id, index, CALIBRATION_STREAM), cfg.pair_config)
    lam = cfg.lam_array()
    out = []
    for method in cfg.methods:
        scores = score_pair(method, pair, lam, cfg.options())
        row = []
        for g in GAMMA_GRID:
            row.append(matching_counts(infer_matching(scores, g), pair, cfg.accuracy_mode))
        out.append(row)
    return out


def _test_task(args):
    cfg, gammas, set_id, index = args
    seed = pair_seed(cfg.seed, set_id, index)
    try:
        pair = generate_pair(ViewpointProtocol.from_set(set_id), seed, cfg.pair_config)
    except EpimatchError as exc:
        raise type(exc)(f"set {set_id} pair {index}: {exc}") from exc
    lam = cfg.lam_array()
    proj = cfg.projection_array()
    gt1, gt2 = pair.node_change_labels()
    gt_change = np.concatenate([gt1, gt2])
    out = []
    for method in cfg.methods:
        t0 = time.perf_counter()
        try:
            scores = score_pair(method, pair, lam, cfg.options(gammas[method]))
        except EpimatchError as exc:
            raise type(exc)(f"set {set_id} pair {index} ({method}): {exc}") from exc
        assignment = infer_matching(scores, gammas[method])
        elapsed = time.perf_counter() - t0
        c1, c2 = predict_changes(pair, assignment, cfg.change_threshold, proj)
        out.append((matching_counts(assignment, pair, cfg.accuracy_mode),
                    change_counts(np.concatenate([c1, c2]), gt_change),
                    elapsed, not scores.converged))
    return out


def _map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        # map preserves task order, so the reduction below is schedule-independent
        return list(pool.map(fn, tasks, chunksize=chunk))


def calibrate_gammas(cfg: BenchConfig, jobs: int = 1) -> Dict[str, float]:
    """Per-method threshold maximizing pooled accuracy on validation pairs."""
    tasks = [(cfg, s, k) for s in cfg.sets for k in range(cfg.calibration_pairs)]
    results = _map(_calibration_task, tasks, jobs)
    gammas = {}
    for mi, method in enumerate(cfg.methods):
        correct = np.zeros(len(GAMMA_GRID))
        total = 0
        for res in results:
            correct += [c for c, _ in res[mi]]
            total = total + res[mi][0][1]
        # first maximum, i.e. the smallest threshold among ties
        gammas[method] = GAMMA_GRID[int(np.argmax(correct / total))]
    return gammas


def run_benchmark(cfg: BenchConfig, jobs: int = 1) -> EvalReport:
    """Every method on identical pairs for every requested viewpoint set.

    Deterministic for a given config: pair seeds depend only on (seed, set,
    index) and results are reduced in task order whatever ``jobs`` is.  Wall
    time is the one nondeterministic column; ``timing=False`` zeroes it.
    """
    cfg.validate()
    for m in cfg.methods:
        method_spec(m)
    if cfg.gamma == "calibrate":
        gammas = calibrate_gammas(cfg, jobs)
    else:
        gammas = {m: float(cfg.gamma) for m in cfg.methods}
    tasks = [(cfg, gammas, s, k) for s in cfg.sets for k in range(cfg.pairs)]
    results = _map(_test_task, tasks, jobs)
    rows = []
    for si, set_id in enumerate(cfg.sets):
        block = results[si * cfg.pairs:(si + 1) * cfg.pairs]
        for mi, method in enumerate(cfg.methods):
            correct = total = 0
            counts = np.zeros(4, dtype=int)
            seconds = 0.0
            nonconv = 0
            for res in block:
                (c, t), cc, el, nc = res[mi]
                correct += c
                total += t
                counts += cc
                seconds += el
                nonconv += int(nc)
            cm = ChangeMetrics.from_counts(*(int(x) for x in counts))
            rows.append(ResultRow(method, set_id, cfg.pairs, correct / total if total else 1.0,
                                  cm.precision, cm.recall, cm.f1,
                                  seconds if cfg.timing else 0.0, gammas[method],
                                  cm.precision_defined, cm.recall_defined, nonconv))
    return EvalReport(rows, cfg.echo(), gammas)

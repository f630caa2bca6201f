"""JSON files for scene pairs, trained models, and reports.

Floats are written with 17 significant digits so every value round-trips
exactly; output is byte-stable for identical inputs.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .errors import FormatError
from .geometry import CameraIntrinsics, CameraView, FundamentalMatrix, Pose
from .scenegen import GENERATOR_VERSION, Detection, ScenePair, ViewpointProtocol


def _encode(obj: Any, indent: int, level: int) -> str:
    pad = "\n" + " " * (indent * (level + 1)) if indent else ""
    end = "\n" + " " * (indent * level) if indent else ""
    sep = "," if indent else ", "
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return {None: "null", True: "true", False: "false"}[None if obj is None else bool(obj)]
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"cannot serialize non-finite float {x}")
        s = format(x, ".17g")
        return s if any(c in s for c in ".en") else s + ".0"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{" + pad + (sep + pad).join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        # numeric rows stay on one line
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, 0, 0) for v in obj) + "]"
        return "[" + pad + (sep + pad).join(_encode(v, indent, level + 1) for v in obj) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Any, indent: int = 1) -> str:
    return _encode(obj, indent, 0) + "\n"


def write_json(path, obj: Any) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def read_json(path) -> Any:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read file: {exc.strerror or exc}", str(path)) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, str(path), exc.lineno, exc.colno) from exc


# ---------------------------------------------------------------------------
# scene pairs

def pair_to_dict(pair: ScenePair) -> dict:
    def dets(ds):
        return [{"id": d.node_id, "bbox": [float(v) for v in d.bbox],
                 "descriptor": [float(v) for v in d.descriptor], "class": int(d.class_id)}
                for d in ds]

    return {
        "meta": {"seed": int(pair.seed), "protocol": pair.protocol.to_dict(),
                 "generator_version": GENERATOR_VERSION},
        "views": [{"intrinsics": v.intrinsics.to_dict(), "pose": v.pose.to_dict()} for v in pair.views],
        "fundamental": None if pair.f is None else [float(v) for v in pair.f.f.ravel()],
        "detections1": dets(pair.detections1),
        "detections2": dets(pair.detections2),
        "gt_match": [[int(i), int(j)] for i, j in pair.gt_match],
        "gt_change": [bool(c) for c in pair.gt_change],
    }


def _line_of(text: str, key: str):
    pos = text.find(json.dumps(key))
    return None if pos < 0 else text.count("\n", 0, pos) + 1


def pair_from_dict(d: dict, path=None, text: str = "") -> ScenePair:
    key = "meta"
    try:
        meta = d["meta"]
        key = "views"
        views = tuple(CameraView(CameraIntrinsics.from_dict(v["intrinsics"]), Pose.from_dict(v["pose"]))
                      for v in d["views"])
        if len(views) != 2:
            raise ValueError("expected exactly two views")
        key = "fundamental"
        f = d["fundamental"]
        f = None if f is None else FundamentalMatrix(np.asarray(f, dtype=float).reshape(3, 3))
        dets = []
        for key in ("detections1", "detections2"):
            dets.append([Detection(int(e["id"]), np.asarray(e["bbox"], dtype=float),
                                   np.asarray(e["descriptor"], dtype=float), None,
                                   int(e.get("class", -1))) for e in d[key]])
        key = "gt_match"
        gt_match = [(int(i), int(j)) for i, j in d["gt_match"]]
        key = "gt_change"
        gt_change = [bool(c) for c in d["gt_change"]]
        if len(gt_change) != len(gt_match):
            raise ValueError("gt_change and gt_match differ in length")
        key = "meta"
        protocol = ViewpointProtocol.from_dict(meta["protocol"])
        seed = int(meta["seed"])
    except (KeyError, TypeError, ValueError) as exc:
        what = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
        raise FormatError(f"bad '{key}' section: {what}", path, _line_of(text, key)) from exc
    for k, ds in enumerate(dets, 1):
        if [e.node_id for e in ds] != list(range(len(ds))):
            raise FormatError(f"detections{k} ids must be 0..{len(ds) - 1} in order",
                              path, _line_of(text, f"detections{k}"))
    return ScenePair(dets[0], dets[1], f, gt_match, gt_change, protocol, seed, views)


def save_pair(pair: ScenePair, path) -> None:
    write_json(path, pair_to_dict(pair))


def load_pair(path) -> ScenePair:
    d = read_json(path)
    text = Path(path).read_text(encoding="utf-8")
    if not isinstance(d, dict):
        raise FormatError("top level must be an object", str(path), 1)
    return pair_from_dict(d, str(path), text)


# ---------------------------------------------------------------------------
# models

def save_model(model, path) -> None:
    write_json(path, model.to_dict())


def load_model(path):
    from .learn import TrainedModel

    d = read_json(path)
    text = Path(path).read_text(encoding="utf-8")
    try:
        return TrainedModel.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        field = exc.args[0] if isinstance(exc, KeyError) else "version"
        raise FormatError(f"bad model file: {exc}", str(path), _line_of(text, str(field)) or 1) from exc

"""Procedural two-view scene pairs with ground-truth correspondences and changes.

A scene is a set of boxes in front of a reference camera.  The second camera
is displaced according to one of four viewpoint-difference protocols; only
the yaw range differs between sets 2-4.  Detections are exact projections of
object centers (so ground-truth pairs satisfy the epipolar constraint) and
carry a noisy appearance descriptor whose noise grows with the yaw gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from .errors import ConfigError, EmptyView
from .geometry import (CameraIntrinsics, CameraView, FundamentalMatrix, Pose,
                       fundamental_from_views, rotation_from_ypr)

GENERATOR_VERSION = "1.0"

# (width, height, depth) in meters; order defines class_id
CLASS_SIZES = np.array([
    [1.8, 1.5, 4.2],   # vehicle
    [0.8, 0.8, 0.1],   # sign
    [0.4, 3.0, 0.4],   # pole / light
    [0.6, 1.7, 0.5],   # pedestrian
    [2.5, 2.5, 2.5],   # booth / container
    [1.2, 1.0, 0.6],   # bin / bench
])


@dataclass(frozen=True)
class ViewpointProtocol:
    set_id: int
    yaw_range: Tuple[float, float]      # |yaw| bounds, degrees
    translation_range: float            # |dx|, |dy| bound, meters
    roll_pitch_range: float             # |roll|, |pitch| bound, degrees

    @classmethod
    def from_set(cls, set_id: int) -> "ViewpointProtocol":
        if set_id == 1:
            return cls(1, (0.0, 0.0), 0.0, 0.0)
        yaw = {2: (0.0, 10.0), 3: (10.0, 20.0), 4: (20.0, 30.0)}
        if set_id not in yaw:
            raise ConfigError(f"viewpoint set must be 1-4, got {set_id}")
        return cls(set_id, yaw[set_id], 1.0, 5.0)

    def to_dict(self):
        return {"set_id": self.set_id, "yaw_range": list(self.yaw_range),
                "translation_range": self.translation_range,
                "roll_pitch_range": self.roll_pitch_range}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["set_id"]), tuple(float(x) for x in d["yaw_range"]),
                   float(d["translation_range"]), float(d["roll_pitch_range"]))


@dataclass(frozen=True)
class SceneConfig:
    n_objects: int = 10
    depth_range: Tuple[float, float] = (8.0, 40.0)
    n_classes: int = 4
    descriptor_dim: int = 16
    class_spread: float = 2.0       # within-class latent spread relative to the class mean
    class_seed: int = 0             # class means are shared by every scene
    width: int = 640
    height: int = 480
    focal: float = 320.0
    margin: float = 0.05            # fraction of the image kept free at the borders

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.focal, self.focal, self.width / 2.0, self.height / 2.0,
                                self.width, self.height)


@dataclass(frozen=True)
class NoiseModel:
    sigma_view: float = 2.5    # descriptor noise per radian of yaw gap
    sigma_det: float = 0.1     # per-observation descriptor noise
    dropout: float = 0.0       # per-detection miss probability, each view
    spurious: float = 0.0      # expected spurious detections per view
    center_jitter: float = 0.0  # center noise as a fraction of the box size

    @classmethod
    def none(cls) -> "NoiseModel":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ChangeModel:
    change_rate: float = 0.1
    replace_weight: float = 0.5
    disappear_weight: float = 0.5
    appear_ratio: float = 0.5   # appear-only objects per changed object, in expectation


@dataclass(frozen=True)
class PairConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    changes: ChangeModel = field(default_factory=ChangeModel)


@dataclass(frozen=True)
class SceneObject:
    id: int
    class_id: int
    center: np.ndarray
    size: np.ndarray
    latent: np.ndarray


@dataclass(frozen=True)
class Detection:
    node_id: int
    bbox: np.ndarray                 # (cx, cy, w, h) pixels
    descriptor: np.ndarray
    source_object: Optional[int] = None
    class_id: int = -1

    @property
    def center(self) -> np.ndarray:
        return self.bbox[:2]


@dataclass
class ChangeRecord:
    disappeared: List[int] = field(default_factory=list)
    replaced: List[int] = field(default_factory=list)
    appeared: List[int] = field(default_factory=list)

    def __len__(self):
        return len(self.disappeared) + len(self.replaced) + len(self.appeared)

    def entries(self):
        return ([(i, "disappear") for i in self.disappeared]
                + [(i, "replace") for i in self.replaced]
                + [(i, "appear") for i in self.appeared])


@dataclass
class ScenePair:
    detections1: List[Detection]
    detections2: List[Detection]
    f: Optional[FundamentalMatrix]
    gt_match: List[Tuple[int, int]]       # -1 encodes the unmatched label
    gt_change: List[bool]                 # aligned with gt_match
    protocol: ViewpointProtocol
    seed: int
    views: Tuple[CameraView, CameraView]

    @property
    def image_size(self) -> Tuple[int, int]:
        k = self.views[0].intrinsics
        return k.width, k.height

    @property
    def n(self) -> int:
        return len(self.detections1)

    @property
    def m(self) -> int:
        return len(self.detections2)

    def gt_matrix(self) -> np.ndarray:
        s = np.zeros((self.n, self.m))
        for i, j in self.gt_match:
            if i >= 0 and j >= 0:
                s[i, j] = 1.0
        return s

    def node_change_labels(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per-detection ground-truth change labels for both views."""
        c1 = np.zeros(self.n, dtype=bool)
        c2 = np.zeros(self.m, dtype=bool)
        for (i, j), ch in zip(self.gt_match, self.gt_change):
            if i >= 0:
                c1[i] = ch
            if j >= 0:
                c2[j] = ch
        return c1, c2


# disjoint seed streams for the pairs of one master seed
TEST_STREAM, CALIBRATION_STREAM, TRAIN_STREAM = 0, 1, 2


def pair_seed(master_seed: int, set_id: int, index: int, stream: int = TEST_STREAM) -> int:
    """Independent 64-bit seed for one pair, stable under any schedule."""
    key = [int(master_seed), int(set_id), int(index)]
    if stream:
        key.append(int(stream))
    words = np.random.SeedSequence(key).generate_state(2)
    return int(words[0]) | (int(words[1]) << 32)


def _unit(x, axis=-1):
    return x / np.linalg.norm(x, axis=axis, keepdims=True)


def class_means(config: SceneConfig) -> np.ndarray:
    rng = np.random.default_rng(config.class_seed)
    return _unit(rng.standard_normal((config.n_classes, config.descriptor_dim)))


def sample_pose_pair(protocol: ViewpointProtocol, rng) -> Tuple[Pose, Pose]:
    """Reference pose at the origin and a displaced target pose.

    Horizontal translation acts on the ground plane (world x and z).
    """
    ref = Pose()
    if protocol.set_id == 1:
        return ref, Pose()
    lo, hi = protocol.yaw_range
    yaw = rng.uniform(lo, hi) * rng.choice([-1.0, 1.0])
    tr = protocol.translation_range
    dx, dy = rng.uniform(-tr, tr, size=2)
    rp = protocol.roll_pitch_range
    roll, pitch = rng.uniform(-rp, rp, size=2)
    target = Pose(rotation_from_ypr(yaw, pitch, roll), np.array([dx, 0.0, dy]))
    return ref, target


def relative_yaw(pose1: Pose, pose2: Pose) -> float:
    """Yaw of ``pose2`` relative to ``pose1`` in radians."""
    R = pose1.rotation.T @ pose2.rotation
    fwd = R[:, 2]
    return float(np.arctan2(fwd[0], fwd[2]))


def _sample_latents(config: SceneConfig, class_ids, rng) -> np.ndarray:
    means = class_means(config)
    z = rng.standard_normal((len(class_ids), config.descriptor_dim)) / np.sqrt(config.descriptor_dim)
    return _unit(means[class_ids] + config.class_spread * z)


def _sample_objects(config: SceneConfig, count: int, first_id: int, rng) -> List[SceneObject]:
    k = config.intrinsics()
    lo, hi = config.depth_range
    mx, my = config.margin * config.width, config.margin * config.height
    u = rng.uniform(mx, config.width - mx, size=count)
    v = rng.uniform(my, config.height - my, size=count)
    z = rng.uniform(lo, hi, size=count)
    centers = np.column_stack([(u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z])
    cls = rng.integers(0, config.n_classes, size=count)
    sizes = CLASS_SIZES[cls % len(CLASS_SIZES)] * rng.uniform(0.8, 1.2, size=(count, 1))
    latents = _sample_latents(config, cls, rng)
    return [SceneObject(first_id + t, int(cls[t]), centers[t], sizes[t], latents[t])
            for t in range(count)]


def generate_scene(config: SceneConfig, rng) -> List[SceneObject]:
    """Objects placed in the reference camera's frustum."""
    if config.n_objects < 1:
        raise ConfigError("object count must be at least 1")
    lo, hi = config.depth_range
    if not (1.0 < lo <= hi < 100.0):
        raise ConfigError(f"depth range {config.depth_range} must lie within (1, 100) m")
    if config.margin < 0 or 2 * config.margin >= 1.0:
        raise ConfigError("image margin leaves an empty frustum")
    return _sample_objects(config, config.n_objects, 0, rng)


def inject_changes(objects: List[SceneObject], changes: ChangeModel, rng,
                   config: Optional[SceneConfig] = None):
    """Apply disappear / replace changes and insert appear-only objects.

    Returns the view-2 object list and the record of what changed.
    """
    rate = changes.change_rate
    if not 0.0 <= rate <= 1.0:
        raise ConfigError("change_rate must lie in [0, 1]")
    record = ChangeRecord()
    if rate == 0.0 or not objects:
        return list(objects), record
    config = config or SceneConfig(descriptor_dim=len(objects[0].latent))
    wsum = changes.replace_weight + changes.disappear_weight
    if wsum <= 0:
        raise ConfigError("change weights must not both be zero")
    p_replace = changes.replace_weight / wsum
    out = []
    for obj in objects:
        if rng.random() >= rate:
            out.append(obj)
        elif rng.random() < p_replace:
            latent = _sample_latents(config, [obj.class_id], rng)[0]
            out.append(replace(obj, latent=latent))
            record.replaced.append(obj.id)
        else:
            record.disappeared.append(obj.id)
    n_new = int(rng.binomial(len(objects), min(1.0, rate * changes.appear_ratio)))
    if n_new:
        first = max(o.id for o in objects) + 1
        for obj in _sample_objects(config, n_new, first, rng):
            out.append(obj)
            record.appeared.append(obj.id)
    return out, record


_CORNERS = np.array([[sx, sy, sz] for sx in (-0.5, 0.5) for sy in (-0.5, 0.5) for sz in (-0.5, 0.5)])


def _observe(view: CameraView, obj: SceneObject):
    """Return (cx, cy, w, h) if the object center is visible, else None."""
    k = view.intrinsics
    pts = np.vstack([obj.center, obj.center + _CORNERS * obj.size])
    cam = view.pose.world_to_camera(pts)
    if np.any(cam[:, 2] <= 0.5):
        return None
    uv = np.column_stack([k.fx * cam[:, 0] / cam[:, 2] + k.cx, k.fy * cam[:, 1] / cam[:, 2] + k.cy])
    cx, cy = uv[0]
    if not (0.0 <= cx < k.width and 0.0 <= cy < k.height):
        return None
    x0, y0 = np.clip(uv[1:].min(axis=0), 0.0, [k.width, k.height])
    x1, y1 = np.clip(uv[1:].max(axis=0), 0.0, [k.width, k.height])
    return np.array([cx, cy, max(x1 - x0, 1.0), max(y1 - y0, 1.0)])


def _noisy_descriptor(latent, sigma, rng):
    d = latent.shape[0]
    if sigma <= 0:
        return latent.copy()
    return _unit(latent + sigma * rng.standard_normal(d) / np.sqrt(d))


def _render_view(view, objects, noise: NoiseModel, sigma, config: SceneConfig, rng):
    dets = []
    for obj in objects:
        box = _observe(view, obj)
        # draws happen for every object so the stream does not depend on visibility
        drop = rng.random() < noise.dropout
        eps = rng.standard_normal(2)
        desc = _noisy_descriptor(obj.latent, sigma, rng)
        if box is None or drop:
            continue
        if noise.center_jitter > 0:
            k = view.intrinsics
            box[:2] = np.clip(box[:2] + noise.center_jitter * box[2:] * eps,
                              0.0, [k.width - 1e-6, k.height - 1e-6])
        dets.append((box, desc, obj.id, obj.class_id))
    n_spur = int(rng.poisson(noise.spurious)) if noise.spurious > 0 else 0
    if n_spur:
        k = view.intrinsics
        fakes = _sample_objects(config, n_spur, -1, rng)
        for obj in fakes:
            cam_z = obj.center[2]
            w = k.fx * obj.size[0] / cam_z
            h = k.fy * obj.size[1] / cam_z
            cx = rng.uniform(0, k.width)
            cy = rng.uniform(0, k.height)
            desc = _noisy_descriptor(obj.latent, sigma, rng)
            dets.append((np.array([cx, cy, max(w, 1.0), max(h, 1.0)]), desc, None, obj.class_id))
    return dets


def render_views(scene1: List[SceneObject], scene2: List[SceneObject], poses: Tuple[Pose, Pose],
                 noise: NoiseModel, rng, config: Optional[SceneConfig] = None,
                 record: Optional[ChangeRecord] = None,
                 protocol: Optional[ViewpointProtocol] = None, seed: int = 0) -> ScenePair:
    config = config or SceneConfig()
    record = record or ChangeRecord()
    k = config.intrinsics()
    view1, view2 = CameraView(k, poses[0]), CameraView(k, poses[1])
    gap = abs(relative_yaw(poses[0], poses[1]))
    sig1 = noise.sigma_det
    sig2 = float(np.hypot(noise.sigma_view * gap, noise.sigma_det))
    raw1 = _render_view(view1, scene1, noise, sig1, config, rng)
    raw2 = _render_view(view2, scene2, noise, sig2, config, rng)
    if not raw1 or not raw2:
        raise EmptyView("a view has no detections")
    # detection order carries no information
    raw1 = [raw1[t] for t in rng.permutation(len(raw1))]
    raw2 = [raw2[t] for t in rng.permutation(len(raw2))]
    det1 = [Detection(i, b, d, s, c) for i, (b, d, s, c) in enumerate(raw1)]
    det2 = [Detection(j, b, d, s, c) for j, (b, d, s, c) in enumerate(raw2)]

    changed = set(record.replaced) | set(record.disappeared) | set(record.appeared)
    where2 = {d.source_object: d.node_id for d in det2 if d.source_object is not None}
    gt_match, gt_change, used2 = [], [], set()
    for d in det1:
        j = where2.get(d.source_object, -1) if d.source_object is not None else -1
        gt_match.append((d.node_id, j))
        gt_change.append(d.source_object in changed)
        if j >= 0:
            used2.add(j)
    for d in det2:
        if d.node_id not in used2:
            gt_match.append((-1, d.node_id))
            gt_change.append(d.source_object in changed)
    try:
        f = fundamental_from_views(view1, view2)
    except Exception:
        f = None
    return ScenePair(det1, det2, f, gt_match, gt_change,
                     protocol or ViewpointProtocol.from_set(1), seed, (view1, view2))


def generate_pair(protocol: ViewpointProtocol, seed: int, config: Optional[PairConfig] = None,
                  max_attempts: int = 50) -> ScenePair:
    """One complete pair, resampling the scene when a view comes out empty."""
    config = config or PairConfig()
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        poses = sample_pose_pair(protocol, rng)
        scene = generate_scene(config.scene, rng)
        scene2, record = inject_changes(scene, config.changes, rng, config.scene)
        try:
            return render_views(scene, scene2, poses, config.noise, rng, config.scene,
                                record, protocol, seed)
        except EmptyView:
            continue
    raise EmptyView(f"no non-empty pair after {max_attempts} attempts (seed {seed})")


def bbox_iou(a, b) -> float:
    """IoU of two corner-format boxes ``(x0, y0, x1, y1)``."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def center_to_corners(box):
    cx, cy, w, h = box
    return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def associate_detections(detections, gt_boxes, iou_threshold: float = 0.5) -> dict:
    """Greedy best-IoU association of detections to ground-truth boxes.

    Both inputs are center-format boxes (or objects with ``bbox``).  Returns a
    ``{detection index: gt index}`` dict; detections whose best remaining IoU is
    below the threshold stay unassociated.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ConfigError("iou_threshold must lie in (0, 1)")
    boxes_d = [center_to_corners(getattr(d, "bbox", d)) for d in detections]
    boxes_g = [center_to_corners(getattr(g, "bbox", g)) for g in gt_boxes]
    cand = []
    for i, bd in enumerate(boxes_d):
        for j, bg in enumerate(boxes_g):
            iou = bbox_iou(bd, bg)
            if iou >= iou_threshold:
                cand.append((-iou, i, j))
    cand.sort()
    out, taken = {}, set()
    for _, i, j in cand:
        if i in out or j in taken:
            continue
        out[i] = j
        taken.add(j)
    return out

"""Pinhole cameras, fundamental matrices and the normalized epipolar penalty.

Conventions
-----------
* World frame follows the camera convention of the reference view:
  x right, y down, z forward.
* ``Pose.rotation`` maps camera-frame vectors into the world frame and
  ``Pose.translation`` is the camera center in world coordinates.
* The fundamental matrix satisfies ``p1^T F p2 = 0`` for homogeneous pixel
  points, so ``F @ p2`` is the epipolar line in image 1 of a point in image 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import DegenerateBaseline, DegenerateLine, InvalidBBox, NonPositiveDepth

SigmaMode = Union[float, str]

NORMALIZE_MODES = ("second", "first", "geometric_mean")


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


def _unchecked_intrinsics(fx, fy, cx, cy, width=1, height=1):
    # bypasses the principal-point check (hand examples use cx = cy = 0)
    obj = object.__new__(CameraIntrinsics)
    for k, v in dict(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height).items():
        object.__setattr__(obj, k, v)
    return obj


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def world_to_camera(self, points):
        pts = np.asarray(points, dtype=float)
        return (pts - self.translation) @ self.rotation

    def to_dict(self):
        return {"rotation": self.rotation.ravel().tolist(),
                "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["rotation"], dtype=float).reshape(3, 3),
                   np.asarray(d["translation"], dtype=float))


@dataclass(frozen=True)
class CameraView:
    intrinsics: CameraIntrinsics
    pose: Pose = field(default_factory=Pose)

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation


@dataclass(frozen=True)
class FundamentalMatrix:
    f: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "f", np.asarray(self.f, dtype=float).reshape(3, 3))


@dataclass(frozen=True)
class EpipolarPenalty:
    d: np.ndarray
    w: np.ndarray
    sigma: float
    degenerate: int = 0  # entries whose epipolar line vanished


def rotation_from_ypr(yaw_deg=0.0, pitch_deg=0.0, roll_deg=0.0) -> np.ndarray:
    """Camera-to-world rotation: yaw about y (down), pitch about x, roll about z."""
    y, p, r = np.radians([yaw_deg, pitch_deg, roll_deg])
    Ry = np.array([[np.cos(y), 0.0, np.sin(y)], [0.0, 1.0, 0.0], [-np.sin(y), 0.0, np.cos(y)]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, np.cos(p), -np.sin(p)], [0.0, np.sin(p), np.cos(p)]])
    Rz = np.array([[np.cos(r), -np.sin(r), 0.0], [np.sin(r), np.cos(r), 0.0], [0.0, 0.0, 1.0]])
    return Ry @ Rx @ Rz


def skew(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return np.array([[0.0, -t[2], t[1]], [t[2], 0.0, -t[0]], [-t[1], t[0], 0.0]])


def project_points(view: CameraView, points) -> np.ndarray:
    """Project an (N, 3) array of world points to (N, 2) pixels."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    cam = view.pose.world_to_camera(pts)
    z = cam[:, 2]
    if np.any(z <= 1e-9):
        raise NonPositiveDepth("point at or behind the camera plane")
    k = view.intrinsics
    return np.column_stack([k.fx * cam[:, 0] / z + k.cx, k.fy * cam[:, 1] / z + k.cy])


def project_point(view: CameraView, point) -> np.ndarray:
    return project_points(view, np.asarray(point, dtype=float).reshape(1, 3))[0]


def canonical_fundamental(f) -> np.ndarray:
    """Project onto rank 2, scale to unit Frobenius norm, fix the sign."""
    f = np.asarray(f, dtype=float).reshape(3, 3)
    U, s, Vt = np.linalg.svd(f)
    s[2] = 0.0
    f = (U * s) @ Vt
    f = f / np.linalg.norm(f)
    k = int(np.argmax(np.abs(f)))
    if f.flat[k] < 0:
        f = -f
    return f


def fundamental_from_views(view1: CameraView, view2: CameraView) -> FundamentalMatrix:
    c1, c2 = view1.center, view2.center
    if np.linalg.norm(c1 - c2) <= 1e-9:
        raise DegenerateBaseline("camera centers coincide")
    R1, R2 = view1.pose.rotation, view2.pose.rotation
    # X_cam2 = R21 X_cam1 + t21
    R21 = R2.T @ R1
    t21 = R2.T @ (c1 - c2)
    E21 = skew(t21) @ R21
    K1inv = np.linalg.inv(view1.intrinsics.K)
    K2inv = np.linalg.inv(view2.intrinsics.K)
    f = K1inv.T @ E21.T @ K2inv
    return FundamentalMatrix(canonical_fundamental(f))


def _homog(p):
    p = np.asarray(p, dtype=float)
    return np.append(p, 1.0) if p.shape[-1] == 2 else p


def epipolar_offset_vector(f, p_i, p_j) -> np.ndarray:
    """Perpendicular vector from ``p_i`` (image 1) to the epipolar line of ``p_j``."""
    F = f.f if isinstance(f, FundamentalMatrix) else np.asarray(f, dtype=float)
    line = F @ _homog(p_j)
    nrm2 = line[0] ** 2 + line[1] ** 2
    if np.sqrt(nrm2) <= 1e-12:
        raise DegenerateLine("epipolar line undefined (point at the epipole)")
    val = _homog(p_i) @ line
    # foot of the perpendicular is p_i - val * l[:2] / |l[:2]|^2
    return -(val / nrm2) * line[:2]


def normalized_epipolar_distance(v, w_j, h_j) -> float:
    if w_j <= 0 or h_j <= 0:
        raise InvalidBBox(f"non-positive box dims ({w_j}, {h_j})")
    v = np.asarray(v, dtype=float)
    return float(np.sqrt((v[0] / w_j) ** 2 + (v[1] / h_j) ** 2))


def _node_arrays(nodes):
    boxes = np.array([np.asarray(getattr(n, "bbox", n), dtype=float) for n in nodes]).reshape(-1, 4)
    return boxes[:, :2], boxes[:, 2], boxes[:, 3]


def epipolar_distance_matrix(f, boxes1, boxes2, normalize_by="second"):
    """Normalized epipolar distances for every (i, j); returns (d, degenerate mask).

    ``boxes`` are (N, 4) arrays of ``(cx, cy, w, h)``.
    """
    if normalize_by not in NORMALIZE_MODES:
        raise ValueError(f"normalize_by must be one of {NORMALIZE_MODES}")
    F = f.f if isinstance(f, FundamentalMatrix) else np.asarray(f, dtype=float)
    F = F / np.linalg.norm(F)
    b1 = np.asarray(boxes1, dtype=float).reshape(-1, 4)
    b2 = np.asarray(boxes2, dtype=float).reshape(-1, 4)
    if np.any(b1[:, 2:] <= 0) or np.any(b2[:, 2:] <= 0):
        raise InvalidBBox("non-positive box dims")
    P1 = np.column_stack([b1[:, :2], np.ones(len(b1))])
    P2 = np.column_stack([b2[:, :2], np.ones(len(b2))])
    lines = P2 @ F.T                                   # (m, 3), row j = F p_j
    nrm2 = lines[:, 0] ** 2 + lines[:, 1] ** 2
    bad = np.sqrt(nrm2) <= 1e-12
    safe = np.where(bad, 1.0, nrm2)
    val = P1 @ lines.T                                 # (n, m)
    vx = -(val / safe) * lines[:, 0]
    vy = -(val / safe) * lines[:, 1]
    if normalize_by == "second":
        w, h = b2[None, :, 2], b2[None, :, 3]
    elif normalize_by == "first":
        w, h = b1[:, None, 2], b1[:, None, 3]
    else:
        w = np.sqrt(b1[:, None, 2] * b2[None, :, 2])
        h = np.sqrt(b1[:, None, 3] * b2[None, :, 3])
    d = np.sqrt((vx / w) ** 2 + (vy / h) ** 2)
    mask = np.broadcast_to(bad[None, :], d.shape)
    return d, mask


def epipolar_penalty_matrix(f, nodes1: Sequence, nodes2: Sequence,
                            sigma: SigmaMode = 2.0, normalize_by="second") -> EpipolarPenalty:
    """Gaussian penalty ``exp(-d^2 / (2 sigma^2))`` over normalized epipolar distances.

    ``sigma`` is either a fixed positive float or ``"adaptive"``, which uses the
    population standard deviation of all distances.  Entries whose epipolar
    line is undefined receive the largest finite distance in the matrix.
    """
    if len(nodes1) == 0 or len(nodes2) == 0:
        raise ValueError("penalty needs at least one node per view")
    c1, w1, h1 = _node_arrays(nodes1)
    c2, w2, h2 = _node_arrays(nodes2)
    d, bad = epipolar_distance_matrix(f, np.column_stack([c1, w1, h1]),
                                      np.column_stack([c2, w2, h2]), normalize_by)
    n_bad = int(bad.sum())
    if n_bad:
        finite = d[~bad]
        d = np.where(bad, finite.max() if finite.size else 0.0, d)
    if isinstance(sigma, str):
        if sigma != "adaptive":
            raise ValueError(f"unknown sigma mode {sigma!r}")
        s = float(np.std(d))
    else:
        s = float(sigma)
        if s <= 0:
            raise ValueError("sigma must be positive")
    if s <= 1e-12:
        # all distances identical: the penalty carries no information
        w = np.ones_like(d)
    else:
        w = np.exp(-d ** 2 / (2.0 * s * s))
    return EpipolarPenalty(d=d, w=w, sigma=s, degenerate=n_bad)


def parse_sigma(text) -> SigmaMode:
    """Parse ``fixed:2.0``, ``adaptive`` or a bare number."""
    if isinstance(text, (int, float)):
        return float(text)
    t = str(text).strip().lower()
    if t == "adaptive":
        return "adaptive"
    if t.startswith("fixed:"):
        t = t[len("fixed:"):]
    return float(t)

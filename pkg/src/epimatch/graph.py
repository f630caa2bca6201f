"""Object graphs over detections and their node / edge feature matrices."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .delaunay import delaunay_edges
from .errors import EmptyEdgeSet

TOPOLOGIES = ("dt", "fc")


@dataclass(frozen=True)
class ObjectGraph:
    nodes: Sequence
    edges: List[Tuple[int, int]]     # canonical (low, high) pairs
    topology: str
    width: float = 1.0
    height: float = 1.0

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def p(self) -> int:
        return len(self.edges)

    @property
    def tails(self) -> np.ndarray:
        return np.array([a for a, _ in self.edges], dtype=int)

    @property
    def heads(self) -> np.ndarray:
        return np.array([b for _, b in self.edges], dtype=int)

    @property
    def incidence_tail(self) -> np.ndarray:
        g = np.zeros((self.n, self.p))
        g[self.tails, np.arange(self.p)] = 1.0
        return g

    @property
    def incidence_head(self) -> np.ndarray:
        h = np.zeros((self.n, self.p))
        h[self.heads, np.arange(self.p)] = 1.0
        return h

    @property
    def centers(self) -> np.ndarray:
        return np.array([np.asarray(d.bbox, dtype=float)[:2] for d in self.nodes]).reshape(-1, 2)

    @property
    def descriptors(self) -> np.ndarray:
        return np.array([np.asarray(d.descriptor, dtype=float) for d in self.nodes])


def fully_connected_edges(n: int) -> List[Tuple[int, int]]:
    return [(a, b) for a in range(n) for b in range(a + 1, n)]


def build_object_graph(detections: Sequence, topology: str = "dt",
                       image_size: Tuple[float, float] = (1.0, 1.0)) -> ObjectGraph:
    """Nodes are the detections; DT edges come from the bbox centers."""
    if len(detections) == 0:
        raise ValueError("graph needs at least one detection")
    topology = topology.lower()
    if topology == "dt":
        centers = [np.asarray(d.bbox, dtype=float)[:2] for d in detections]
        edges = delaunay_edges(centers)
    elif topology == "fc":
        edges = fully_connected_edges(len(detections))
    else:
        raise ValueError(f"topology must be one of {TOPOLOGIES}, got {topology!r}")
    return ObjectGraph(list(detections), edges, topology, float(image_size[0]), float(image_size[1]))


def node_feature_matrix(graph: ObjectGraph, descriptors=None) -> np.ndarray:
    """Descriptor concatenated with the center normalized by the image size.

    ``descriptors`` overrides the detections' own descriptors (same order).
    """
    desc = graph.descriptors if descriptors is None else np.asarray(descriptors, dtype=float)
    xy = graph.centers / np.array([graph.width, graph.height])
    return np.hstack([desc, np.clip(xy, 0.0, 1.0)])


def edge_feature_matrix(graph: ObjectGraph, descriptors=None) -> np.ndarray:
    """Per-edge ``[d_a + d_b, |d_a - d_b|, dx / W, dy / H]`` from low to high index."""
    if graph.p == 0:
        raise EmptyEdgeSet("graph has no edges")
    desc = graph.descriptors if descriptors is None else np.asarray(descriptors, dtype=float)
    a, b = graph.tails, graph.heads
    disp = (graph.centers[b] - graph.centers[a]) / np.array([graph.width, graph.height])
    return np.hstack([desc[a] + desc[b], np.abs(desc[a] - desc[b]), disp])


def reverse_edge_features(h: np.ndarray) -> np.ndarray:
    """Features of the same edges traversed high-to-low (displacement negated)."""
    out = np.array(h, dtype=float, copy=True)
    out[:, -2:] *= -1.0
    return out

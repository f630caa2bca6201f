"""Bowyer-Watson Delaunay triangulation with exact-fallback predicates.

Points are inserted in lexicographic order, so the output does not depend on
input order and cocircular ties resolve the same way on every platform.
"""

from __future__ import annotations

from fractions import Fraction
from typing import List, Sequence, Tuple

import numpy as np

_EPS = np.finfo(float).eps


def orient2d(a, b, c) -> int:
    """Sign of twice the signed area of triangle abc (+1 counter-clockwise)."""
    l = (a[0] - c[0]) * (b[1] - c[1])
    r = (a[1] - c[1]) * (b[0] - c[0])
    det = l - r
    if abs(det) > 8 * _EPS * (abs(l) + abs(r)):
        return 1 if det > 0 else -1
    A = [Fraction(x) for x in a]
    B = [Fraction(x) for x in b]
    C = [Fraction(x) for x in c]
    det = (A[0] - C[0]) * (B[1] - C[1]) - (A[1] - C[1]) * (B[0] - C[0])
    return (det > 0) - (det < 0)


def incircle(a, b, c, d) -> int:
    """+1 if d lies strictly inside the circumcircle of counter-clockwise abc."""
    adx, ady = a[0] - d[0], a[1] - d[1]
    bdx, bdy = b[0] - d[0], b[1] - d[1]
    cdx, cdy = c[0] - d[0], c[1] - d[1]
    alift = adx * adx + ady * ady
    blift = bdx * bdx + bdy * bdy
    clift = cdx * cdx + cdy * cdy
    det = (alift * (bdx * cdy - cdx * bdy)
           + blift * (cdx * ady - adx * cdy)
           + clift * (adx * bdy - bdx * ady))
    perm = (alift * (abs(bdx * cdy) + abs(cdx * bdy))
            + blift * (abs(cdx * ady) + abs(adx * cdy))
            + clift * (abs(adx * bdy) + abs(bdx * ady)))
    if abs(det) > 16 * _EPS * perm:
        return 1 if det > 0 else -1
    A, B, C, D = ([Fraction(x) for x in p] for p in (a, b, c, d))
    adx, ady = A[0] - D[0], A[1] - D[1]
    bdx, bdy = B[0] - D[0], B[1] - D[1]
    cdx, cdy = C[0] - D[0], C[1] - D[1]
    det = ((adx * adx + ady * ady) * (bdx * cdy - cdx * bdy)
           + (bdx * bdx + bdy * bdy) * (cdx * ady - adx * cdy)
           + (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady))
    return (det > 0) - (det < 0)


def _bowyer_watson(pts: List[Tuple[float, float]], super_scale: float):
    n = len(pts)
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    cx, cy = (min(xs) + max(xs)) / 2, (min(ys) + max(ys)) / 2
    r = max(max(xs) - min(xs), max(ys) - min(ys), 1.0) * super_scale
    verts = list(pts) + [(cx - 2 * r, cy - r), (cx + 2 * r, cy - r), (cx, cy + 2 * r)]
    tris = {(n, n + 1, n + 2)}
    for k in range(n):
        p = verts[k]
        bad = [t for t in tris if incircle(verts[t[0]], verts[t[1]], verts[t[2]], p) > 0]
        count = {}
        for t in bad:
            for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                key = (min(e), max(e))
                count[key] = count.get(key, 0) + 1
        for t in bad:
            tris.discard(t)
        for t in bad:
            for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                if count[(min(a, b), max(a, b))] == 1:
                    tris.add((a, b, k))
    edges = set()
    for t in tris:
        if max(t) >= n:
            continue
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            edges.add((min(a, b), max(a, b)))
    return edges


def delaunay_edges(points: Sequence, super_scale: float = 1e4) -> List[Tuple[int, int]]:
    """Sorted ``(low, high)`` index pairs of the Delaunay triangulation.

    n = 1 gives no edges, n = 2 a single edge, and fully collinear input a
    path in coordinate order.  Coincident points are attached to their first
    occurrence by a single edge.
    """
    arr = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(arr)
    if n <= 1:
        return []
    order = sorted(range(n), key=lambda i: (arr[i, 0], arr[i, 1], i))
    reps, dup_edges = [], set()
    for i in order:
        if reps and arr[reps[-1], 0] == arr[i, 0] and arr[reps[-1], 1] == arr[i, 1]:
            dup_edges.add((min(reps[-1], i), max(reps[-1], i)))
        else:
            reps.append(i)
    # equal points are adjacent after the sort; chain duplicates to the first one
    dup_edges = {(min(a, b), max(a, b)) for a, b in dup_edges}
    upts = [(float(arr[i, 0]), float(arr[i, 1])) for i in reps]
    if len(upts) == 1:
        return sorted(dup_edges)
    collinear = all(orient2d(upts[0], upts[1], p) == 0 for p in upts[2:])
    if collinear:
        local = {(k, k + 1) for k in range(len(upts) - 1)}
    else:
        local = _bowyer_watson(upts, super_scale)
    edges = {(min(reps[a], reps[b]), max(reps[a], reps[b])) for a, b in local}
    return sorted(edges | dup_edges)


def brute_force_delaunay_edges(points) -> List[Tuple[int, int]]:
    """O(n^4) empty-circumcircle reference; exact only for points in general position."""
    pts = [tuple(map(float, p)) for p in np.asarray(points, dtype=float).reshape(-1, 2)]
    n = len(pts)
    edges = set()
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                o = orient2d(pts[i], pts[j], pts[k])
                if o == 0:
                    continue
                a, b, c = (i, j, k) if o > 0 else (i, k, j)
                if any(incircle(pts[a], pts[b], pts[c], pts[t]) > 0
                       for t in range(n) if t not in (i, j, k)):
                    continue
                edges.update({(i, j), (i, k), (j, k)})
    return sorted(edges)

"""Closed polyline contours bounding SIE inclusions, plus shape generators."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from functools import cached_property
from typing import TextIO

import numpy as np
import scipy.sparse as sps
from scipy.spatial import cKDTree

from .errors import InvalidGeometry, InvalidParameter, ParseError

_CHUNK = 1 << 21


def _segments_intersect(p, q):
    """Pairwise proper-intersection test between segment sets p (n,2,2) and q (k,2,2)."""
    a, b = p[:, None, 0], p[:, None, 1]
    c, d = q[None, :, 0], q[None, :, 1]

    def cross(o, u, v):
        return (u[..., 0] - o[..., 0]) * (v[..., 1] - o[..., 1]) - (u[..., 1] - o[..., 1]) * (v[..., 0] - o[..., 0])

    d1 = cross(c, d, a)
    d2 = cross(c, d, b)
    d3 = cross(a, b, c)
    d4 = cross(a, b, d)
    return (d1 * d2 < 0) & (d3 * d4 < 0)


@dataclass(frozen=True, eq=False)
class BoundaryContour:
    """Counter-clockwise closed polyline; node ``m-1`` connects back to node 0."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float).reshape(-1, 2)
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        if len(nodes) < 3:
            raise InvalidGeometry("a contour needs at least 3 nodes")
        if not np.all(np.isfinite(nodes)):
            raise InvalidGeometry("non-finite contour node")
        if np.any(self.segment_lengths <= 0.0):
            raise InvalidGeometry("contour has repeated consecutive nodes")
        if self.area <= 0.0:
            raise InvalidGeometry("contour must be counter-clockwise")
        if not self._is_simple():
            raise InvalidGeometry("contour self-intersects")

    def _is_simple(self):
        seg = np.stack([self.nodes, np.roll(self.nodes, -1, axis=0)], axis=1)
        step = max(1, _CHUNK // (4 * len(seg)))
        return not any(_segments_intersect(seg[i:i + step], seg).any() for i in range(0, len(seg), step))

    @property
    def m(self):
        return len(self.nodes)

    @cached_property
    def segment_vectors(self):
        return np.roll(self.nodes, -1, axis=0) - self.nodes

    @cached_property
    def segment_lengths(self):
        return np.hypot(self.segment_vectors[:, 0], self.segment_vectors[:, 1])

    @cached_property
    def tangents(self):
        return self.segment_vectors / self.segment_lengths[:, None]

    @cached_property
    def outward_normals(self):
        t = self.tangents
        return np.stack([t[:, 1], -t[:, 0]], axis=1)

    @cached_property
    def area(self):
        x, y = self.nodes[:, 0], self.nodes[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    @property
    def perimeter(self):
        return float(self.segment_lengths.sum())

    @property
    def max_segment(self):
        return float(self.segment_lengths.max())

    @cached_property
    def centroid(self):
        x, y = self.nodes[:, 0], self.nodes[:, 1]
        cr = x * np.roll(y, -1) - np.roll(x, -1) * y
        cx = np.sum((x + np.roll(x, -1)) * cr) / (6 * self.area)
        cy = np.sum((y + np.roll(y, -1)) * cr) / (6 * self.area)
        return np.array([cx, cy])

    def gram_matrix(self):
        """Mass matrix of the piecewise-linear nodal basis on the contour."""
        m = self.m
        L = self.segment_lengths
        i = np.arange(m)
        j = (i + 1) % m
        G = np.zeros((m, m))
        np.add.at(G, (i, i), L / 3)
        np.add.at(G, (j, j), L / 3)
        np.add.at(G, (i, j), L / 6)
        np.add.at(G, (j, i), L / 6)
        return G

    @cached_property
    def _tree(self):
        return cKDTree(self.nodes)

    def _segment_distance(self, pts, seg):
        """Distance, foot parameter for points ``pts`` (P,2) against segments ``seg`` (P,K)."""
        a = self.nodes[seg]
        v = self.segment_vectors[seg]
        rel = pts[:, None, :] - a
        t = np.clip(np.sum(rel * v, axis=2) / (self.segment_lengths[seg] ** 2), 0.0, 1.0)
        d = rel - t[..., None] * v
        return np.sqrt(np.sum(d * d, axis=2)), t

    def nearest(self, points):
        """Distance to the polyline, index of the nearest segment and foot parameter in [0, 1]."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        m = self.m
        dist = np.empty(len(pts))
        seg = np.empty(len(pts), dtype=np.int64)
        par = np.empty(len(pts))
        todo = np.arange(len(pts))
        k = 8
        while len(todo):
            sub = pts[todo]
            if k >= m:
                cand = np.broadcast_to(np.arange(m), (len(todo), m))
                exact = np.ones(len(todo), dtype=bool)
                step = max(1, _CHUNK // m)
            else:
                dn, idx = self._tree.query(sub, k)
                cand = np.concatenate([idx, (idx - 1) % m], axis=1)
                step = len(todo)
            for i in range(0, len(todo), step):
                d, t = self._segment_distance(sub[i:i + step], cand[i:i + step])
                j = np.argmin(d, axis=1)
                r = np.arange(len(j))
                sel = todo[i:i + step]
                dist[sel], seg[sel], par[sel] = d[r, j], cand[i:i + step][r, j], t[r, j]
            if k >= m:
                break
            # exact once every node that could end a closer segment was queried
            exact = dn[:, -1] > dist[todo] + 0.5 * self.max_segment
            todo = todo[~exact]
            k *= 8
        return dist, seg, par

    def contains(self, points):
        """Inside test from the side of the nearest boundary feature (boundary points are ambiguous)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dist, seg, par = self.nearest(pts)
        m = self.m
        # vertex feet use the averaged normal of the two adjacent segments
        vert = np.where(par <= 0.0, seg, np.where(par >= 1.0, (seg + 1) % m, -1))
        n = self.outward_normals
        normal = n[seg].copy()
        at_v = vert >= 0
        normal[at_v] = n[vert[at_v]] + n[(vert[at_v] - 1) % m]
        foot = self.nodes[seg] + par[:, None] * self.segment_vectors[seg]
        return np.sum((pts - foot) * normal, axis=1) < 0.0

    def distance(self, points):
        """Unsigned distance from each point to the polyline."""
        return self.nearest(points)[0]

    def intersects(self, other: BoundaryContour) -> bool:
        p = np.stack([self.nodes, np.roll(self.nodes, -1, axis=0)], axis=1)
        q = np.stack([other.nodes, np.roll(other.nodes, -1, axis=0)], axis=1)
        step = max(1, _CHUNK // (4 * len(q)))
        return any(_segments_intersect(p[i:i + step], q).any() for i in range(0, len(p), step))

    def overlaps(self, other: BoundaryContour) -> bool:
        """True if the enclosed regions share interior points."""
        if self.intersects(other):
            return True
        return bool(self.contains(other.nodes[:1])[0] or other.contains(self.nodes[:1])[0])

    def translated(self, dx, dy):
        return BoundaryContour(self.nodes + np.array([dx, dy]))

    def rotated(self, angle, about=(0.0, 0.0)):
        c, s = math.cos(angle), math.sin(angle)
        R = np.array([[c, -s], [s, c]])
        o = np.asarray(about, dtype=float)
        return BoundaryContour((self.nodes - o) @ R.T + o)

    def reversed_nodes(self):
        """Node coordinates in clockwise order, starting from node 0."""
        return np.concatenate([self.nodes[:1], self.nodes[:0:-1]])


# -- generators ---------------------------------------------------------


def _count_for(length, h):
    if h <= 0:
        raise InvalidParameter("contour mesh size must be positive")
    return max(1, int(math.ceil(length / h - 1e-9)))


def circle_contour(center=(0.0, 0.0), radius=1.0, n=None, h=None, phase=0.0):
    if radius <= 0:
        raise InvalidParameter("radius must be positive")
    if n is None:
        if h is None:
            raise InvalidParameter("give n or h")
        n = max(8, _count_for(2 * math.pi * radius, h))
    t = phase + 2 * math.pi * np.arange(n) / n
    return BoundaryContour(np.column_stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)]))


def polygon_contour(vertices, h):
    """Polyline through ``vertices`` (CCW), each side subdivided to spacing <= h."""
    v = np.asarray(vertices, dtype=float)
    pts = []
    for i in range(len(v)):
        a, b = v[i], v[(i + 1) % len(v)]
        n = _count_for(float(np.hypot(*(b - a))), h)
        s = np.arange(n) / n
        pts.append(a + s[:, None] * (b - a))
    return BoundaryContour(np.concatenate(pts))


def square_contour(center=(0.0, 0.0), side=1.0, h=None):
    cx, cy = center
    s = side / 2
    return polygon_contour([(cx - s, cy - s), (cx + s, cy - s), (cx + s, cy + s), (cx - s, cy + s)], h)


def sector_contour(apex, radius, angle, start, h):
    """Circular sector with its corner at ``apex`` spanning [start, start+angle]."""
    if not 0 < angle < 2 * math.pi:
        raise InvalidParameter("sector angle must lie in (0, 2*pi)")
    apex = np.asarray(apex, dtype=float)
    u0 = np.array([math.cos(start), math.sin(start)])
    u1 = np.array([math.cos(start + angle), math.sin(start + angle)])
    n_r = _count_for(radius, h)
    n_a = _count_for(radius * angle, h)
    s = np.arange(n_r) / n_r
    edge_out = apex + radius * s[:, None] * u0
    t = start + angle * np.arange(n_a) / n_a
    arc = apex + radius * np.column_stack([np.cos(t), np.sin(t)])
    edge_in = apex + radius * (1 - s)[:, None] * u1
    return BoundaryContour(np.concatenate([edge_out, arc, edge_in]))


# -- text I/O -----------------------------------------------------------


def read_contour(stream: TextIO | str) -> BoundaryContour:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    rows = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line.split()))
    if not rows or rows[0][1] != ["contour", "1"]:
        raise ParseError("expected header 'contour 1'", rows[0][0] if rows else None)
    if len(rows) < 2 or rows[1][1][0] != "nodes" or len(rows[1][1]) != 2:
        raise ParseError("expected 'nodes m'", rows[1][0] if len(rows) > 1 else None)
    try:
        m = int(rows[1][1][1])
    except ValueError:
        raise ParseError("malformed node count", rows[1][0]) from None
    body = rows[2:]
    if len(body) != m:
        raise ParseError(f"expected {m} node lines, found {len(body)}")
    pts = []
    for lineno, tok in body:
        if len(tok) != 2:
            raise ParseError("node line needs 2 values", lineno)
        try:
            pts.append([float(tok[0]), float(tok[1])])
        except ValueError:
            raise ParseError("malformed number", lineno) from None
    return BoundaryContour(np.array(pts))


def write_contour(contour: BoundaryContour, stream: TextIO | None = None) -> str:
    lines = ["contour 1", f"nodes {contour.m}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in contour.nodes]
    text = "\n".join(lines) + "\n"
    if stream is not None:
        stream.write(text)
    return text


def subdivide(contour: BoundaryContour, r: int):
    """Split every segment into ``r`` equal parts.

    Returns the fine contour and the sparse prolongation ``P`` (fine x coarse)
    that interpolates coarse nodal values linearly onto the fine nodes.
    """
    if r < 1:
        raise InvalidParameter("subdivision factor must be >= 1")
    m = contour.m
    s = np.arange(r) / r
    a = contour.nodes
    pts = (a[:, None, :] + s[None, :, None] * contour.segment_vectors[:, None, :]).reshape(-1, 2)
    rows = np.repeat(np.arange(m * r), 2)
    i = np.repeat(np.arange(m), r)
    cols = np.column_stack([i, (i + 1) % m]).ravel()
    vals = np.column_stack([np.tile(1 - s, m), np.tile(s, m)]).ravel()
    keep = vals != 0.0
    P = sps.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(m * r, m))
    return BoundaryContour(pts), P

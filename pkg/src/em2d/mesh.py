"""Triangular nodal meshes: storage, element geometry, point location and text I/O."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, TextIO

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateElement, InvalidParameter, ParseError

DEFAULT_LOCATE_TOL = 1e-10


class Point2(NamedTuple):
    x: float
    y: float


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def triangle_coefficients(xy):
    """Linear shape-function coefficients for triangles.

    ``xy`` has shape (M, 3, 2).  Returns ``a, b, c`` of shape (M, 3) and the
    signed area (M,), so that ``L_j = (a_j + b_j x + c_j y) / (2 area)``.
    """
    x1, x2, x3 = xy[:, 0, 0], xy[:, 1, 0], xy[:, 2, 0]
    y1, y2, y3 = xy[:, 0, 1], xy[:, 1, 1], xy[:, 2, 1]
    a = np.stack([x2 * y3 - y2 * x3, x3 * y1 - y3 * x1, x1 * y2 - y1 * x2], axis=1)
    b = np.stack([y2 - y3, y3 - y1, y1 - y2], axis=1)
    c = np.stack([x3 - x2, x1 - x3, x2 - x1], axis=1)
    area = 0.5 * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0])
    return a, b, c, area


@dataclass(frozen=True)
class ElementGeometry:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    area: float

    def shape(self, x, y):
        """Barycentric weights ``L_j(x, y)``; trailing axis has length 3."""
        x = np.asarray(x, dtype=float)[..., None]
        y = np.asarray(y, dtype=float)[..., None]
        return (self.a + self.b * x + self.c * y) / (2.0 * self.area)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Immutable triangular mesh with counter-clockwise elements.

    ``boundary_node_flags`` marks nodes on the outer truncation boundary; if
    omitted it is derived from edges used by a single triangle.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    region_tag: np.ndarray = None
    boundary_node_flags: np.ndarray = None
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 2)
        tris = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        tags = (np.zeros(len(tris), dtype=np.int64) if self.region_tag is None
                else np.asarray(self.region_tag, dtype=np.int64).reshape(-1))
        if len(tags) != len(tris):
            raise InvalidParameter("region_tag length must equal triangle count")
        object.__setattr__(self, "nodes", _readonly(nodes))
        object.__setattr__(self, "triangles", _readonly(tris))
        object.__setattr__(self, "region_tag", _readonly(tags))
        if self.check:
            self._validate()
        flags = self.boundary_node_flags
        if flags is None:
            flags = np.zeros(len(nodes), dtype=bool)
            flags[np.unique(self.boundary_edges)] = True
        object.__setattr__(self, "boundary_node_flags", _readonly(np.asarray(flags, dtype=bool)))

    def _validate(self):
        n = len(self.nodes)
        if not np.all(np.isfinite(self.nodes)):
            raise InvalidParameter("non-finite node coordinates")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n):
            raise InvalidParameter("triangle references a node index out of range")
        bad = np.flatnonzero(self.areas <= 0.0)
        if bad.size:
            raise DegenerateElement(f"triangle {bad[0]} has non-positive area {self.areas[bad[0]]:.3e}")
        if n > 1:
            tol = 1e-12 * self.diameter
            pairs = cKDTree(self.nodes).query_pairs(tol)
            if pairs:
                i, j = sorted(pairs)[0]
                raise InvalidParameter(f"duplicate nodes {i} and {j}")
        _, counts = np.unique(self._sorted_edges, axis=0, return_counts=True)
        if counts.size and counts.max() > 2:
            raise InvalidParameter("mesh is not edge-manifold")

    # -- basic geometry -------------------------------------------------

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def diameter(self):
        if len(self.nodes) == 0:
            return 0.0
        lo, hi = self.nodes.min(axis=0), self.nodes.max(axis=0)
        return float(np.hypot(*(hi - lo)))

    @cached_property
    def _coeffs(self):
        return triangle_coefficients(self.nodes[self.triangles])

    @property
    def areas(self):
        return self._coeffs[3]

    @cached_property
    def centroids(self):
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def element_diameters(self):
        xy = self.nodes[self.triangles]
        d = np.linalg.norm(xy - np.roll(xy, -1, axis=1), axis=2)
        return d.max(axis=1)

    @cached_property
    def _sorted_edges(self):
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.sort(e, axis=1)

    @cached_property
    def boundary_edges(self):
        edges, counts = np.unique(self._sorted_edges, axis=0, return_counts=True)
        return edges[counts == 1]

    @cached_property
    def edges(self):
        return np.unique(self._sorted_edges, axis=0)

    def bounding_box(self):
        lo, hi = self.nodes.min(axis=0), self.nodes.max(axis=0)
        return (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))

    # -- point location -------------------------------------------------

    @cached_property
    def locator(self):
        return PointLocator(self)


def element_geometry(mesh: TriMesh, e: int) -> ElementGeometry:
    if not 0 <= e < mesh.n_triangles:
        raise InvalidParameter(f"element index {e} out of range")
    a, b, c, area = mesh._coeffs
    if area[e] <= 0.0:
        raise DegenerateElement(f"triangle {e} has zero area")
    return ElementGeometry(a[e].copy(), b[e].copy(), c[e].copy(), float(area[e]))


class PointLocator:
    """Bucket grid over triangle bounding boxes.

    Cell size starts at twice the median element diameter so graded meshes
    do not pile every fine triangle into a single bucket, and doubles while
    large triangles would cover too many cells.
    """

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        xy = mesh.nodes[mesh.triangles]
        lo = xy.min(axis=1)
        hi = xy.max(axis=1)
        self.origin = mesh.nodes.min(axis=0)
        span = mesh.nodes.max(axis=0) - self.origin
        self.cell = max(2.0 * float(np.median(mesh.element_diameters)), 1e-300)
        budget = 16 * len(xy) + 100_000
        while True:
            self.shape = np.maximum(np.ceil(span / self.cell).astype(np.int64), 1)
            i0 = self._cell_index(lo)
            i1 = self._cell_index(hi)
            nx = i1[:, 0] - i0[:, 0] + 1
            ny = i1[:, 1] - i0[:, 1] + 1
            counts = nx * ny
            if counts.sum() <= budget or np.all(self.shape == 1):
                break
            self.cell *= 2.0
        tri = np.repeat(np.arange(len(xy)), counts)
        # enumerate the cells covered by each triangle's bounding box
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        cx = np.repeat(i0[:, 0], counts) + offs % np.repeat(nx, counts)
        cy = np.repeat(i0[:, 1], counts) + offs // np.repeat(nx, counts)
        cid = cx * self.shape[1] + cy
        order = np.lexsort((tri, cid))
        self.cell_tris = tri[order]
        self.cell_ptr = np.searchsorted(cid[order], np.arange(self.shape[0] * self.shape[1] + 1))
        a, b, c, area = mesh._coeffs
        self._a, self._b, self._c, self._area = a, b, c, area

    def _cell_index(self, p):
        idx = np.floor((p - self.origin) / self.cell).astype(np.int64)
        return np.clip(idx, 0, self.shape - 1)

    def locate(self, points, tol=DEFAULT_LOCATE_TOL):
        """Vectorised location.  Returns (elements, weights); element -1 means not found."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        npts = len(pts)
        elems = np.full(npts, -1, dtype=np.int64)
        weights = np.zeros((npts, 3))
        if npts == 0:
            return elems, weights
        span = self.shape * self.cell
        rel = pts - self.origin
        inside_grid = np.all((rel >= -tol * self.cell) & (rel <= span + tol * self.cell), axis=1)
        ci = self._cell_index(pts)
        cid = ci[:, 0] * self.shape[1] + ci[:, 1]
        start = self.cell_ptr[cid]
        cnt = np.where(inside_grid, self.cell_ptr[cid + 1] - start, 0)
        pid = np.repeat(np.arange(npts), cnt)
        offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        tri = self.cell_tris[np.repeat(start, cnt) + offs]
        x = pts[pid, 0][:, None]
        y = pts[pid, 1][:, None]
        lam = (self._a[tri] + self._b[tri] * x + self._c[tri] * y) / (2.0 * self._area[tri])[:, None]
        ok = np.all(lam >= -tol, axis=1)
        pid, tri, lam = pid[ok], tri[ok], lam[ok]
        # lowest element index wins on shared edges and vertices
        order = np.lexsort((tri, pid))
        pid, tri, lam = pid[order], tri[order], lam[order]
        first = np.ones(len(pid), dtype=bool)
        first[1:] = pid[1:] != pid[:-1]
        pid, tri, lam = pid[first], tri[first], lam[first]
        lam = np.clip(lam, 0.0, 1.0)
        lam[lam < tol] = 0.0
        lam[lam > 1.0 - tol] = 1.0
        lam /= lam.sum(axis=1, keepdims=True)
        elems[pid] = tri
        weights[pid] = lam
        return elems, weights


def locate_point(mesh: TriMesh, p, tol: float = DEFAULT_LOCATE_TOL):
    """Find the element containing ``p``.

    Returns ``(element, weights)`` or ``None`` when ``p`` lies outside the mesh.
    """
    if tol < 0:
        raise InvalidParameter("tol must be non-negative")
    elems, w = mesh.locator.locate(np.asarray(p, dtype=float).reshape(1, 2), tol)
    if elems[0] < 0:
        return None
    return int(elems[0]), w[0]


def interpolate(mesh: TriMesh, values, points, tol=DEFAULT_LOCATE_TOL):
    """Barycentric interpolation of nodal ``values`` at ``points`` (NaN outside)."""
    elems, w = mesh.locator.locate(points, tol)
    values = np.asarray(values)
    out = np.full(len(elems), np.nan, dtype=np.result_type(values.dtype, float))
    ok = elems >= 0
    out[ok] = np.einsum("ij,ij->i", w[ok], values[mesh.triangles[elems[ok]]])
    return out


# -- text I/O -----------------------------------------------------------


def _tokens(stream):
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def read_mesh(stream: TextIO | str) -> TriMesh:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    lines = _tokens(stream)

    def expect(keyword):
        try:
            lineno, tok = next(lines)
        except StopIteration:
            raise ParseError(f"unexpected end of file, expected '{keyword}'") from None
        if tok[0] != keyword:
            raise ParseError(f"expected '{keyword}', got '{tok[0]}'", lineno)
        return lineno, tok

    lineno, tok = expect("mesh2d")
    if tok[1:] != ["1"]:
        raise ParseError("unsupported mesh2d version", lineno)
    lineno, tok = expect("nodes")
    n = _count(tok, lineno)
    nodes = np.empty((n, 2))
    for i in range(n):
        lineno, tok = _next_line(lines, "node")
        if len(tok) != 2:
            raise ParseError("node line needs 2 values", lineno)
        nodes[i] = _floats(tok, lineno)
    lineno, tok = expect("triangles")
    m = _count(tok, lineno)
    tris = np.empty((m, 3), dtype=np.int64)
    tags = np.empty(m, dtype=np.int64)
    for i in range(m):
        lineno, tok = _next_line(lines, "triangle")
        if len(tok) != 4:
            raise ParseError("triangle line needs 'i j k tag'", lineno)
        try:
            vals = [int(t) for t in tok]
        except ValueError:
            raise ParseError("triangle indices must be integers", lineno) from None
        if min(vals[:3]) < 0 or max(vals[:3]) >= n:
            raise ParseError(f"node index out of range (have {n} nodes)", lineno)
        tris[i] = vals[:3]
        tags[i] = vals[3]
        _, _, _, area = triangle_coefficients(nodes[tris[i]][None])
        if area[0] <= 0.0:
            raise ParseError("triangle has non-positive area (must be counter-clockwise)", lineno)
    for lineno, tok in lines:
        raise ParseError(f"trailing content '{tok[0]}'", lineno)
    return TriMesh(nodes, tris, tags)


def _next_line(lines, what):
    try:
        return next(lines)
    except StopIteration:
        raise ParseError(f"unexpected end of file while reading {what}s") from None


def _count(tok, lineno):
    try:
        n = int(tok[1])
    except (IndexError, ValueError):
        raise ParseError("missing count", lineno) from None
    if n < 0:
        raise ParseError("negative count", lineno)
    return n


def _floats(tok, lineno):
    try:
        return [float(t) for t in tok]
    except ValueError:
        raise ParseError("malformed number", lineno) from None


def write_mesh(mesh: TriMesh, stream: TextIO | None = None) -> str:
    out = io.StringIO()
    out.write("mesh2d 1\n")
    out.write(f"nodes {mesh.n_nodes}\n")
    for x, y in mesh.nodes:
        out.write(f"{x:.17g} {y:.17g}\n")
    out.write(f"triangles {mesh.n_triangles}\n")
    for (i, j, k), tag in zip(mesh.triangles, mesh.region_tag):
        out.write(f"{i} {j} {k} {tag}\n")
    text = out.getvalue()
    if stream is not None:
        stream.write(text)
    return text

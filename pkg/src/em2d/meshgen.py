"""Mesh generators.

Structured rectangles are built directly.  Everything else (disks, sectors,
graded scene meshes, meshes that embed contour nodes) is produced by laying
down point sets with a prescribed local spacing and triangulating them with
``scipy.spatial.Delaunay``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .contour import BoundaryContour
from .errors import InvalidGeometry, InvalidParameter
from .mesh import TriMesh, triangle_coefficients


def _check_box(box):
    x0, y0, x1, y1 = map(float, box)
    if not (x1 > x0 and y1 > y0):
        raise InvalidParameter("box must have positive extents")
    return x0, y0, x1, y1


def build_rect_mesh(box, h, tag=0) -> TriMesh:
    """Structured right-triangle grid, two triangles per cell."""
    x0, y0, x1, y1 = _check_box(box)
    if not h > 0:
        raise InvalidParameter("h must be positive")
    if h > min(x1 - x0, y1 - y0) * (1 + 1e-12):
        raise InvalidParameter("h must not exceed the smallest box extent")
    nx = max(1, int(math.ceil((x1 - x0) / h - 1e-9)))
    ny = max(1, int(math.ceil((y1 - y0) / h - 1e-9)))
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    n00 = idx[:-1, :-1].ravel()
    n10 = idx[1:, :-1].ravel()
    n01 = idx[:-1, 1:].ravel()
    n11 = idx[1:, 1:].ravel()
    tris = np.empty((2 * nx * ny, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([n00, n10, n11])
    tris[1::2] = np.column_stack([n00, n11, n01])
    return TriMesh(nodes, tris, np.full(len(tris), tag))


def grid_points(box, h):
    x0, y0, x1, y1 = _check_box(box)
    nx = max(1, int(math.ceil((x1 - x0) / h - 1e-9)))
    ny = max(1, int(math.ceil((y1 - y0) / h - 1e-9)))
    X, Y = np.meshgrid(np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1), indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def hex_points(box, h, origin=(0.0, 0.0)):
    """Hexagonal lattice with spacing ``h`` covering ``box``."""
    x0, y0, x1, y1 = _check_box(box)
    dy = h * math.sqrt(3) / 2
    j0 = int(math.floor((y0 - origin[1]) / dy)) - 1
    j1 = int(math.ceil((y1 - origin[1]) / dy)) + 1
    i0 = int(math.floor((x0 - origin[0]) / h)) - 1
    i1 = int(math.ceil((x1 - origin[0]) / h)) + 1
    J, I = np.meshgrid(np.arange(j0, j1 + 1), np.arange(i0, i1 + 1), indexing="ij")
    x = origin[0] + (I + 0.5 * (J % 2)) * h
    y = origin[1] + J * dy
    p = np.column_stack([x.ravel(), y.ravel()])
    keep = (p[:, 0] >= x0) & (p[:, 0] <= x1) & (p[:, 1] >= y0) & (p[:, 1] <= y1)
    return p[keep]


def ring_points(center, radius, h, phase=0.0):
    n = max(6, int(math.ceil(2 * math.pi * radius / h)))
    t = phase + 2 * math.pi * np.arange(n) / n
    return np.column_stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)])


def resample_polyline(nodes, h):
    """Points along a closed polyline with spacing <= h (original nodes kept)."""
    out = []
    m = len(nodes)
    for i in range(m):
        a, b = nodes[i], nodes[(i + 1) % m]
        n = max(1, int(math.ceil(np.hypot(*(b - a)) / h - 1e-9)))
        s = np.arange(n) / n
        out.append(a + s[:, None] * (b - a))
    return np.concatenate(out)


def offset_polyline(contour: BoundaryContour, depth):
    """Contour nodes moved by ``depth`` along the outward node normal.

    Positive depth moves outward, negative inward.  Corner nodes move along the
    bisector by ``depth / cos(half turn)`` so offset edges stay parallel.
    """
    n_seg = contour.outward_normals
    n_prev = np.roll(n_seg, 1, axis=0)
    s = n_seg + n_prev
    s /= np.linalg.norm(s, axis=1, keepdims=True)
    cosh = np.clip(np.sum(s * n_seg, axis=1), 0.2, 1.0)
    return contour.nodes + (depth / cosh)[:, None] * s


@dataclass
class RefineZone:
    """Disk of uniform spacing ``h`` with a geometric transition to the far spacing."""

    center: tuple
    radius: float
    h: float
    growth: float = 1.25


@dataclass
class PointLevel:
    points: np.ndarray
    spacing: float
    fixed: bool = False


def merge_levels(levels: Sequence[PointLevel], min_ratio=0.55):
    """Accept points level by level, fine first, dropping crowded ones.

    Fixed levels (embedded contour nodes) are always kept.
    """
    fixed = [lv.points for lv in levels if lv.fixed and len(lv.points)]
    accepted = [np.concatenate(fixed)] if fixed else []
    for lv in sorted((lv for lv in levels if not lv.fixed), key=lambda lv: lv.spacing):
        pts = lv.points
        if len(pts) == 0:
            continue
        if accepted:
            tree = cKDTree(np.concatenate(accepted))
            d, _ = tree.query(pts, k=1)
            pts = pts[d > min_ratio * lv.spacing]
        if len(pts):
            accepted.append(pts)
    return np.concatenate(accepted) if accepted else np.empty((0, 2))


def triangulate(points, classify: Callable | None = None, keep: Callable | None = None,
                boundary_flags: Callable | None = None) -> TriMesh:
    """Delaunay triangulation of ``points`` returned as a TriMesh.

    ``keep(centroids)`` filters triangles, ``classify(centroids)`` assigns
    region tags, ``boundary_flags(nodes)`` overrides the outer-boundary marker.
    """
    pts = np.asarray(points, dtype=float)
    # remove exact/near duplicates
    _, uniq = np.unique(np.round(pts / (1e-9 * max(np.ptp(pts), 1e-300))), axis=0, return_index=True)
    pts = pts[np.sort(uniq)]
    tri = Delaunay(pts).simplices.astype(np.int64)
    a, b, c, area = triangle_coefficients(pts[tri])
    flip = area < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    area = np.abs(area)
    scale = np.ptp(pts, axis=0).max()
    tri = tri[area > 1e-14 * scale**2]
    cent = pts[tri].mean(axis=1)
    if keep is not None:
        tri = tri[np.asarray(keep(cent), dtype=bool)]
        cent = pts[tri].mean(axis=1)
    used = np.unique(tri)
    remap = -np.ones(len(pts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    pts = pts[used]
    tri = remap[tri]
    tags = np.zeros(len(tri), dtype=np.int64) if classify is None else np.asarray(classify(cent), dtype=np.int64)
    flags = None if boundary_flags is None else boundary_flags(pts)
    return TriMesh(pts, tri, tags, flags)


def zone_points(zone: RefineZone, h_far):
    """Uniform disk lattice plus transition rings out to the far spacing."""
    cx, cy = zone.center
    R = zone.radius
    core = hex_points((cx - R, cy - R, cx + R, cy + R), zone.h, origin=(cx, cy))
    core = core[np.hypot(core[:, 0] - cx, core[:, 1] - cy) <= R]
    levels = [PointLevel(core, zone.h)]
    r, s = R, zone.h
    k = 0
    while s < h_far:
        r += s
        levels.append(PointLevel(ring_points((cx, cy), r, s, phase=0.5 * k * s / r), s))
        s *= zone.growth
        k += 1
    return levels, r


def build_scene_mesh(box, h_far, zones=(), embedded: Sequence[BoundaryContour] = (),
                     extra_levels: Sequence[PointLevel] = (), classify=None) -> TriMesh:
    """Graded mesh of ``box``.

    The far field is a uniform grid of spacing ``h_far`` aligned to the box
    (so PML layers stay structured).  ``zones`` are refined disks and
    ``embedded`` contours have their nodes inserted verbatim, which makes the
    mesh conformal to them.
    """
    x0, y0, x1, y1 = _check_box(box)
    levels = []
    far = grid_points(box, h_far)
    for z in zones:
        zl, r_out = zone_points(z, h_far)
        levels.extend(zl)
        far = far[np.hypot(far[:, 0] - z.center[0], far[:, 1] - z.center[1]) > r_out + 0.5 * h_far]
    levels.append(PointLevel(far, h_far))
    levels.extend(extra_levels)
    for c in embedded:
        spacing = float(c.segment_lengths.mean())
        levels.append(PointLevel(np.asarray(c.nodes), spacing, fixed=True))
    pts = merge_levels(levels)
    inside = (pts[:, 0] >= x0 - 1e-12) & (pts[:, 0] <= x1 + 1e-12) & (pts[:, 1] >= y0 - 1e-12) & (pts[:, 1] <= y1 + 1e-12)
    pts = pts[inside]
    tol = 1e-9 * max(x1 - x0, y1 - y0)

    def on_box(p):
        return (np.abs(p[:, 0] - x0) < tol) | (np.abs(p[:, 0] - x1) < tol) | (np.abs(p[:, 1] - y0) < tol) | (np.abs(p[:, 1] - y1) < tol)

    return triangulate(pts, classify=classify, boundary_flags=on_box)


def contour_band_levels(contour: BoundaryContour, h0, h1, growth=1.3, inward=True, outward=True,
                        others: Sequence[BoundaryContour] = ()):
    """Isotropic offset layers around ``contour`` with spacing growing from ``h0`` to ``h1``.

    The contour itself is resampled at ``h0`` and returned as a fixed level.
    """
    if not 0 < h0 <= h1 or growth <= 1:
        raise InvalidParameter("need 0 < h0 <= h1 and growth > 1")
    levels = [PointLevel(resample_polyline(contour.nodes, h0), h0, fixed=True)]
    for sign, on in ((-1.0, inward), (1.0, outward)):
        if not on:
            continue
        d, s = 0.0, h0
        while s < h1:
            d += 0.866 * s
            pts = resample_polyline(offset_polyline(contour, sign * d), s)
            pts = _clear_of(pts, contour, d, others, 0.5 * s)
            if sign < 0:
                pts = pts[contour.contains(pts)]
            else:
                pts = pts[~contour.contains(pts)]
            if len(pts) == 0:
                break
            levels.append(PointLevel(pts, s))
            s *= growth
    return levels


def build_region_mesh(outer: BoundaryContour, holes: Sequence[BoundaryContour] = (), h=None,
                      classify=None, boundary_layers=0, layer_growth=1.5, grade=None) -> TriMesh:
    """Mesh the region inside ``outer`` and outside ``holes``.

    Contour nodes become the mesh boundary nodes, so the result conforms to
    every contour.  ``boundary_layers`` adds thin offset copies of the
    contours, from a fraction of the segment length up to it.  ``grade``
    (a growth factor > 1) then adds isotropic offset layers whose spacing
    grows from the segment length to ``h``.
    """
    if h is None:
        h = float(outer.segment_lengths.mean())
    lo = outer.nodes.min(axis=0)
    hi = outer.nodes.max(axis=0)
    levels = [PointLevel(outer.nodes, h, fixed=True)] + [PointLevel(c.nodes, h, fixed=True) for c in holes]
    depth = 0.0
    contours = [outer, *holes]
    for c, sign in [(outer, -1.0)] + [(c, 1.0) for c in holes]:
        hseg = float(c.segment_lengths.mean())
        d = 0.0
        s = hseg / layer_growth**boundary_layers
        for _ in range(boundary_layers):
            d += s
            pts = resample_polyline(offset_polyline(c, sign * d), max(s, 0.5 * hseg))
            levels.append(PointLevel(_clear_of(pts, c, d, contours, 0.5 * s), s))
            s *= layer_growth
        if grade is not None:
            if grade <= 1:
                raise InvalidParameter("grade must exceed 1")
            s = hseg
            while s < h:
                d += 0.866 * s
                pts = resample_polyline(offset_polyline(c, sign * d), s)
                levels.append(PointLevel(_clear_of(pts, c, d, contours, 0.5 * s), s))
                s *= grade
        depth = max(depth, d)
    lattice = hex_points((lo[0], lo[1], hi[0], hi[1]), h, origin=tuple(outer.centroid))
    gap = depth + 0.45 * h
    keep = outer.contains(lattice) & (outer.distance(lattice) > gap)
    for c in holes:
        keep &= ~c.contains(lattice) & (c.distance(lattice) > gap)
    levels.append(PointLevel(lattice[keep], h))
    pts = merge_levels(levels)
    pts = pts[_in_region(pts, outer, holes, strict=False)]

    def keep_tri(cent):
        return _in_region(cent, outer, holes, strict=True)

    mesh = triangulate(pts, classify=classify, keep=keep_tri)
    _check_boundary_recovered(mesh, [outer, *holes])
    return mesh


def _clear_of(pts, own, depth, contours, margin):
    """Drop offset points that folded over or came close to another contour."""
    keep = own.distance(pts) > 0.7 * depth
    for c in contours:
        if c is not own:
            keep &= c.distance(pts) > margin
    return pts[keep]


def _in_region(p, outer, holes, strict):
    inside = outer.contains(p)
    if strict:
        for c in holes:
            inside &= ~c.contains(p)
        return inside
    tol = 1e-9 * outer.perimeter
    inside |= outer.distance(p) < tol
    for c in holes:
        inside &= ~c.contains(p) | (c.distance(p) < tol)
    return inside


def _check_boundary_recovered(mesh: TriMesh, contours):
    tree = cKDTree(mesh.nodes)
    bset = {tuple(e) for e in mesh.boundary_edges.tolist()}
    for c in contours:
        d, idx = tree.query(c.nodes)
        if d.max() > 1e-12 * c.perimeter:
            raise InvalidGeometry("contour node missing from region mesh")
        for i in range(c.m):
            a, b = sorted((int(idx[i]), int(idx[(i + 1) % c.m])))
            if (a, b) not in bset:
                raise InvalidGeometry("region mesh does not recover contour segment; refine h")


def build_disk_mesh(contour: BoundaryContour, h=None, **kw) -> TriMesh:
    """Interior mesh of a closed contour whose boundary nodes are the contour nodes."""
    return build_region_mesh(contour, (), h, **kw)


def build_annulus_mesh(outer: BoundaryContour, inner: BoundaryContour, h=None, inner_tag=None, **kw) -> TriMesh:
    """Mesh of the whole disk with the inner contour embedded; the inner region gets ``inner_tag``."""
    if inner_tag is None:
        return build_region_mesh(outer, (inner,), h, **kw)

    def classify(cent):
        return np.where(inner.contains(cent), inner_tag, 0)

    ring = build_region_mesh(outer, (inner,), h, **kw)
    core = build_region_mesh(inner, (), h, **kw)
    return merge_meshes([ring, core], [0, inner_tag])


def merge_meshes(meshes: Sequence[TriMesh], tags=None) -> TriMesh:
    """Glue meshes that share nodes on common boundaries."""
    nodes = np.concatenate([m.nodes for m in meshes])
    scale = max(np.ptp(nodes, axis=0).max(), 1e-300)
    tree = cKDTree(nodes)
    pairs = tree.query_pairs(1e-10 * scale, output_type="ndarray")
    parent = np.arange(len(nodes))
    for i, j in sorted(map(tuple, pairs.tolist()), key=lambda p: p[1]):
        ri = parent[i]
        while parent[ri] != ri:
            ri = parent[ri]
        parent[j] = ri
    # compress
    for i in range(len(parent)):
        r = parent[i]
        while parent[r] != r:
            r = parent[r]
        parent[i] = r
    uniq, inv = np.unique(parent, return_inverse=True)
    tris, tg = [], []
    off = 0
    for k, m in enumerate(meshes):
        tris.append(inv[m.triangles + off])
        tg.append(m.region_tag if tags is None else np.full(m.n_triangles, tags[k]))
        off += m.n_nodes
    return TriMesh(nodes[uniq], np.concatenate(tris), np.concatenate(tg))


def build_sector_mesh(contour: BoundaryContour, h=None, **kw) -> TriMesh:
    return build_region_mesh(contour, (), h, **kw)

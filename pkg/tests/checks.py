"""Numerical experiments shared by the unit and acceptance tests."""

import math

import numpy as np
from scipy.constants import c as C0
from scipy.spatial import cKDTree
from scipy.special import hankel2

from em2d.fem import MaterialField, pml_for_box, solve_dirichlet
from em2d.meshgen import build_rect_mesh


def manufactured_errors(ns, k0=2.0):
    """RMS nodal error of the P1 Helmholtz solve of sin(pi x) sin(2 pi y) on the unit square."""
    al, be = math.pi, 2 * math.pi
    exact = lambda x, y: np.sin(al * x) * np.sin(be * y)
    src = lambda x, y: (al**2 + be**2 - k0**2) * exact(x, y)
    errs = []
    for n in ns:
        m = build_rect_mesh((0, 0, 1, 1), 1 / n)
        u = solve_dirichlet(m, MaterialField(), k0 * C0, exact, source=src)
        errs.append(float(np.sqrt(np.mean(np.abs(u - exact(*m.nodes.T)) ** 2))))
    return np.array(errs)


def _line_source(half, layers, h):
    k = 2 * math.pi  # one metre wavelength
    outer, pml = pml_for_box((-half, -half, half, half), h, layers)
    m = build_rect_mesh(outer, h)
    r = np.hypot(*m.nodes.T)
    fixed = m.boundary_node_flags | (r < 0.15)
    exact = lambda x, y: hankel2(0, k * np.hypot(x, y))
    u = solve_dirichlet(m, MaterialField(), k * C0, lambda x, y: np.where(np.hypot(x, y) < 0.5, exact(x, y), 0),
                        pml=pml, fixed=fixed)
    return m, u


def pml_reflection(layers=10, n_per_lambda=20):
    """Largest relative change a PML around a 2 m box causes versus a 6 m box on the same grid.

    Both runs share nodes and dispersion inside the small box, so the
    difference is the wave returned by the nearby absorber.
    """
    h = 1 / n_per_lambda
    m, u = _line_source(1.0, layers, h)
    big, U = _line_source(3.0, 3 * layers, h)
    dist, idx = cKDTree(big.nodes).query(m.nodes)
    r = np.hypot(*m.nodes.T)
    sel = (np.max(np.abs(m.nodes), axis=1) <= 1.0 + 1e-9) & (r > 0.3)
    assert dist[sel].max() < 1e-9
    ref = U[idx[sel]]
    return float(np.max(np.abs(u[sel] - ref) / np.abs(ref)))


def random_pair(rng):
    """A random Delaunay mesh of a rectangle and a random star-shaped contour inside it."""
    from scipy.spatial import Delaunay

    from em2d.contour import BoundaryContour
    from em2d.mesh import TriMesh

    w, hgt = rng.uniform(1.0, 3.0, size=2)
    n_side = int(rng.integers(4, 12))
    edge = np.linspace(0, 1, n_side + 1)[:-1]
    frame = np.concatenate([
        np.c_[edge * w, 0 * edge], np.c_[w + 0 * edge, edge * hgt],
        np.c_[w - edge * w, hgt + 0 * edge], np.c_[0 * edge, hgt - edge * hgt]])
    inner = rng.uniform([0.02 * w, 0.02 * hgt], [0.98 * w, 0.98 * hgt], size=(int(rng.integers(30, 300)), 2))
    pts = np.concatenate([frame, inner])
    tri = Delaunay(pts).simplices
    a = pts[tri]
    area = 0.5 * ((a[:, 1, 0] - a[:, 0, 0]) * (a[:, 2, 1] - a[:, 0, 1])
                  - (a[:, 2, 0] - a[:, 0, 0]) * (a[:, 1, 1] - a[:, 0, 1]))
    tri = np.where((area < 0)[:, None], tri[:, [0, 2, 1]], tri)
    mesh = TriMesh(pts, tri[np.abs(area) > 1e-12 * w * hgt])
    m = int(rng.integers(8, 120))
    th = np.sort(rng.uniform(0, 2 * np.pi, m))
    th = th[np.diff(np.r_[th, th[0] + 2 * np.pi]) > 1e-6]
    r0 = 0.4 * min(w, hgt)
    r = r0 * rng.uniform(0.3, 1.0, len(th))
    c = np.array([w, hgt]) / 2
    contour = BoundaryContour(c + np.c_[r * np.cos(th), r * np.sin(th)])
    return mesh, contour

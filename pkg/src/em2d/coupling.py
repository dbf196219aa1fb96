"""Interpolation operator carrying PDE nodal values to contour nodes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, TextIO

import numpy as np
import scipy.sparse as sps

from .contour import BoundaryContour
from .errors import CouplingError, InvalidParameter
from .fem import PmlSpec
from .mesh import DEFAULT_LOCATE_TOL, TriMesh


class EdgeWeights(NamedTuple):
    l1: float
    l2: float


@dataclass(frozen=True, eq=False)
class ConnectionMatrix:
    """``T`` (m x m_s) acting on the gathered PDE values ``E[column_map]``."""

    T: sps.csr_matrix
    column_map: np.ndarray
    contour: BoundaryContour
    mesh: TriMesh

    @property
    def m(self):
        return self.T.shape[0]

    @property
    def m_s(self):
        return self.T.shape[1]

    def global_matrix(self, n=None):
        """``T`` scattered to all ``n`` PDE nodes (m x n)."""
        n = self.mesh.n_nodes if n is None else n
        coo = self.T.tocoo()
        return sps.csr_matrix((coo.data, (coo.row, self.column_map[coo.col])), shape=(self.m, n))


def build_connection_matrix(mesh: TriMesh, contour: BoundaryContour, pml: PmlSpec | None = None,
                            tol=DEFAULT_LOCATE_TOL) -> ConnectionMatrix:
    """Locate every contour node in ``mesh`` and collect its barycentric weights.

    Columns are numbered in order of first encounter while scanning contour
    nodes and, within a triangle, its vertices in stored order.
    """
    elems, w = mesh.locator.locate(contour.nodes, tol)
    missing = np.flatnonzero(elems < 0)
    if len(missing):
        i = int(missing[0])
        raise CouplingError(f"contour node {i} at {tuple(contour.nodes[i])} lies outside the PDE mesh", i)
    if pml is not None:
        inside = pml.in_pml(contour.nodes)
        if inside.any():
            i = int(np.flatnonzero(inside)[0])
            raise CouplingError(f"contour node {i} lies inside the PML", i)
    verts = mesh.triangles[elems]
    local = {}
    rows, cols, vals = [], [], []
    for i in range(contour.m):
        for j in range(3):
            if w[i, j] == 0.0:
                continue
            g = int(verts[i, j])
            if g not in local:
                local[g] = len(local)
            rows.append(i)
            cols.append(local[g])
            vals.append(w[i, j])
    cmap = np.fromiter(local.keys(), dtype=np.int64, count=len(local))
    T = sps.csr_matrix((vals, (rows, cols)), shape=(contour.m, len(local)))
    return ConnectionMatrix(T, cmap, contour, mesh)


def interp_1d_weights(r1, r2, r, tol=1e-9) -> EdgeWeights:
    """Linear weights of the endpoints ``r1``, ``r2`` for a point ``r`` on the segment."""
    r1, r2, r = (np.asarray(v, dtype=float) for v in (r1, r2, r))
    length = float(np.hypot(*(r2 - r1)))
    if length <= 0:
        raise InvalidParameter("degenerate segment")
    u = r2 - r1
    # each weight measured from the opposite endpoint so both ends come out exact
    w2 = float(np.dot(r - r1, u)) / length**2
    w1 = float(np.dot(r2 - r, u)) / length**2
    off = abs(float(u[0] * (r - r1)[1] - u[1] * (r - r1)[0])) / length
    if off > tol * length or w2 < -tol or w1 < -tol:
        raise InvalidParameter("point is not on the segment")
    w1, w2 = max(w1, 0.0), max(w2, 0.0)
    s = w1 + w2
    return EdgeWeights(w1 / s, w2 / s)


def detect_conformal(T: ConnectionMatrix, tol=1e-12) -> bool:
    """True when every row selects exactly one PDE node with weight 1."""
    A = T.T.tocsr()
    A.eliminate_zeros()
    nnz = np.diff(A.indptr)
    return bool(np.all(nnz == 1) and np.all(np.abs(A.data - 1.0) <= tol))


def apply_connection(T: ConnectionMatrix, E) -> np.ndarray:
    """Contour values ``T E[column_map]``."""
    E = np.asarray(E)
    if E.ndim != 1 or len(E) <= T.column_map.max(initial=-1):
        raise InvalidParameter("PDE vector is too short for this connection matrix")
    return T.T @ E[T.column_map]


def dump_connection(T: ConnectionMatrix, stream: TextIO | None = None) -> str:
    """Coordinate listing ``i j value`` with global PDE column indices."""
    coo = T.T.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{coo.row[k]} {T.column_map[coo.col[k]]} {coo.data[k]:.17g}" for k in order]
    text = "\n".join(lines) + "\n"
    if stream is not None:
        stream.write(text)
    return text

"""Surface admittance operators of penetrable inclusions.

An inclusion is replaced by background medium plus a surface current
``J = Ys E`` on its contour.  ``Ys`` is the difference of two interior
Dirichlet-to-Neumann maps (true filling minus background) divided by
``j w mu0``.  Both maps are Galerkin-tested with the nodal hat functions,
so ``Ys`` maps nodal E to the tested current ``int f_p J``.
"""

from __future__ import annotations

import hashlib
import struct
import threading
import dataclasses
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from scipy import special
from scipy.constants import mu_0 as MU0

from . import bem
from .contour import BoundaryContour, subdivide
from .errors import InteriorResonance, InvalidGeometry, InvalidParameter, NumericalFailure, ParseError
from .fem import Material, MaterialField, assemble_global
from .mesh import TriMesh
from .meshgen import build_region_mesh

# imaginary permittivity added to the PDE filling inside SIE contours
FILL_LOSS = 0.1


def dtn_circle_analytic(radius, material: Material, omega, m_max):
    """Modal admittances ``(1/mu_r) k J_m'(ka) / J_m(ka)`` for m = 0..m_max."""
    if radius <= 0:
        raise InvalidParameter("radius must be positive")
    if m_max < 0:
        raise InvalidParameter("m_max must be non-negative")
    k = material.k(omega)
    z = k * radius
    m = np.arange(m_max + 1)
    # ratios from exponentially scaled Bessel functions stay finite for lossy k
    jm = special.jve(m, z)
    jp = 0.5 * (special.jve(m - 1, z) - special.jve(m + 1, z))
    scale = np.maximum(np.abs(jp), np.abs(jm))
    bad = np.abs(jm) <= 1e-8 * np.maximum(scale, 1e-300)
    if np.any(bad):
        raise InteriorResonance(f"k*a is at a Bessel zero for mode m={int(m[bad][0])}")
    return k * jp / jm / material.mu_r


# ---------------------------------------------------------------------------
# inclusion descriptions


@dataclass(frozen=True, eq=False)
class Inclusion:
    """Homogeneous region inside ``contour`` minus the (nested) ``holes``."""

    contour: BoundaryContour
    material: Material
    holes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "holes", tuple(self.holes))
        for i, h in enumerate(self.holes):
            c = h.contour
            if self.contour.intersects(c) or not np.all(self.contour.contains(c.nodes)):
                raise InvalidGeometry("hole contour must lie strictly inside its parent")
            for g in self.holes[i + 1:]:
                if c.overlaps(g.contour):
                    raise InvalidGeometry("hole contours overlap")

    def materials(self):
        out = [self.material]
        for h in self.holes:
            out.extend(h.materials())
        return out

    def region_of(self, points):
        """Material of each point (None outside the contour)."""
        pts = np.atleast_2d(points)
        res = np.full(len(pts), None, dtype=object)
        inside = self.contour.contains(pts)
        res[inside] = self.material
        for h in self.holes:
            sub = h.region_of(pts)
            hit = sub != None  # noqa: E711
            res[hit] = sub[hit]
        return res


def layered_circle(center, radii, materials, n):
    """Concentric inclusion; ``radii`` outermost first, ``n`` nodes per circle."""
    from .contour import circle_contour

    if np.isscalar(n):
        n = [n] * len(radii)
    inc = None
    for r, mat, m in reversed(list(zip(radii, materials, n))):
        c = circle_contour(center, r, n=m)
        inc = Inclusion(c, mat, () if inc is None else (inc,))
    return inc


# ---------------------------------------------------------------------------
# DtN backends


@dataclass(eq=False)
class DtnMatrix:
    matrix: np.ndarray
    contour: BoundaryContour
    material: Material
    omega: float
    backend: str = "bem"

    def modal_eigenvalues(self, modes):
        """Rayleigh quotients on discrete Fourier modes ``cos(m theta_i)``."""
        c = self.contour
        th = np.arctan2(*(c.nodes - c.centroid).T[::-1])
        G = c.gram_matrix()
        out = []
        for m in modes:
            v = np.cos(m * th)
            out.append((v @ self.matrix @ v) / (v @ G @ v))
        return np.array(out)


@dataclass(eq=False)
class RegionDtn:
    """BEM model of one homogeneous region with its holes already eliminated.

    Every curve is subdivided ``refine`` times; ``full`` is the fine DtN on
    all curves of the region (outer first, then each hole clockwise),
    ``dtn_fine`` its reduction to the fine outer curve and ``dtn`` the
    Galerkin restriction ``P^T dtn_fine P`` to the coarse nodal basis.
    """

    inclusion: Inclusion
    omega: float
    boundary: bem.Boundary
    ops: bem.LayerOperators
    full: np.ndarray
    children: list
    dtn_fine: np.ndarray
    dtn: np.ndarray
    P: sps.csr_matrix
    _holes: list = field(default_factory=list)

    @property
    def m_fine(self):
        return self.P.shape[0]

    def _hole_system(self):
        mf = self.m_fine
        A = self.full[mf:, mf:].copy()
        for ch, sl, perm in self._holes:
            A[np.ix_(sl, sl)] += ch.dtn_fine[np.ix_(perm, perm)]
        return A

    def _fine_traces(self, uf):
        """Fine traces on every hole (each in its own CCW order) from the fine outer trace."""
        if not self.children:
            return []
        mf = self.m_fine
        w = np.linalg.solve(self._hole_system(), -self.full[mf:, :mf] @ uf)
        out = []
        for ch, sl, perm in self._holes:
            v = np.empty(len(perm), dtype=complex)
            v[perm] = w[sl]
            out.append(v)
        return out

    def _field_fine(self, uf, pts):
        vals = np.zeros(len(pts), dtype=complex)
        dist = np.full(len(pts), np.inf)
        subs = self._fine_traces(uf)
        in_hole = np.zeros(len(pts), dtype=bool)
        for (ch, sl, perm), v in zip(self._holes, subs):
            sel = ch.inclusion.contour.contains(pts)
            if sel.any():
                vals[sel], dist[sel] = ch._field_fine(v, pts[sel])
            in_hole |= sel
        own = ~in_hole
        if own.any():
            ufull = np.concatenate([uf] + [v[_ccw_to_cw(len(v))] for v in subs])
            q = np.linalg.solve(self.ops.V, (0.5 * self.ops.M + self.ops.D) @ ufull)
            vals[own], d = bem.evaluate_potential(self.boundary, self.ops.k, ufull, q, pts[own])
            dist[own] = np.minimum(dist[own], d)
        return vals, dist

    def field(self, u, points):
        """Total field at ``points`` from the coarse outer trace ``u``.

        Returns (values, distance to the nearest boundary of the region that
        contains each point).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self._field_fine(self.P @ np.asarray(u, dtype=complex), pts)

    def flux(self, u):
        """Normal derivative ``dE/dn`` at the fine outer nodes."""
        uf = self.P @ np.asarray(u, dtype=complex)
        ufull = np.concatenate([uf] + [v[_ccw_to_cw(len(v))] for v in self._fine_traces(uf)])
        q = np.linalg.solve(self.ops.V, (0.5 * self.ops.M + self.ops.D) @ ufull)
        return q[: self.m_fine]


def _ccw_to_cw(m):
    """Position i of the clockwise node list holds CCW node ``[0, m-1, ..., 1][i]``."""
    return np.concatenate([[0], np.arange(m - 1, 0, -1)])


def _restrict(P, A):
    return np.asarray((P.T @ (P.T @ A.T).T))


def _merged(inc: Inclusion) -> Inclusion:
    """Drop interfaces between equal materials; the hole's own holes move up to the parent."""
    holes = []
    for h in inc.holes:
        h = _merged(h)
        holes.extend(h.holes if h.material == inc.material else [h])
    if len(holes) == len(inc.holes) and all(a is b for a, b in zip(holes, inc.holes)):
        return inc
    return Inclusion(inc.contour, inc.material, tuple(holes))


def build_region(inclusion: Inclusion, omega, q=4, refine=2) -> RegionDtn:
    """Recursive BEM DtN of a (possibly layered) inclusion."""
    inclusion = _merged(inclusion)
    children = [build_region(h, omega, q, refine) for h in inclusion.holes]
    fine, P = subdivide(inclusion.contour, refine)
    curves = [fine.nodes] + [ch.boundary.curves[0][_ccw_to_cw(ch.m_fine)] for ch in children]
    bd = bem.Boundary(curves)
    ops = bem.layer_operators(bd, inclusion.material.k(omega), q_far=q)
    full = bem.dtn_from_operators(ops, inclusion.material.mu_r)
    mf = fine.m
    holes = []
    for ch, o0, o1 in zip(children, bd.offsets[1:-1], bd.offsets[2:]):
        holes.append((ch, np.arange(o0 - mf, o1 - mf), _ccw_to_cw(o1 - o0)))
    reg = RegionDtn(inclusion, omega, bd, ops, full, children, full, full, P, holes)
    if children:
        A = reg._hole_system()
        d = full[:mf, :mf] - full[:mf, mf:] @ np.linalg.solve(A, full[mf:, :mf])
        reg.dtn_fine = 0.5 * (d + d.T)
    reg.dtn = _restrict(P, reg.dtn_fine)
    return reg


def assemble_dtn_bem(contour: BoundaryContour, material: Material, omega, q=4, refine=2) -> DtnMatrix:
    """Interior DtN of a homogeneous region bounded by ``contour``."""
    reg = build_region(Inclusion(contour, material), omega, q, refine)
    return DtnMatrix(reg.dtn, contour, material, omega, "bem")


def trace_prolongation(contour: BoundaryContour, points, tol=1e-9):
    """Interpolation weights of contour nodal values at ``points`` lying on the contour."""
    d, seg, t = contour.nearest(points)
    if d.max(initial=0.0) > tol * contour.perimeter:
        raise InvalidGeometry("boundary node does not lie on the contour")
    m = contour.m
    rows = np.repeat(np.arange(len(seg)), 2)
    cols = np.column_stack([seg, (seg + 1) % m]).ravel()
    vals = np.column_stack([1 - t, t]).ravel()
    return sps.csr_matrix((vals, (rows, cols)), shape=(len(seg), m))


def assemble_dtn_fem_schur(contour: BoundaryContour, mesh: TriMesh, material, omega) -> DtnMatrix:
    """Schur complement of the interior FEM matrix onto the contour's nodal basis.

    Mesh boundary nodes must lie on the contour; nodes between contour nodes
    are slaved to the linear interpolant, so the boundary may be finer than
    the contour.  ``material`` is a Material or a MaterialField.
    """
    fieldmat = material if isinstance(material, MaterialField) else MaterialField({}, material)
    A = assemble_global(mesh, fieldmat, omega).tocsr()
    bnd = np.flatnonzero(mesh.boundary_node_flags)
    Pb = trace_prolongation(contour, mesh.nodes[bnd])
    inner = np.setdiff1d(np.arange(mesh.n_nodes), bnd)
    Ab = (A[:, bnd] @ Pb).tocsr()
    Aib = Ab[inner].toarray()
    Abb = (Pb.T @ Ab[bnd]).toarray()
    try:
        lu = spla.splu(A[inner][:, inner].tocsc())
    except RuntimeError as exc:
        raise InteriorResonance("interior FEM matrix is singular (interior eigenvalue)") from exc
    X = lu.solve(Aib)
    if not np.all(np.isfinite(X)):
        raise InteriorResonance("interior FEM matrix is singular (interior eigenvalue)")
    S = Abb - Aib.T @ X
    mat = material if isinstance(material, Material) else None
    return DtnMatrix(0.5 * (S + S.T), contour, mat, omega, "fem")


def fem_trace_mesh(contour: BoundaryContour, h=None, refine=16, grade=1.25, holes=(), classify=None):
    """Interior mesh for the FEM backend: boundary subdivided ``refine`` times, graded to ``h``."""
    if h is None:
        h = float(contour.segment_lengths.mean())
    fine, _ = subdivide(contour, refine)
    fine_holes = [subdivide(c, refine)[0] for c in holes]
    return build_region_mesh(fine, fine_holes, h=h, grade=grade, classify=classify)


# ---------------------------------------------------------------------------
# admittance operator and reuse cache


def _material_tag(m: Material):
    # round away last-bit noise from evaluating graded profiles at translated points
    z = complex(m.eps_r)
    u = complex(m.mu_r)
    return f"{z.real:.12g},{z.imag:.12g};{u.real:.12g},{u.imag:.12g}"


def _frame(c: BoundaryContour):
    """Origin and rotation of the frame attached to the first segment."""
    t = c.tangents[0]
    return c.nodes[0], np.array([[t[0], t[1]], [-t[1], t[0]]])


def shape_key(inclusion: Inclusion, background: Material, omega, rel=1e-9):
    """Hash identifying an inclusion up to rigid motion (with node numbering kept).

    Coordinates of every contour are expressed in the frame of the outer
    contour's first segment and quantized at ``rel`` of its diameter.
    """
    c = inclusion.contour
    o, R = _frame(c)
    scale = float(np.ptp((c.nodes - o) @ R.T, axis=0).max())
    h = hashlib.sha256()

    def feed(inc):
        q = np.round(((inc.contour.nodes - o) @ R.T) / (rel * scale)).astype(np.int64)
        h.update(struct.pack("<q", len(q)))
        h.update(q.tobytes())
        h.update(_material_tag(inc.material).encode())
        h.update(struct.pack("<q", len(inc.holes)))
        for sub in inc.holes:
            feed(sub)

    feed(inclusion)
    h.update(f"{_material_tag(background)}:{float(omega)!r}:{scale:.12g}".encode())
    return h.hexdigest()


@dataclass(eq=False)
class DsaoMatrix:
    """Admittance operator of one inclusion.

    ``Ys`` is taken against the true background and defines the equivalent
    current.  ``Yc`` is taken against the PDE filling inside the contour
    (equal to ``Ys`` unless a lossy fill is used) and enters the coupled
    system.
    """

    Ys: np.ndarray
    contour: BoundaryContour
    key: str
    omega: float
    region: RegionDtn | None = None
    dtn_bg: np.ndarray | None = None
    Yc: np.ndarray | None = None
    fill: Material | None = None
    placement: tuple | None = None  # (A, b) mapping p -> p @ A + b into the region's frame

    def __post_init__(self):
        if self.Yc is None:
            self.Yc = self.Ys

    def placed(self, contour: BoundaryContour) -> DsaoMatrix:
        """Same operator attached to a congruent copy of the contour."""
        o, R = _frame(contour)
        o_ref, R_ref = _frame(self.contour)
        A = R.T @ R_ref
        return dataclasses.replace(self, contour=contour, placement=(A, o_ref - o @ A))

    def local(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.placement is None:
            return pts
        A, b = self.placement
        return pts @ A + b

    def region_of(self, points):
        """Material at each point (None outside the inclusion)."""
        return self.region.inclusion.region_of(self.local(points))

    def interior_field(self, trace, points):
        """Field inside the contour from its boundary trace; returns (values, distance to boundary)."""
        return self.region.field(trace, self.local(points))

    @property
    def m(self):
        return self.Ys.shape[0]

    @property
    def dtn_in(self):
        return self.dtn_bg + 1j * self.omega * MU0 * self.Ys


class DsaoCache:
    """Thread-safe read-through table of admittance operators keyed by shape."""

    def __init__(self):
        self._lock = threading.Lock()
        self._table = {}
        self.hits = 0
        self.assemblies = 0

    def get_or_build(self, key, build):
        with self._lock:
            if key in self._table:
                self.hits += 1
                return self._table[key]
            value = build()
            self.assemblies += 1
            self._table[key] = value
            return value

    def clear(self):
        with self._lock:
            self._table.clear()
            self.hits = 0
            self.assemblies = 0

    def __len__(self):
        return len(self._table)


default_cache = DsaoCache()


def interior_fill(background: Material, loss=FILL_LOSS) -> Material:
    """Lossy copy of ``background`` used for PDE elements inside SIE contours.

    The loss removes the real Dirichlet resonances of the filled disk, which
    the nonconformal discretization otherwise shifts onto nearby frequencies.
    """
    return Material(background.eps_r - 1j * loss * abs(background.eps_r), background.mu_r)


def assemble_dsao(inclusion, mat_in: Material | None = None, mat_bg: Material | None = None, omega=None,
                  backend="bem", cache: DsaoCache | None = None, mesh: TriMesh | None = None, q=4,
                  refine=2, fill: Material | None = None) -> DsaoMatrix:
    """``Ys = (Dtn_in - Dtn_bg) / (j w mu0)`` on the outer contour.

    ``inclusion`` is an Inclusion, or a BoundaryContour together with
    ``mat_in``.  With ``backend="fem"`` a conforming interior ``mesh`` is
    required (tags select materials for layered fillings via a MaterialField
    passed as ``mat_in``).  ``fill`` is the material the PDE mesh carries
    inside the contour when it differs from ``mat_bg``.
    """
    if mat_bg is None or omega is None:
        raise InvalidParameter("background material and omega are required")
    if isinstance(inclusion, BoundaryContour):
        if not isinstance(mat_in, Material):
            raise InvalidParameter("mat_in must be a Material for a bare contour")
        inclusion = Inclusion(inclusion, mat_in)
    c = inclusion.contour
    if backend not in ("bem", "fem"):
        raise InvalidParameter(f"unknown backend {backend!r}")
    if backend == "fem" and mesh is None:
        raise InvalidParameter("fem backend needs an interior mesh")
    jwm = 1j * omega * MU0
    if fill == mat_bg:
        fill = None

    def dtn_of(mat):
        # both sides of a difference come from the same backend so their errors cancel
        if backend == "bem":
            return build_region(Inclusion(c, mat), omega, q, refine).dtn
        return assemble_dtn_fem_schur(c, mesh, mat, omega).matrix

    def build():
        if backend == "bem":
            reg = build_region(inclusion, omega, q, refine)
            dtn_in = reg.dtn
        else:
            fill_in = mat_in if isinstance(mat_in, MaterialField) else MaterialField({}, inclusion.material)
            reg = None
            dtn_in = assemble_dtn_fem_schur(c, mesh, fill_in, omega).matrix
        dtn_bg = dtn_of(mat_bg)
        diff = dtn_in - dtn_bg
        # exact zero for null contrast
        if not np.any([m != mat_bg for m in inclusion.materials()]):
            diff = np.zeros_like(diff)
        Ys = diff / jwm
        Yc = None
        if fill is not None:
            Yc = (dtn_in - dtn_of(fill)) / jwm
        for Y in (Ys, Yc):
            if Y is None:
                continue
            if not np.all(np.isfinite(Y)):
                raise NumericalFailure("non-finite admittance operator")
            Y.setflags(write=False)
        return DsaoMatrix(Ys, c, key, omega, reg, dtn_bg, Yc, fill)

    key = shape_key(inclusion, mat_bg, omega) + f":{q}:{refine}"
    if fill is not None:
        key += ":" + _material_tag(fill)
    if cache is None or backend != "bem":
        return build()
    out = cache.get_or_build(key, build)
    return out if out.contour is c else out.placed(c)


def nested_equivalence(outer: BoundaryContour, inner: BoundaryContour, mat_coat: Material, mat_inner: Material,
                       mat_bg: Material, omega, cache: DsaoCache | None = None, fill: Material | None = None) -> DsaoMatrix:
    """Single outer-contour admittance operator of a two-layer inclusion."""
    if outer.intersects(inner) or not np.all(outer.contains(inner.nodes)):
        raise InvalidGeometry("inner contour must lie strictly inside the outer contour")
    inc = Inclusion(outer, mat_coat, (Inclusion(inner, mat_inner),))
    return assemble_dsao(inc, mat_bg=mat_bg, omega=omega, cache=cache, fill=fill)


def equivalent_current(dsao: DsaoMatrix, E1):
    """Nodal surface-current coefficients ``G^-1 Ys E1`` (A/m)."""
    E1 = np.asarray(E1)
    if E1.shape != (dsao.m,):
        raise InvalidParameter("trace length does not match the contour")
    return np.linalg.solve(dsao.contour.gram_matrix(), dsao.Ys @ E1)


# ---------------------------------------------------------------------------
# binary dump


_MAGIC = b"dsao1"


def dump_dsao(Ys, stream: BinaryIO | None = None) -> bytes:
    Ys = np.asarray(Ys, dtype=complex)
    m = Ys.shape[0]
    if Ys.shape != (m, m):
        raise InvalidParameter("admittance matrix must be square")
    data = _MAGIC + struct.pack("<q", m) + Ys.astype("<c16").tobytes(order="C")
    if stream is not None:
        stream.write(data)
    return data


def load_dsao(stream: BinaryIO | bytes) -> np.ndarray:
    raw = stream if isinstance(stream, (bytes, bytearray)) else stream.read()
    if raw[:5] != _MAGIC:
        raise ParseError("bad admittance dump header")
    (m,) = struct.unpack("<q", raw[5:13])
    body = raw[13:]
    if m < 0 or len(body) != 16 * m * m:
        raise ParseError("truncated admittance dump")
    return np.frombuffer(body, dtype="<c16").reshape(m, m).astype(complex)

"""Galerkin P1 assembly of the scattered-field TM Helmholtz problem with a PML.

Time convention is ``exp(+j w t)``; lossy media carry ``Im(eps_r) <= 0`` and
outgoing waves behave like ``H0^(2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sps
from scipy.constants import c as C0
from scipy.constants import epsilon_0 as EPS0
from scipy.constants import mu_0 as MU0

from .errors import InvalidParameter
from .mesh import TriMesh

# 3-point symmetric rule on the reference triangle (barycentric, weight 1/3 each)
GAUSS3 = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])


def wavenumber(omega):
    return omega / C0


@dataclass(frozen=True)
class Material:
    eps_r: complex = 1.0
    mu_r: complex = 1.0

    def __post_init__(self):
        object.__setattr__(self, "eps_r", complex(self.eps_r))
        object.__setattr__(self, "mu_r", complex(self.mu_r))
        if self.eps_r.imag > 0 or self.mu_r.imag > 0:
            raise InvalidParameter("passive media need Im(eps_r) <= 0 and Im(mu_r) <= 0")
        if self.mu_r == 0:
            raise InvalidParameter("mu_r must be nonzero")

    @classmethod
    def conductor(cls, sigma, frequency, eps_r=1.0, mu_r=1.0):
        omega = 2 * math.pi * frequency
        return cls(eps_r - 1j * sigma / (omega * EPS0), mu_r)

    def conductivity(self, omega):
        return -self.eps_r.imag * omega * EPS0

    def k(self, omega):
        """Wavenumber in the medium (principal root, Im <= 0)."""
        kk = wavenumber(omega) * np.sqrt(self.eps_r * self.mu_r)
        return complex(kk.real, -abs(kk.imag))

    def skin_depth(self, omega):
        return math.sqrt(2.0 / (omega * MU0 * self.mu_r.real * self.conductivity(omega)))


AIR = Material(1.0, 1.0)


@dataclass(frozen=True)
class LinearProfile:
    """Permittivity varying linearly along one axis, clamped outside [lo, hi]."""

    eps_lo: float
    eps_hi: float
    lo: float
    hi: float
    axis: int = 1
    mu_r: complex = 1.0

    def at(self, x, y):
        s = (x, y)[self.axis]
        t = np.clip((np.asarray(s, dtype=float) - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        return self.eps_lo + (self.eps_hi - self.eps_lo) * t


@dataclass
class MaterialField:
    """Per-region material assignment.

    Values of ``regions`` are a ``Material`` or a profile object with an
    ``at(x, y)`` method returning eps_r (mu_r taken from the profile).
    """

    regions: Mapping[int, object] = field(default_factory=dict)
    default: Material = AIR

    def evaluate(self, tags, points):
        tags = np.asarray(tags)
        eps = np.empty(len(tags), dtype=complex)
        mu = np.empty(len(tags), dtype=complex)
        eps[:] = self.default.eps_r
        mu[:] = self.default.mu_r
        for tag, mat in self.regions.items():
            sel = tags == tag
            if not sel.any():
                continue
            if isinstance(mat, Material):
                eps[sel] = mat.eps_r
                mu[sel] = mat.mu_r
            else:
                p = points[sel]
                eps[sel] = mat.at(p[:, 0], p[:, 1])
                mu[sel] = mat.mu_r
        return eps, mu

    def on_mesh(self, mesh: TriMesh):
        return self.evaluate(mesh.region_tag, mesh.centroids)


@dataclass(frozen=True)
class PmlSpec:
    """Uniaxial stretched-coordinate PML outside ``inner_box``.

    ``thickness`` defaults to whatever lies between ``inner_box`` and the mesh
    hull; ``layers`` is informational once a mesh exists.
    """

    inner_box: tuple
    layers: int = 10
    order: float = 3.0
    r0: float = 1e-6

    def __post_init__(self):
        if self.layers < 1:
            raise InvalidParameter("PML needs at least one layer")
        if not 0 < self.r0 < 1:
            raise InvalidParameter("PML reflection target must lie in (0, 1)")

    def stretch(self, mesh: TriMesh, points, omega):
        """Complex stretch factors (s_x, s_y) at ``points``."""
        x0, y0, x1, y1 = self.inner_box
        X0, Y0, X1, Y1 = mesh.bounding_box()
        sx = np.ones(len(points), dtype=complex)
        sy = np.ones(len(points), dtype=complex)
        for s, coord, lo, hi, LO, HI in ((sx, points[:, 0], x0, x1, X0, X1), (sy, points[:, 1], y0, y1, Y0, Y1)):
            t_lo, t_hi = lo - LO, HI - hi
            for t, depth in ((t_lo, lo - coord), (t_hi, coord - hi)):
                if t <= 0:
                    continue
                d = np.clip(depth, 0.0, t)
                sig_max = -(self.order + 1) * EPS0 * C0 * math.log(self.r0) / (2 * t)
                sig = sig_max * (d / t) ** self.order
                s -= 1j * sig / (omega * EPS0)
        return sx, sy

    def in_pml(self, points, tol=0.0):
        x0, y0, x1, y1 = self.inner_box
        p = np.atleast_2d(points)
        return (p[:, 0] < x0 - tol) | (p[:, 0] > x1 + tol) | (p[:, 1] < y0 - tol) | (p[:, 1] > y1 + tol)

    def validate(self, mesh: TriMesh):
        x0, y0, x1, y1 = self.inner_box
        X0, Y0, X1, Y1 = mesh.bounding_box()
        if not (X0 < x0 < x1 < X1 and Y0 < y0 < y1 < Y1):
            raise InvalidParameter("PML inner box must lie strictly inside the mesh hull")
        hmin = float(np.min(mesh.element_diameters[self.in_pml(mesh.centroids)], initial=np.inf))
        thick = min(x0 - X0, X1 - x1, y0 - Y0, Y1 - y1)
        if thick < 0.5 * hmin:
            raise InvalidParameter("PML is thinner than one element")


def pml_for_box(box, h, layers=10, order=3.0, r0=1e-6):
    """Outer mesh box and PmlSpec for an air box surrounded by ``layers`` cells of size h."""
    x0, y0, x1, y1 = box
    t = layers * h
    return (x0 - t, y0 - t, x1 + t, y1 + t), PmlSpec((x0, y0, x1, y1), layers, order, r0)


@dataclass(frozen=True)
class PlaneWave:
    frequency: float
    angle: float = 0.0
    amplitude: complex = 1.0

    def __post_init__(self):
        if not self.frequency > 0:
            raise InvalidParameter("frequency must be positive")

    @property
    def omega(self):
        return 2 * math.pi * self.frequency

    @property
    def k0(self):
        return wavenumber(self.omega)


def incident_field(wave: PlaneWave, background: Material, p):
    """Plane wave ``A exp(-j k (x cos phi + y sin phi))`` in the background medium."""
    p = np.asarray(p, dtype=float)
    k = background.k(wave.omega)
    phase = p[..., 0] * math.cos(wave.angle) + p[..., 1] * math.sin(wave.angle)
    return wave.amplitude * np.exp(-1j * k * phase)


def incident_gradient(wave: PlaneWave, background: Material, p):
    k = background.k(wave.omega)
    u = incident_field(wave, background, p)
    d = np.array([math.cos(wave.angle), math.sin(wave.angle)])
    return (-1j * k * u)[..., None] * d


@dataclass
class SparseSystem:
    """Global P1 system restricted to free (non-Dirichlet) nodes."""

    matrix: sps.csc_matrix
    rhs: np.ndarray | None
    free: np.ndarray
    n_nodes: int

    @property
    def n(self):
        return len(self.free)

    @property
    def global_to_free(self):
        g = -np.ones(self.n_nodes, dtype=np.int64)
        g[self.free] = np.arange(len(self.free))
        return g

    def expand(self, x):
        """Free-node vector -> full nodal vector (zeros on Dirichlet nodes)."""
        out = np.zeros(self.n_nodes, dtype=complex)
        out[self.free] = x
        return out


def element_matrices(mesh: TriMesh, inv_mu, eps, k0, sx=None, sy=None):
    """Local 3x3 stiffness-minus-mass blocks for every element, shape (M, 3, 3)."""
    _, b, c, area = mesh._coeffs
    if sx is None:
        sx = np.ones(mesh.n_triangles)
        sy = sx
    kx = (inv_mu * sy / sx)[:, None, None]
    ky = (inv_mu * sx / sy)[:, None, None]
    stiff = (kx * b[:, :, None] * b[:, None, :] + ky * c[:, :, None] * c[:, None, :]) / (4 * area)[:, None, None]
    mass = (area / 12)[:, None, None] * (np.ones((3, 3)) + np.eye(3))[None]
    return stiff - (k0**2 * eps * sx * sy)[:, None, None] * mass


def _assemble(mesh: TriMesh, local):
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    A = sps.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    return A.tocsc()


def assemble_global(mesh: TriMesh, materials: MaterialField, omega, pml: PmlSpec | None = None):
    """Full nodal matrix (all nodes, Dirichlet rows included)."""
    if np.any(mesh.areas <= 0):
        from .errors import DegenerateElement

        raise DegenerateElement("zero-area element")
    eps, mu = materials.on_mesh(mesh)
    if pml is not None:
        pml.validate(mesh)
        sx, sy = pml.stretch(mesh, mesh.centroids, omega)
    else:
        sx = sy = None
    return _assemble(mesh, element_matrices(mesh, 1.0 / mu, eps, wavenumber(omega), sx, sy))


def dirichlet_free(mesh: TriMesh):
    return np.flatnonzero(~mesh.boundary_node_flags)


def assemble_helmholtz(mesh: TriMesh, materials: MaterialField, pml: PmlSpec | None, omega) -> SparseSystem:
    """Scattered-field system matrix K on free nodes (outer boundary is Dirichlet)."""
    A = assemble_global(mesh, materials, omega, pml)
    free = dirichlet_free(mesh)
    K = A[free][:, free].tocsc()
    return SparseSystem(K, None, free, mesh.n_nodes)


def assemble_rhs_scattered(mesh: TriMesh, materials: MaterialField, background: Material,
                           wave: PlaneWave, pml: PmlSpec | None = None, free=None):
    """Contrast-source load vector for the scattered field on free nodes.

    ``RHS_p = sum_e int (1/mu_bg - 1/mu_r) grad(E_inc).grad(N_p)
                        - k0^2 (eps_bg - eps_r) E_inc N_p``
    """
    eps, mu = materials.on_mesh(mesh)
    d_inv_mu = 1.0 / background.mu_r - 1.0 / mu
    d_eps = background.eps_r - eps
    contrast = np.flatnonzero((d_inv_mu != 0) | (d_eps != 0))
    rhs = np.zeros(mesh.n_nodes, dtype=complex)
    if contrast.size and wave.amplitude != 0:
        if pml is not None and np.any(pml.in_pml(mesh.centroids[contrast])):
            raise InvalidParameter("material contrast inside the PML is not supported")
        k0 = wave.k0
        t = mesh.triangles[contrast]
        xy = mesh.nodes[t]
        _, b, c, area = (arr[contrast] for arr in mesh._coeffs)
        qp = np.einsum("qj,ejd->eqd", GAUSS3, xy)
        u = incident_field(wave, background, qp)
        g = incident_gradient(wave, background, qp)
        # grad N_p is constant: (b_p, c_p) / (2 area)
        gN = np.stack([b, c], axis=2) / (2 * area)[:, None, None]
        stiff = np.einsum("eqd,epd->ep", g, gN) * (area / 3)[:, None]
        mass = np.einsum("eq,qp->ep", u, GAUSS3) * (area / 3)[:, None]
        local = d_inv_mu[contrast, None] * stiff - k0**2 * d_eps[contrast, None] * mass
        np.add.at(rhs, t.ravel(), local.ravel())
    if free is None:
        free = dirichlet_free(mesh)
    return rhs[free]


def load_vector(mesh: TriMesh, f: Callable):
    """``int f N_p`` with 3-point Gauss, full nodal vector."""
    xy = mesh.nodes[mesh.triangles]
    qp = np.einsum("qj,ejd->eqd", GAUSS3, xy)
    fv = f(qp[..., 0], qp[..., 1])
    local = np.einsum("eq,qp->ep", fv, GAUSS3) * (mesh.areas / 3)[:, None]
    out = np.zeros(mesh.n_nodes, dtype=np.result_type(fv, float))
    np.add.at(out, mesh.triangles.ravel(), local.ravel())
    return out


def solve_dirichlet(mesh: TriMesh, materials: MaterialField, omega, dirichlet, source=None,
                    pml: PmlSpec | None = None, fixed=None):
    """Solve ``-div(1/mu grad u) - k0^2 eps u = f`` with Dirichlet data.

    ``dirichlet`` is a callable (x, y) -> value evaluated on ``fixed`` nodes
    (default: outer boundary).  Returns the full nodal solution.
    """
    from scipy.sparse.linalg import spsolve

    A = assemble_global(mesh, materials, omega, pml)
    if fixed is None:
        fixed = mesh.boundary_node_flags.copy()
    fixed = np.asarray(fixed, dtype=bool)
    free = np.flatnonzero(~fixed)
    u = np.zeros(mesh.n_nodes, dtype=complex)
    u[fixed] = dirichlet(mesh.nodes[fixed, 0], mesh.nodes[fixed, 1])
    rhs = -A[:, fixed] @ u[fixed]
    if source is not None:
        rhs = rhs + load_vector(mesh, source)
    u[free] = spsolve(A[free][:, free].tocsc(), rhs[free])
    return u

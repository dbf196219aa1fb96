"""Far fields, near-field grids, conductor current densities and error metrics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.constants import mu_0 as MU0

from .bem import gauss01
from .contour import BoundaryContour
from .dsao import DsaoMatrix, equivalent_current
from .errors import InvalidGeometry, InvalidParameter
from .fem import AIR, Material, PlaneWave, PmlSpec, incident_field
from .mesh import TriMesh, interpolate


def to_dbm(sigma):
    """Echo width in dB relative to one meter."""
    return 10.0 * np.log10(np.maximum(np.asarray(sigma, dtype=float), 1e-300))


@dataclass
class RcsCurve:
    angles: np.ndarray
    sigma: np.ndarray  # meters
    frequency: float

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if np.any(np.diff(self.angles) <= 0) or self.angles.min(initial=0) < 0 or self.angles.max(initial=0) >= 2 * np.pi:
            raise InvalidParameter("angles must increase strictly within [0, 2*pi)")
        if not np.all(np.isfinite(self.sigma)):
            raise InvalidParameter("non-finite echo width")

    @property
    def sigma_dbm(self):
        return to_dbm(self.sigma)


def default_angles(n=360):
    return 2 * np.pi * np.arange(n) / n


# -- far field ----------------------------------------------------------


def _rect_quadrature(rect, h):
    """Gauss points, weights and outward normals on the rectangle boundary."""
    x0, y0, x1, y1 = rect
    xg, wg = gauss01(3)
    pts, wts, nrm = [], [], []
    sides = [((x0, y0), (x1, y0), (0.0, -1.0)), ((x1, y0), (x1, y1), (1.0, 0.0)),
             ((x1, y1), (x0, y1), (0.0, 1.0)), ((x0, y1), (x0, y0), (-1.0, 0.0))]
    for a, b, n in sides:
        a, b = np.array(a), np.array(b)
        length = float(np.hypot(*(b - a)))
        panels = max(1, int(math.ceil(length / h)))
        s = ((np.arange(panels)[:, None] + xg[None]) / panels).ravel()
        pts.append(a + s[:, None] * (b - a))
        wts.append(np.tile(wg, panels) * length / panels)
        nrm.append(np.tile(n, (len(s), 1)))
    return np.concatenate(pts), np.concatenate(wts), np.concatenate(nrm)


def huygens_far_field(mesh: TriMesh, E_sc, rect, k, angles, h=None):
    """Far-field pattern ``F(phi) = int [u jk (n.r) - du/dn] exp(jk r.y) dl`` of the FEM field.

    ``E_sc`` holds nodal scattered-field values; the normal derivative uses
    central differences at 1e-3 of the local element size.
    """
    if h is None:
        h = float(np.median(mesh.element_diameters))
    pts, wts, nrm = _rect_quadrature(rect, h)
    delta = 1e-3 * h
    u = interpolate(mesh, E_sc, pts)
    up = interpolate(mesh, E_sc, pts + delta * nrm)
    um = interpolate(mesh, E_sc, pts - delta * nrm)
    if np.any(np.isnan(u)) or np.any(np.isnan(up)) or np.any(np.isnan(um)):
        raise InvalidGeometry("Huygens rectangle leaves the mesh")
    dudn = (up - um) / (2 * delta)
    phi = np.atleast_1d(angles)
    rhat = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    phase = np.exp(1j * k * (rhat @ pts.T))
    ndot = rhat @ nrm.T
    return (phase * (u[None] * 1j * k * ndot - dudn[None])) @ wts


def rcs_from_huygens(mesh: TriMesh, E_sc, rect, wave: PlaneWave, angles, background: Material = AIR,
                     contours: Sequence[BoundaryContour] = (), pml: PmlSpec | None = None) -> RcsCurve:
    """Echo width from the scattered FEM field on a closed rectangle."""
    x0, y0, x1, y1 = rect
    if not (x1 > x0 and y1 > y0):
        raise InvalidParameter("invalid Huygens rectangle")
    box = BoundaryContour([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
    for c in contours:
        if not np.all(box.contains(c.nodes)) or box.intersects(c):
            raise InvalidGeometry("Huygens rectangle must enclose every contour without touching it")
    if pml is not None:
        corners = np.array([[x0, y0], [x1, y1]])
        if np.any(pml.in_pml(corners)):
            raise InvalidGeometry("Huygens rectangle reaches into the PML")
    k = background.k(wave.omega)
    F = huygens_far_field(mesh, E_sc, rect, k, angles)
    sigma = np.abs(F) ** 2 / (4 * k.real) / abs(wave.amplitude) ** 2
    return RcsCurve(angles, sigma, wave.frequency)


def current_far_field(contour: BoundaryContour, J, k, angles, q=4):
    """``int J exp(jk r.y) dl`` for nodal piecewise-linear current ``J``."""
    xg, wg = gauss01(q)
    a = contour.nodes
    v = contour.segment_vectors
    L = contour.segment_lengths
    pts = (a[:, None, :] + xg[None, :, None] * v[:, None, :]).reshape(-1, 2)
    J = np.asarray(J)
    Jq = (J[:, None] * (1 - xg)[None] + np.roll(J, -1)[:, None] * xg[None]).ravel()
    wq = (L[:, None] * wg[None]).ravel()
    phi = np.atleast_1d(angles)
    rhat = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    return np.exp(1j * k * (rhat @ pts.T)) @ (Jq * wq)


def rcs_from_current(contours: Sequence[BoundaryContour], currents, wave: PlaneWave, angles,
                     background: Material = AIR) -> RcsCurve:
    """Echo width radiated by equivalent surface currents in the background medium."""
    k = background.k(wave.omega)
    F = sum(current_far_field(c, J, k, angles) for c, J in zip(contours, currents))
    sigma = (wave.omega * MU0 * abs(background.mu_r)) ** 2 * np.abs(F) ** 2 / (4 * k.real)
    return RcsCurve(angles, sigma / abs(wave.amplitude) ** 2, wave.frequency)


# -- near field ---------------------------------------------------------

REGION_PDE, REGION_SIE, REGION_PML = 0, 1, 2


@dataclass
class GridSpec:
    origin: tuple
    spacing: tuple
    nx: int
    ny: int

    def points(self):
        x = self.origin[0] + self.spacing[0] * np.arange(self.nx)
        y = self.origin[1] + self.spacing[1] * np.arange(self.ny)
        X, Y = np.meshgrid(x, y, indexing="xy")
        return np.column_stack([X.ravel(), Y.ravel()])

    @classmethod
    def over(cls, box, nx, ny):
        x0, y0, x1, y1 = box
        return cls((x0, y0), ((x1 - x0) / (nx - 1), (y1 - y0) / (ny - 1)), nx, ny)


@dataclass
class FieldGrid:
    spec: GridSpec
    values: np.ndarray
    region: np.ndarray

    @property
    def points(self):
        return self.spec.points()


def near_field_grid(mesh: TriMesh, E_sc, sie: Sequence, spec: GridSpec, wave: PlaneWave,
                    background: Material = AIR, pml: PmlSpec | None = None) -> FieldGrid:
    """Total field on a regular grid.

    ``sie`` is a sequence of ``(DsaoMatrix, trace)`` pairs; points inside
    those contours are recovered from the boundary trace, the rest are
    interpolated from the FEM solution plus the incident wave.
    """
    pts = spec.points()
    if pml is not None and np.any(pml.in_pml(pts)):
        raise InvalidParameter("near-field grid overlaps the PML")
    vals = np.empty(len(pts), dtype=complex)
    region = np.full(len(pts), REGION_PDE, dtype=np.int8)
    taken = np.zeros(len(pts), dtype=bool)
    for dsao, trace in sie:
        inside = dsao.contour.contains(pts) & ~taken
        if inside.any():
            vals[inside] = dsao.interior_field(trace, pts[inside])[0]
            region[inside] = REGION_SIE
            taken |= inside
    rest = ~taken
    e = interpolate(mesh, E_sc, pts[rest])
    if np.any(np.isnan(e)):
        raise InvalidParameter("near-field grid leaves the mesh")
    vals[rest] = e + incident_field(wave, background, pts[rest])
    return FieldGrid(spec, vals, region)


@dataclass
class CurrentDensityMap:
    points: np.ndarray
    J: np.ndarray

    @property
    def peak(self):
        i = int(np.argmax(np.abs(self.J)))
        return float(abs(self.J[i])), tuple(self.points[i])


def surface_graded_points(contour: BoundaryContour, h_min, depth, growth=1.3, spacing=None):
    """Sample points inside a contour on offset curves graded from ``h_min``."""
    from .meshgen import offset_polyline, resample_polyline

    spacing = spacing or float(contour.segment_lengths.mean())
    out = []
    d = 0.5 * h_min
    s = h_min
    while d < depth:
        p = resample_polyline(offset_polyline(contour, -d), spacing)
        out.append(p[contour.distance(p) > 0.7 * d])
        d += s
        s *= growth
    pts = np.concatenate(out) if out else np.zeros((0, 2))
    return pts[contour.contains(pts)]


def default_trace_modes(contour, k) -> int:
    """Harmonics a smooth exterior field can carry around ``contour``."""
    R = float(np.hypot(*(contour.nodes - contour.centroid).T).max())
    return int(np.ceil(abs(k) * R)) + 4


def band_limit(contour, trace, modes: int):
    """Least-squares fit of ``trace`` by ``|m| <= modes`` harmonics of arc length.

    A nonconformal mesh leaves a ripple on the trace at the PDE element
    scale.  Behind a good conductor's surface this ripple is comparable to
    the true field, so interior recovery works from the smooth part only.
    """
    trace = np.asarray(trace, dtype=complex)
    if modes < 0:
        raise InvalidParameter("modes must be non-negative")
    L = contour.segment_lengths
    s = np.concatenate([[0.0], np.cumsum(L)[:-1]]) / L.sum()
    if 2 * modes + 1 >= contour.m:
        return trace.copy()
    wt = np.sqrt(0.5 * (L + np.roll(L, 1)))
    B = np.exp(2j * np.pi * np.outer(s, np.arange(-modes, modes + 1)))
    c = np.linalg.lstsq(B * wt[:, None], trace * wt, rcond=None)[0]
    return B @ c


def current_density_map(dsao: DsaoMatrix, trace, points, omega) -> CurrentDensityMap:
    """``J = sigma E`` at ``points``; zero outside conducting regions."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    mats = dsao.region_of(pts)
    sig = np.array([0.0 if m is None else m.conductivity(omega) for m in mats])
    J = np.zeros(len(pts), dtype=complex)
    hot = sig > 0
    if hot.any():
        J[hot] = sig[hot] * dsao.interior_field(trace, pts[hot])[0]
    return CurrentDensityMap(pts, J)


# -- metrics ------------------------------------------------------------


def relative_error(calc, ref) -> float:
    """``sum |c - r|^2 / sum |r|^2``."""
    c = np.asarray(calc)
    r = np.asarray(ref)
    if c.shape != r.shape:
        raise InvalidParameter("length mismatch")
    den = float(np.sum(np.abs(r) ** 2))
    if den == 0.0:
        raise InvalidParameter("reference is identically zero")
    return float(np.sum(np.abs(c - r) ** 2) / den)


@dataclass
class NearFieldError:
    errors: np.ndarray
    max: float
    below_3pct: float
    below_5pct: float


def near_field_relative_error(calc, ref) -> NearFieldError:
    c = np.asarray(calc.values if isinstance(calc, FieldGrid) else calc)
    r = np.asarray(ref.values if isinstance(ref, FieldGrid) else ref)
    if c.shape != r.shape:
        raise InvalidParameter("grids differ")
    scale = float(np.max(np.abs(r), initial=0.0))
    if scale == 0.0:
        raise InvalidParameter("reference is identically zero")
    e = np.abs(c - r) / scale
    return NearFieldError(e, float(e.max()), float(np.mean(e < 0.03)), float(np.mean(e < 0.05)))


# -- CSV output -----------------------------------------------------------


def _write(rows, header, stream=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])
    text = buf.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def write_rcs_csv(curve: RcsCurve, stream=None):
    rows = zip(np.degrees(curve.angles).tolist(), curve.sigma_dbm.tolist())
    return _write(rows, ["angle_deg", "sigma_dbm"], stream)


def write_nearfield_csv(grid: FieldGrid, stream=None):
    names = {REGION_PDE: "pde", REGION_SIE: "sie", REGION_PML: "pml"}
    p = grid.points
    rows = ((float(x), float(y), float(v.real), float(v.imag), float(abs(v)), names[int(g)])
            for (x, y), v, g in zip(p, grid.values, grid.region))
    return _write(rows, ["x", "y", "re", "im", "abs", "region"], stream)


def write_current_csv(cmap: CurrentDensityMap, stream=None):
    rows = ((float(x), float(y), float(abs(j))) for (x, y), j in zip(cmap.points, cmap.J))
    return _write(rows, ["x", "y", "abs_J"], stream)


def write_metrics_csv(metrics: dict, stream=None):
    rows = ((k, float(v) if isinstance(v, (int, float, np.floating)) else v) for k, v in metrics.items())
    return _write(rows, ["name", "value"], stream)


__all__ = [
    "RcsCurve", "GridSpec", "FieldGrid", "CurrentDensityMap", "equivalent_current", "huygens_far_field",
    "rcs_from_huygens", "rcs_from_current", "near_field_grid", "current_density_map", "surface_graded_points",
    "relative_error", "near_field_relative_error", "write_rcs_csv", "write_nearfield_csv", "write_current_csv",
    "write_metrics_csv", "to_dbm", "default_angles",
]

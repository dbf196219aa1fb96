import math
import warnings

import numpy as np
import pytest
import scipy.sparse as sps

from em2d.contour import circle_contour
from em2d.coupling import build_connection_matrix
from em2d.dsao import assemble_dsao
from em2d.errors import InvalidGeometry, NearBoundaryWarning, SingularSystem
from em2d.fem import AIR, Material, MaterialField, PlaneWave, assemble_helmholtz, incident_field, pml_for_box
from em2d.meshgen import build_rect_mesh
from em2d.solver import (Coupling, assemble_coupled_system, condition_estimate, metadata_block,
                         recover_interior_fields, solve)

WAVE = PlaneWave(300e6)
W = WAVE.omega


def _setup(h=0.05):
    outer, pml = pml_for_box((-1, -1, 1, 1), h, 8)
    m = build_rect_mesh(outer, h)
    return m, pml, assemble_helmholtz(m, MaterialField(), pml, W)


def _inc(p):
    return incident_field(WAVE, AIR, p)


def test_null_operator_reduces_to_plain_fem():
    m, pml, base = _setup()
    c = circle_contour(radius=0.3, n=40)
    d = assemble_dsao(c, AIR, AIR, W)
    rhs = np.random.default_rng(0).normal(size=base.n).astype(complex)
    coupled = solve(assemble_coupled_system(base, [Coupling(build_connection_matrix(m, c, pml), d)], W, rhs,
                                            incident=_inc))
    plain = sps.linalg.spsolve(base.matrix, rhs)
    np.testing.assert_allclose(coupled.E, plain, rtol=1e-10, atol=1e-12)


def test_zero_rhs_gives_zero_field_and_reports_metadata():
    m, pml, base = _setup()
    c = circle_contour(radius=0.3, n=40)
    d = assemble_dsao(c, Material(4.0), AIR, W)
    sys = assemble_coupled_system(base, [Coupling(build_connection_matrix(m, c, pml), d)], W, np.zeros(base.n))
    sol = solve(sys)
    assert not np.any(sol.E)
    assert sol.metadata["unknowns"] == base.n and sol.metadata["residual"] == 0.0
    assert "t_factor_s=" in metadata_block(sol.metadata)


def test_scatterer_solve_has_small_residual():
    m, pml, base = _setup()
    c = circle_contour(radius=0.3, n=40)
    d = assemble_dsao(c, Material(4.0), AIR, W)
    sys = assemble_coupled_system(base, [Coupling(build_connection_matrix(m, c, pml), d)], W, np.zeros(base.n),
                                  incident=_inc)
    sol = solve(sys)
    assert np.linalg.norm(sys.matrix @ sol.E - sys.rhs) <= 1e-10 * np.linalg.norm(sys.rhs)
    assert np.abs(sol.E).max() > 0
    # the trace is the total field
    assert len(sol.traces) == 1 and sol.traces[0].shape == (40,)


def test_condition_estimate():
    assert condition_estimate(sps.identity(20, format="csc")) == pytest.approx(1.0)
    assert condition_estimate(sps.diags([1.0, 1e6]).tocsc()) == pytest.approx(1e6, rel=1e-6)


def test_singular_system_detected():
    A = sps.csc_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SingularSystem):
        condition_estimate(A)


def test_overlapping_domains_rejected():
    m, pml, base = _setup()
    a = circle_contour((0.0, 0.0), 0.3, n=40)
    b = circle_contour((0.2, 0.0), 0.3, n=40)
    cps = [Coupling(build_connection_matrix(m, c, pml), assemble_dsao(c, Material(2.0), AIR, W)) for c in (a, b)]
    with pytest.raises(InvalidGeometry):
        assemble_coupled_system(base, cps, W, np.zeros(base.n))


def test_recover_interior_fields_warns_near_the_boundary():
    mat, w = Material(3.0), 2 * math.pi * 150e6
    c = circle_contour(radius=0.5, n=64)
    k = mat.k(w)
    e1 = np.exp(-1j * k * c.nodes[:, 0])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        recover_interior_fields(c, e1, [[0.0, 0.0]], omega=w, material=mat)
    with pytest.warns(NearBoundaryWarning):
        recover_interior_fields(c, e1, [[0.499, 0.0]], omega=w, material=mat)

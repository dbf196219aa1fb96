import math

import numpy as np
import pytest
from scipy.constants import c as C0

from em2d.errors import InvalidParameter
from em2d.fem import (AIR, Material, MaterialField, PlaneWave, assemble_global, assemble_helmholtz,
                      assemble_rhs_scattered, incident_field, pml_for_box, solve_dirichlet)
from em2d.mesh import TriMesh
from em2d.meshgen import build_rect_mesh

from checks import manufactured_errors, pml_reflection


def omega_for(k0):
    return k0 * C0


def test_material_validation_and_conductor():
    with pytest.raises(InvalidParameter):
        Material(2 + 0.1j)
    cu = Material.conductor(5.8e7, 300e6)
    w = 2 * math.pi * 300e6
    assert cu.conductivity(w) == pytest.approx(5.8e7)
    assert cu.skin_depth(w) == pytest.approx(math.sqrt(2 / (w * 4e-7 * math.pi * 5.8e7)), rel=1e-6)
    assert cu.k(w).imag < 0


def test_two_triangle_diagonal_matches_hand_assembly():
    m = TriMesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]])
    k0 = 2.0
    A = assemble_global(m, MaterialField(), omega_for(k0)).toarray()
    # node 0 belongs to both triangles; grad N_0 is (-1, 0) in one and (0, -1) in the other
    stiff = 0.5 + 0.5
    mass = 2 * (0.5 / 6)
    assert A[0, 0] == pytest.approx(stiff - k0**2 * mass, rel=1e-14)


def test_laplacian_rows_vanish_at_zero_frequency():
    m = build_rect_mesh((0, 0, 1, 1), 0.1)
    A = assemble_global(m, MaterialField(), 0.0)
    inner = ~m.boundary_node_flags
    np.testing.assert_allclose(np.asarray(A.sum(axis=1)).ravel()[inner], 0.0, atol=1e-12)
    assert abs(A - A.T).max() == 0


def test_pml_leaves_physical_entries_unchanged():
    outer, pml = pml_for_box((-1, -1, 1, 1), 0.1, 5)
    m = build_rect_mesh(outer, 0.1)
    w = omega_for(2 * math.pi)
    A0 = assemble_global(m, MaterialField(), w).tocsr()
    A1 = assemble_global(m, MaterialField(), w, pml).tocsr()
    phys = ~pml.in_pml(m.centroids)
    nodes = np.setdiff1d(np.arange(m.n_nodes), np.unique(m.triangles[~phys]))
    d = (A0 - A1)[nodes][:, nodes]
    assert abs(d).max() <= 1e-15 * abs(A0).max()
    assert abs(A0 - A1).max() > 0


def test_rhs_zero_without_contrast_or_amplitude():
    m = build_rect_mesh((-1, -1, 1, 1), 0.2)
    mats = MaterialField({1: Material(2.0)}, AIR)
    w = PlaneWave(C0)
    assert not np.any(assemble_rhs_scattered(m, MaterialField(), AIR, w))
    tags = np.zeros(m.n_triangles, dtype=int)
    tags[5] = 1
    mt = TriMesh(m.nodes, m.triangles, tags)
    assert not np.any(assemble_rhs_scattered(mt, mats, AIR, PlaneWave(C0, amplitude=0.0)))


def test_rhs_support_is_the_contrast_triangle():
    m = build_rect_mesh((-1, -1, 1, 1), 0.2)
    tags = np.zeros(m.n_triangles, dtype=int)
    e = 37
    tags[e] = 1
    mt = TriMesh(m.nodes, m.triangles, tags)
    # k0 = 2 pi
    rhs = assemble_rhs_scattered(mt, MaterialField({1: Material(2.0)}, AIR), AIR, PlaneWave(C0),
                                 free=np.arange(m.n_nodes))
    assert set(np.flatnonzero(rhs)) == set(m.triangles[e])


def test_incident_field_phase():
    w = PlaneWave(C0, amplitude=2.0)  # wavelength 1 m
    assert incident_field(w, AIR, np.array([0.0, 0.0])) == pytest.approx(2.0)
    assert incident_field(w, AIR, np.array([1.0, 0.0])) == pytest.approx(2.0, abs=1e-12)
    assert incident_field(w, AIR, np.array([0.5, 0.0])) == pytest.approx(-2.0, abs=1e-12)
    # denser medium shortens the wavelength
    assert incident_field(w, Material(4.0), np.array([0.25, 0.0])) == pytest.approx(-2.0, abs=1e-12)


def test_patch_reproduces_linear_solution_at_zero_frequency():
    m = build_rect_mesh((0, 0, 1, 1), 0.125)
    u = solve_dirichlet(m, MaterialField(), 0.0, lambda x, y: 1 + 2 * x - 3 * y)
    np.testing.assert_allclose(u, 1 + 2 * m.nodes[:, 0] - 3 * m.nodes[:, 1], atol=1e-12)


def test_manufactured_solution_converges_at_second_order():
    errs = manufactured_errors([16, 32, 64])
    rates = np.log2(errs[:-1] / errs[1:])
    assert np.all(rates >= 1.8), rates


def test_pml_absorbs_outgoing_cylindrical_wave():
    assert pml_reflection() < 0.01


def test_helmholtz_system_is_complex_symmetric():
    outer, pml = pml_for_box((-1, -1, 1, 1), 0.1)
    m = build_rect_mesh(outer, 0.1)
    K = assemble_helmholtz(m, MaterialField(), pml, omega_for(2 * math.pi)).matrix
    assert abs(K - K.T).max() <= 1e-12 * abs(K).max()
    assert K.shape[0] == (~m.boundary_node_flags).sum()


def test_contrast_inside_pml_rejected():
    outer, pml = pml_for_box((-1, -1, 1, 1), 0.2, 3)
    m = build_rect_mesh(outer, 0.2)
    tags = np.zeros(m.n_triangles, dtype=int)
    tags[0] = 1
    mt = TriMesh(m.nodes, m.triangles, tags)
    with pytest.raises(InvalidParameter):
        assemble_rhs_scattered(mt, MaterialField({1: Material(2.0)}), AIR, PlaneWave(C0), pml)

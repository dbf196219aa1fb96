"""Acceptance criteria A1-A9; each test prints one PASS/FAIL line."""

import dataclasses
import math
import time
import warnings

import numpy as np
import pytest
import scipy.sparse as sps
from scipy.constants import mu_0 as MU0

from em2d import postprocess as pp
from em2d.contour import circle_contour
from em2d.coupling import apply_connection, build_connection_matrix, detect_conformal
from em2d.dsao import assemble_dsao, assemble_dtn_bem, assemble_dtn_fem_schur, dtn_circle_analytic, fem_trace_mesh
from em2d.fem import (AIR, Material, MaterialField, assemble_helmholtz, assemble_rhs_scattered, incident_field,
                      pml_for_box)
from em2d.meshgen import build_rect_mesh
from em2d.runner import build_model, conductor_points, convergence_sweep, mie_oracle, run_scenario, solve_model
from em2d.scenario import preset
from em2d.solver import Coupling, CoupledSystem, assemble_coupled_system, solve

from checks import manufactured_errors, pml_reflection, random_pair
from conftest import Verdict

W300 = 2 * math.pi * 300e6


@pytest.fixture(autouse=True)
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


@pytest.fixture(scope="module")
def coated():
    return run_scenario(preset("coated-circle"))


@pytest.fixture(scope="module")
def cable_runs():
    s = preset("single-cable")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return {f: run_scenario(s, formulation=f) for f in ("hybrid-nonconformal", "hybrid-conformal", "reference-fem")}


def test_a1_connection_matrix_properties(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_sum = worst_affine = 0.0
    in_range, sparse_rows = True, True
    for _ in range(50):
        mesh, contour = random_pair(rng)
        T = build_connection_matrix(mesh, contour)
        A = T.T.toarray()
        worst_sum = max(worst_sum, float(np.abs(A.sum(axis=1) - 1).max()))
        in_range &= bool(A.min() >= 0 and A.max() <= 1)
        sparse_rows &= bool(np.all(np.count_nonzero(A, axis=1) <= 3))
        a, b, c = rng.uniform(-2, 2, 3)
        f = lambda p: a + b * p[:, 0] + c * p[:, 1]
        worst_affine = max(worst_affine, float(np.abs(apply_connection(T, f(mesh.nodes)) - f(contour.nodes)).max()))
    dt = time.perf_counter() - t0
    verdict.check(worst_sum <= 1e-12, f"row sums within {worst_sum:.1e}")
    verdict.check(in_range, "entries in [0, 1]")
    verdict.check(sparse_rows, "at most 3 nonzeros per row")
    verdict.check(worst_affine <= 1e-12, f"affine error {worst_affine:.1e}")
    verdict.check(dt < 5, f"{dt:.2f} s")
    verdict.finish()


def _direct_conformal(model, dsaos, base, rhs, omega, incident):
    """Couple by node identity: admittance entries go straight onto the shared nodes."""
    K = base.matrix.tolil(copy=True)
    rhs = rhs.copy()
    index = {tuple(p): i for i, p in enumerate(model.mesh.nodes)}
    for inc, ds in zip(model.inclusions, dsaos):
        free = base.global_to_free[[index[tuple(p)] for p in inc.contour.nodes]]
        Y = 1j * omega * MU0 * ds.Yc
        for a, fa in enumerate(free):
            for b, fb in enumerate(free):
                K[fa, fb] += Y[a, b]
        rhs[free] -= Y @ incident(inc.contour.nodes)
    return K.tocsc(), rhs


def test_a2_conformal_degeneration(verdict):
    t0 = time.perf_counter()
    s = preset("dielectric-circle")
    model = build_model(s, "hybrid-conformal")
    w = s.omega
    sol, dsaos, _, _ = solve_model(model)
    Ts = [c.T for c in sol.system.couplings]
    verdict.check(all(detect_conformal(T) for T in Ts), "conformal detected")
    base = sol.system.base
    inc = lambda p: incident_field(s.wave, s.reference_medium(), p)
    rhs0 = assemble_rhs_scattered(model.mesh, model.materials, s.reference_medium(), s.wave, model.pml, base.free)
    K, rhs = _direct_conformal(model, dsaos, base, rhs0, w, inc)
    A = sol.system.matrix
    dA = abs(A - K).max() / abs(A).max()
    verdict.check(dA <= 1e-14, f"K+C vs direct {dA:.1e}")
    direct = solve(CoupledSystem(K, rhs, base, []))
    angles = pp.default_angles(s.rcs_angles)
    contours = [i.contour for i in model.inclusions]
    rcs = lambda E: pp.rcs_from_huygens(model.mesh, E, s.huygens_rect(), s.wave, angles, s.reference_medium(),
                                        contours, model.pml).sigma
    d_rcs = float(np.abs(rcs(sol.E_nodes) - rcs(direct.E_nodes)).max() / rcs(direct.E_nodes).max())
    verdict.check(d_rcs <= 1e-10, f"RCS difference {d_rcs:.1e}")
    dt = time.perf_counter() - t0
    verdict.check(dt < 30, f"{dt:.1f} s")
    verdict.finish()


def test_a3_dtn_oracle(verdict):
    t0 = time.perf_counter()
    c = circle_contour(radius=0.4, n=256)
    mat = Material(4.0)
    D = assemble_dtn_bem(c, mat, W300)
    ex = dtn_circle_analytic(0.4, mat, W300, 8)
    err = float(np.max(np.abs(D.modal_eigenvalues(range(9)) - ex) / np.abs(ex)))
    verdict.check(err < 0.01, f"modes m<=8 within {100 * err:.2f}%")
    F = assemble_dtn_fem_schur(c, fem_trace_mesh(c), mat, W300)
    fro = float(np.linalg.norm(F.matrix - D.matrix) / np.linalg.norm(D.matrix))
    verdict.check(fro < 0.03, f"FEM-Schur vs BEM {100 * fro:.2f}% Frobenius")
    dt = time.perf_counter() - t0
    verdict.check(dt < 60, f"{dt:.1f} s")
    verdict.finish()


def test_a4_coated_circle_convergence(verdict, coated):
    re = coated.metrics["rcs_relative_error"]
    verdict.check(re < 0.05, f"RE {re:.4f} at {coated.metrics['elements']} elements")
    verdict.check(coated.cost.t_total_s < 180, f"desk run {coated.cost.t_total_s:.1f} s")
    s = dataclasses.replace(preset("coated-circle"), nearfield=None)
    t0 = time.perf_counter()
    rows = convergence_sweep(s, [10000, 20000, 40000], condition=False)
    res = [r.relative_error for r in rows]
    verdict.check(all(b < a for a, b in zip(res, res[1:])),
                  "ladder " + ", ".join(f"{r.elements}:{r.relative_error:.4f}" for r in rows))
    dt = time.perf_counter() - t0
    verdict.check(dt < 3 * 180, f"ladder {dt:.1f} s")
    verdict.finish()


@pytest.mark.slow
def test_a4_fine_mesh_reaches_one_percent():
    verdict = Verdict("A4-fine")
    s = dataclasses.replace(preset("coated-circle"), nearfield=None)
    t0 = time.perf_counter()
    row = convergence_sweep(s, [100000], condition=False)[0]
    dt = time.perf_counter() - t0
    verdict.check(row.relative_error < 0.01, f"RE {row.relative_error:.4f} at {row.elements} elements")
    verdict.check(dt < 900, f"{dt:.1f} s")
    verdict.finish()


def test_a5_near_field_bounds(verdict, coated):
    m = coated.metrics
    verdict.check(coated.grid.values.shape == (200 * 200,), "200x200 grid")
    verdict.check(m["nearfield_max_error"] < 0.08, f"max {100 * m['nearfield_max_error']:.2f}%")
    verdict.check(m["nearfield_below_5pct"] >= 0.9, f"{100 * m['nearfield_below_5pct']:.2f}% of points below 5%")
    verdict.check(coated.cost.t_total_s < 180, f"{coated.cost.t_total_s:.1f} s")
    verdict.finish()


def test_a6_skin_effect(verdict, cable_runs):
    t0 = time.perf_counter()
    s = preset("copper-cylinder")
    r = run_scenario(s)
    w = s.omega
    mat = s.domains[0].materials(s.frequency)[0]
    delta = mat.skin_depth(w)
    sigma = mat.conductivity(w)
    a = s.domains[0].params["radii"][0]
    # radial cut through the illuminated side, from the surface to six skin depths
    depth = np.linspace(0.1, 6.0, 60) * delta
    pts = np.c_[-(a - depth), np.zeros_like(depth)]
    k = r.model.locals_[0].k(w)
    trace = pp.band_limit(r.model.inclusions[0].contour, r.solution.traces[0],
                          pp.default_trace_modes(r.model.inclusions[0].contour, k))
    J = np.abs(pp.current_density_map(r.dsaos[0], trace, pts, w).J)
    J_ref = sigma * np.abs(mie_oracle(s).field(pts))
    err = float(np.max(np.abs(J - J_ref)) / J_ref.max())
    verdict.check(err < 0.02, f"radial cut vs series {100 * err:.2f}%")
    sel = (depth >= delta) & (depth <= 3 * delta)
    slope = np.polyfit(depth[sel], np.log(J[sel]), 1)[0]
    decay = -1.0 / slope
    verdict.check(abs(decay / delta - 1) < 0.1, f"decay length {decay / delta:.3f} skin depths")
    nc = cable_runs["hybrid-nonconformal"].metrics["peak_J"]
    cf = cable_runs["hybrid-conformal"].metrics["peak_J"]
    d = abs(nc - cf) / cf
    verdict.check(d < 0.005, f"cable peak |J| conformal vs nonconformal {100 * d:.3f}%")
    dt = time.perf_counter() - t0 + cable_runs["hybrid-nonconformal"].cost.t_total_s \
        + cable_runs["hybrid-conformal"].cost.t_total_s
    verdict.check(dt < 300, f"{dt:.1f} s")
    verdict.finish()


def test_a7_cost_ordering(verdict, cable_runs):
    nc, cf, ref = (cable_runs[f].cost for f in ("hybrid-nonconformal", "hybrid-conformal", "reference-fem"))
    verdict.check(nc.unknowns <= 0.5 * cf.unknowns, f"unknowns {nc.unknowns}/{cf.unknowns} = {nc.unknowns / cf.unknowns:.1%}")
    verdict.check(nc.unknowns <= 0.05 * ref.unknowns, f"vs reference {nc.unknowns}/{ref.unknowns} = {nc.unknowns / ref.unknowns:.1%}")
    verdict.check(nc.t_fill_solve_s < cf.t_fill_solve_s < ref.t_fill_solve_s,
                  f"fill+solve {nc.t_fill_solve_s:.2f} < {cf.t_fill_solve_s:.2f} < {ref.t_fill_solve_s:.2f} s")
    total = nc.t_total_s + cf.t_total_s + ref.t_total_s
    verdict.check(total < 600, f"{total:.1f} s")
    verdict.finish()


def test_a8_dsao_reuse(verdict):
    s = preset("cable-array")
    r = run_scenario(s)
    verdict.check((r.cache.assemblies, r.cache.hits) == (1, 3),
                  f"{r.cache.assemblies} assembly, {r.cache.hits} cache hits")
    w = s.omega
    worst = 0.0
    for i in range(1, 4):
        # an operator built from scratch at this cable's own position
        fresh = assemble_dsao(r.model.inclusions[i], mat_bg=r.model.locals_[i], omega=w,
                              fill=r.dsaos[i].fill)
        pts = conductor_points(r.model.inclusions[i], w, s.domains[i].h)
        a = pp.current_density_map(r.dsaos[i], r.solution.traces[i], pts, w).J
        b = pp.current_density_map(fresh, r.solution.traces[i], pts, w).J
        worst = max(worst, float(np.abs(a - b).max() / np.abs(b).max()))
    verdict.check(worst < 0.01, f"shared vs own operator current {worst:.1e}")
    verdict.finish()


def test_a9_null_contrast_and_manufactured(verdict):
    t0 = time.perf_counter()
    outer, pml = pml_for_box((-1, -1, 1, 1), 0.05, 8)
    m = build_rect_mesh(outer, 0.05)
    base = assemble_helmholtz(m, MaterialField(), pml, W300)
    c = circle_contour(radius=0.3, n=40)
    d = assemble_dsao(c, AIR, AIR, W300)
    rhs = np.random.default_rng(1).normal(size=base.n) + 0j
    inc = lambda p: np.exp(-1j * AIR.k(W300) * p[:, 0])
    coupled = solve(assemble_coupled_system(base, [Coupling(build_connection_matrix(m, c, pml), d)], W300, rhs, inc))
    plain = sps.linalg.splu(base.matrix).solve(rhs)
    diff = float(np.linalg.norm(coupled.E - plain) / np.linalg.norm(plain))
    verdict.check(diff <= 1e-12, f"Ys=0 vs pure FEM {diff:.1e}")
    errs = manufactured_errors([16, 32, 64])
    rate = float(np.log2(errs[-2] / errs[-1]))
    verdict.check(np.all(np.log2(errs[:-1] / errs[1:]) >= 1.8), f"O(h^2) rate {rate:.2f}")
    refl = pml_reflection()
    verdict.check(refl < 0.01, f"PML reflection {100 * refl:.2f}%")
    dt = time.perf_counter() - t0
    verdict.check(dt < 120, f"{dt:.1f} s")
    verdict.finish()

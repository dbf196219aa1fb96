"""End-to-end scenario execution: mesh, admittance operators, coupled solve, outputs."""

from __future__ import annotations

import math
import resource
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import postprocess as pp
from .coupling import build_connection_matrix
from .dsao import DsaoCache, Inclusion, assemble_dsao, interior_fill
from .errors import InvalidParameter
from .fem import Material, MaterialField, assemble_helmholtz, assemble_rhs_scattered, incident_field, pml_for_box
from .meshgen import RefineZone, build_scene_mesh, contour_band_levels, hex_points
from .mesh import TriMesh, interpolate
from .mie import LayeredCylinder, MieSolution
from .scenario import Scenario
from .solver import Coupling, assemble_coupled_system, condition_estimate, solve

TAG_BACKGROUND, TAG_PML, TAG_FIRST = 0, 1, 2


@dataclass
class CostReport:
    unknowns: int
    nonzeros: int
    peak_memory_bytes: int
    t_dsao_s: float
    t_fill_solve_s: float
    t_total_s: float
    factor_bytes: int = 0
    memory_source: str = "ru_maxrss"

    def as_text(self):
        return "\n".join([
            f"unknowns={self.unknowns}",
            f"nonzeros={self.nonzeros}",
            f"peak_memory_bytes={self.peak_memory_bytes} ({self.memory_source})",
            f"factor_bytes={self.factor_bytes}",
            f"t_dsao_s={self.t_dsao_s:.3f}",
            f"t_fill_solve_s={self.t_fill_solve_s:.3f}",
            f"t_total_s={self.t_total_s:.3f}",
        ]) + "\n"


@dataclass
class Model:
    """Discretized scenario ready to solve."""

    scenario: Scenario
    formulation: str
    mesh: TriMesh
    materials: MaterialField
    pml: object
    inclusions: list
    locals_: list = field(default_factory=list)


@dataclass(eq=False)
class RunResult:
    scenario: Scenario
    formulation: str
    model: Model
    solution: object
    dsaos: list
    cost: CostReport
    rcs: pp.RcsCurve | None = None
    grid: pp.FieldGrid | None = None
    current: pp.CurrentDensityMap | None = None
    metrics: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    cache: DsaoCache | None = None

    @property
    def traces(self):
        return self.solution.traces


def _peak_rss():
    return int(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss) * 1024


def _conductors(inc: Inclusion, omega):
    out = []
    if inc.material.conductivity(omega) > 0:
        out.append(inc)
    for h in inc.holes:
        out.extend(_conductors(h, omega))
    return out


def _contours(inc: Inclusion):
    out = [inc.contour]
    for h in inc.holes:
        out.extend(_contours(h))
    return out


def build_model(s: Scenario, formulation: str | None = None) -> Model:
    """PDE mesh and material map for one formulation."""
    form = formulation or s.formulation
    w = s.omega
    outer, pml = pml_for_box(s.box, s.h, s.pml_layers)
    incs = [d.inclusion(s.frequency) for d in s.domains]
    zones, embedded, extra = [], [], []
    for d, inc in zip(s.domains, incs):
        R = d.circumradius()
        if form == "hybrid-nonconformal":
            if s.h_near is not None and s.h_near < s.h:
                zones.append(RefineZone(tuple(inc.contour.centroid), 1.2 * R, s.h_near))
            continue
        zones.append(RefineZone(tuple(inc.contour.centroid), R + 0.5 * d.h, d.h))
        if form == "hybrid-conformal":
            embedded.append(inc.contour)
            continue
        conductors = {id(c) for c in _conductors(inc, w)}
        all_c = _contours(inc)
        for sub in _walk(inc):
            others = [c for c in all_c if c is not sub.contour]
            if id(sub) in conductors:
                delta = sub.material.skin_depth(w)
                h0 = min(0.5 * delta, d.h)
                extra.extend(contour_band_levels(sub.contour, h0, d.h, 1.3, others=others))
            else:
                embedded.append(sub.contour)
    mesh = build_scene_mesh(outer, s.h, zones, embedded, extra)
    bg = s.background()
    ref = s.reference_medium()
    regions = {TAG_BACKGROUND: bg, TAG_PML: ref}
    tags = np.where(pml.in_pml(mesh.centroids), TAG_PML, TAG_BACKGROUND)
    locals_ = []
    cent = mesh.centroids
    for i, (d, inc) in enumerate(zip(s.domains, incs)):
        local = s.local_background(inc.contour.centroid)
        locals_.append(local)
        inside = inc.contour.contains(cent)
        if form == "reference-fem":
            mats = inc.region_of(cent[inside])
            idx = np.flatnonzero(inside)
            for mat in dict.fromkeys(mats):
                tag = len(regions)
                regions[tag] = mat
                tags[idx[mats == mat]] = tag
        else:
            fill = interior_fill(local, s.fill_loss) if s.fill_loss > 0 else local
            tag = TAG_FIRST + i
            regions[tag] = fill
            tags[inside] = tag
    mesh = TriMesh(mesh.nodes, mesh.triangles, tags, mesh.boundary_node_flags, check=False)
    return Model(s, form, mesh, MaterialField(regions, ref), pml, incs, locals_)


def _walk(inc: Inclusion):
    yield inc
    for h in inc.holes:
        yield from _walk(h)


def _build_dsaos(model: Model, cache: DsaoCache):
    s = model.scenario
    w = s.omega

    def one(i):
        local = model.locals_[i]
        fill = interior_fill(local, s.fill_loss) if s.fill_loss > 0 else None
        return assemble_dsao(model.inclusions[i], mat_bg=local, omega=w, cache=cache, fill=fill)

    n = len(model.inclusions)
    if s.threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=s.threads) as ex:
            return list(ex.map(one, range(n)))
    return [one(i) for i in range(n)]


def _incident(s: Scenario):
    wave, ref = s.wave, s.reference_medium()
    return lambda p: incident_field(wave, ref, p)


def solve_model(model: Model, cache: DsaoCache | None = None):
    """Returns (solution, dsaos, t_dsao, t_fill_solve)."""
    s = model.scenario
    w = s.omega
    inc_fn = _incident(s)
    t0 = time.perf_counter()
    dsaos = []
    if model.formulation != "reference-fem":
        dsaos = _build_dsaos(model, cache if cache is not None else DsaoCache())
    t1 = time.perf_counter()
    base = assemble_helmholtz(model.mesh, model.materials, model.pml, w)
    rhs = assemble_rhs_scattered(model.mesh, model.materials, s.reference_medium(), s.wave, model.pml, base.free)
    couplings = [Coupling(build_connection_matrix(model.mesh, inc.contour, model.pml), ds)
                 for inc, ds in zip(model.inclusions, dsaos)]
    system = assemble_coupled_system(base, couplings, w, rhs, inc_fn if couplings else None)
    system.t_assemble = time.perf_counter() - t1
    sol = solve(system, inc_fn)
    t2 = time.perf_counter()
    sol.metadata["t_dsao_s"] = t1 - t0
    return sol, dsaos, t1 - t0, t2 - t1


def conductor_points(inc: Inclusion, omega, h):
    """Sample lattice inside every conductor, graded to a quarter skin depth at the surface."""
    out = []
    for c in _conductors(inc, omega):
        delta = c.material.skin_depth(omega)
        depth = min(8 * delta, 0.25 * float(np.sqrt(abs(c.contour.area))))
        band = pp.surface_graded_points(c.contour, 0.25 * delta, depth, spacing=min(h, float(c.contour.segment_lengths.mean())))
        lo, hi = c.contour.nodes.min(axis=0), c.contour.nodes.max(axis=0)
        # the core carries almost no current, a coarse lattice is enough
        step = max(h, 0.05 * float(np.sqrt(abs(c.contour.area))))
        core = hex_points((lo[0], lo[1], hi[0], hi[1]), step, origin=tuple(c.contour.centroid))
        core = core[c.contour.contains(core) & (c.contour.distance(core) > depth + 0.5 * step)]
        for hole in c.holes:
            band = band[~hole.contour.contains(band)]
            core = core[~hole.contour.contains(core)]
        out.append(np.concatenate([band, core]))
    return np.concatenate(out) if out else np.zeros((0, 2))


def current_map(result_model: Model, sol, dsaos):
    s = result_model.scenario
    w = s.omega
    pts_all, J_all = [], []
    for k, (d, inc) in enumerate(zip(s.domains, result_model.inclusions)):
        pts = conductor_points(inc, w, d.h)
        if len(pts) == 0:
            continue
        if dsaos:
            trace = sol.traces[k]
            modes = s.trace_modes
            if modes is None:
                # only a conducting skin makes the trace small next to the mesh ripple
                modes = 0
                if inc.material.conductivity(w) > 0:
                    modes = pp.default_trace_modes(inc.contour, result_model.locals_[k].k(w))
            if modes:
                trace = pp.band_limit(inc.contour, trace, modes)
            cm = pp.current_density_map(dsaos[k], trace, pts, w)
            J = cm.J
        else:
            mats = inc.region_of(pts)
            sig = np.array([m.conductivity(w) for m in mats])
            E = interpolate(result_model.mesh, sol.E_nodes, pts) + _incident(s)(pts)
            J = sig * E
        pts_all.append(pts)
        J_all.append(J)
    if not pts_all:
        return None
    return pp.CurrentDensityMap(np.concatenate(pts_all), np.concatenate(J_all))


def mie_oracle(s: Scenario):
    d = s.domains[0]
    mats = d.materials(s.frequency)
    cyl = LayeredCylinder(tuple(d.params["radii"]), tuple(mats), Material(s.eps_bg), tuple(d.center))
    return MieSolution(cyl, s.wave)


def near_field(model: Model, sol, dsaos):
    s = model.scenario
    x0, y0, x1, y1, nx, ny = s.nearfield
    spec = pp.GridSpec.over((x0, y0, x1, y1), nx, ny)
    if dsaos:
        return pp.near_field_grid(model.mesh, sol.E_nodes, list(zip(dsaos, sol.traces)), spec, s.wave,
                                  s.reference_medium(), model.pml)
    pts = spec.points()
    if np.any(model.pml.in_pml(pts)):
        raise InvalidParameter("near-field grid overlaps the PML")
    vals = interpolate(model.mesh, sol.E_nodes, pts) + _incident(s)(pts)
    region = np.zeros(len(pts), dtype=np.int8)
    for inc in model.inclusions:
        region[inc.contour.contains(pts)] = pp.REGION_SIE
    return pp.FieldGrid(spec, vals, region)


def run_scenario(s: Scenario, out_dir: Path | str | None = None, formulation: str | None = None,
                 cache: DsaoCache | None = None, model: Model | None = None) -> RunResult:
    """Mesh, assemble, solve and post-process one scenario; write CSVs when ``out_dir`` is given."""
    t_start = time.perf_counter()
    form = formulation or s.formulation
    if model is None:
        model = build_model(s, form)
    cache = cache if cache is not None else DsaoCache()
    sol, dsaos, t_dsao, t_fs = solve_model(model, cache)
    res = RunResult(s, form, model, sol, dsaos, None, cache=cache)
    bgm = s.reference_medium()
    if s.rcs_angles:
        angles = pp.default_angles(s.rcs_angles)
        res.rcs = pp.rcs_from_huygens(model.mesh, sol.E_nodes, s.huygens_rect(), s.wave, angles, bgm,
                                      [inc.contour for inc in model.inclusions], model.pml)
    if s.nearfield is not None:
        res.grid = near_field(model, sol, dsaos)
    if s.current:
        res.current = current_map(model, sol, dsaos)
    m = res.metrics
    m["unknowns"] = sol.metadata["unknowns"]
    m["elements"] = model.mesh.n_triangles
    if res.current is not None:
        peak, where = res.current.peak
        m["peak_J"] = peak
        m["peak_J_x"], m["peak_J_y"] = where
    if s.oracle == "mie":
        mie = mie_oracle(s)
        if res.rcs is not None:
            m["rcs_relative_error"] = pp.relative_error(res.rcs.sigma, mie.echo_width(res.rcs.angles))
        if res.grid is not None:
            ref = mie.field(res.grid.points)
            e = pp.near_field_relative_error(res.grid.values, ref)
            m["nearfield_max_error"] = e.max
            m["nearfield_below_3pct"] = e.below_3pct
            m["nearfield_below_5pct"] = e.below_5pct
    res.cost = CostReport(sol.metadata["unknowns"], sol.metadata["nnz"], _peak_rss(), t_dsao, t_fs,
                          time.perf_counter() - t_start, sol.metadata["factor_bytes"])
    if out_dir is not None:
        res.files = write_outputs(res, Path(out_dir))
    return res


def write_outputs(res: RunResult, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    files = []

    def put(name, writer, obj):
        p = out / name
        with open(p, "w", newline="") as f:
            writer(obj, f)
        files.append(p)

    if res.rcs is not None:
        put("rcs.csv", pp.write_rcs_csv, res.rcs)
    if res.grid is not None:
        put("nearfield.csv", pp.write_nearfield_csv, res.grid)
    if res.current is not None:
        put("current.csv", pp.write_current_csv, res.current)
    put("metrics.csv", pp.write_metrics_csv, res.metrics)
    report = out / "report.txt"
    meta = {k: v for k, v in res.solution.metadata.items()}
    lines = [f"scenario={res.scenario.name}", f"formulation={res.formulation}",
             f"frequency_hz={res.scenario.frequency!r}", f"elements={res.model.mesh.n_triangles}",
             f"dsao_assemblies={res.cache.assemblies if res.cache else 0}",
             f"dsao_cache_hits={res.cache.hits if res.cache else 0}"]
    lines += [f"{k}={v:.3f}" if k.startswith("t_") else f"{k}={v}" for k, v in meta.items()]
    report.write_text("\n".join(lines) + "\n" + res.cost.as_text())
    files.append(report)
    return files


# -- convergence ladder -------------------------------------------------------


def elements_for(s: Scenario, h):
    """Predicted element count of the uniform box grid at size ``h``."""
    x0, y0, x1, y1 = s.box
    t = 2 * s.pml_layers * h
    return 2 * math.ceil((x1 - x0 + t) / h) * math.ceil((y1 - y0 + t) / h)


def h_for_elements(s: Scenario, n):
    """Largest grid size whose predicted element count reaches ``n``."""
    lo, hi = 1e-6 * max(s.box[2] - s.box[0], s.box[3] - s.box[1]), s.h * 100
    for _ in range(80):
        mid = math.sqrt(lo * hi)
        if elements_for(s, mid) >= n:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class SweepRow:
    elements: int
    h: float
    relative_error: float
    condition: float


def convergence_sweep(s: Scenario, ladder, condition=True):
    """Run ``s`` at each target element count and compare with its oracle."""
    ladder = list(ladder)
    if not ladder or any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise InvalidParameter("element ladder must be strictly increasing")
    if s.oracle == "none":
        raise InvalidParameter("a sweep needs an oracle")
    rows = []
    ref_curve = None
    if s.oracle == "reference-fem":
        rr = run_scenario(s.scaled(0.5), formulation="reference-fem")
        ref_curve = rr.rcs.sigma
    for n in ladder:
        h = h_for_elements(s, n)
        # refinement zones add elements the box-grid estimate misses; correct from trial meshes
        for _ in range(2):
            model = build_model(s.scaled(h / s.h))
            h *= math.sqrt(model.mesh.n_triangles / n)
        sc = s.scaled(h / s.h)
        r = run_scenario(sc)
        if ref_curve is not None:
            re = pp.relative_error(r.rcs.sigma, ref_curve)
        else:
            re = r.metrics["rcs_relative_error"]
        cond = condition_estimate(r.solution.system) if condition else float("nan")
        rows.append(SweepRow(r.model.mesh.n_triangles, h, re, cond))
    return rows


def sweep_csv(rows, stream=None):
    text = "elements,h,relative_error,condition\n" + "".join(
        f"{r.elements},{r.h:.17g},{r.relative_error:.17g},{r.condition:.17g}\n" for r in rows)
    mono = all(b.relative_error < a.relative_error for a, b in zip(rows, rows[1:]))
    text += f"# relative error strictly decreasing: {'yes' if mono else 'no'}\n"
    if stream is not None:
        stream.write(text)
    return text

"""Command-line front end: ``em2d run|preset|sweep|mesh-info``."""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from .errors import (ConfigError, CouplingError, DegenerateElement, Em2dError, InteriorResonance,
                     InvalidGeometry, NearBoundaryWarning, NumericalFailure, ParseError, SingularSystem)
from .mesh import read_mesh
from .runner import convergence_sweep, run_scenario, sweep_csv
from .scenario import PRESETS, Scenario, format_config, parse_config, preset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_GEOMETRY = 4


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (NumericalFailure, SingularSystem, InteriorResonance)):
        return EXIT_NUMERICAL
    if isinstance(exc, (InvalidGeometry, CouplingError, DegenerateElement)):
        return EXIT_GEOMETRY
    return EXIT_CONFIG


def _threads(s: Scenario) -> Scenario:
    env = os.environ.get("EM2D_THREADS")
    if not env:
        return s
    try:
        n = int(env)
    except ValueError:
        raise ConfigError(f"not an integer: {env!r}", "EM2D_THREADS") from None
    if n < 1:
        raise ConfigError("must be at least 1", "EM2D_THREADS")
    return dataclasses.replace(s, threads=n)


def _load(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc.strerror}", "config") from None
    return _threads(parse_config(text, p.parent))


def _summary(res, out):
    lines = [f"{res.scenario.name} [{res.formulation}]"]
    lines += [f"  {k} = {v:.6g}" if isinstance(v, float) else f"  {k} = {v}" for k, v in res.metrics.items()]
    lines += ["  " + ln for ln in res.cost.as_text().splitlines()]
    if out is not None:
        lines.append(f"  outputs in {out}")
    print("\n".join(lines))


def cmd_run(args):
    s = _load(args.config)
    out = Path(args.out) if args.out else Path(args.config).with_suffix("")
    res = run_scenario(s, out, formulation=args.formulation)
    _summary(res, out)


def cmd_preset(args):
    s = _threads(preset(args.name))
    if args.print_config:
        sys.stdout.write(format_config(s))
        return
    out = Path(args.out) if args.out else Path(args.name)
    res = run_scenario(s, out, formulation=args.formulation)
    _summary(res, out)


def _ladder(text):
    try:
        vals = [int(float(t)) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"not a comma list of counts: {text!r}", "--elements") from None
    if not vals or any(v <= 0 for v in vals):
        raise ConfigError("counts must be positive", "--elements")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ConfigError("counts must be strictly increasing", "--elements")
    return vals


def cmd_sweep(args):
    ladder = _ladder(args.elements)
    if args.config in PRESETS and not Path(args.config).exists():
        s = _threads(preset(args.config))
    else:
        s = _load(args.config)
    rows = convergence_sweep(s, ladder, condition=not args.no_condition)
    text = sweep_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)


def cmd_mesh_info(args):
    try:
        with open(args.mesh) as f:
            mesh = read_mesh(f)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.mesh}: {exc.strerror}", "mesh") from None
    x0, y0, x1, y1 = mesh.bounding_box()
    d = mesh.element_diameters
    print(f"nodes      {mesh.n_nodes}")
    print(f"triangles  {mesh.n_triangles}")
    print(f"boundary   {len(mesh.boundary_edges)} edges")
    print(f"bbox       {x0:.6g} {y0:.6g} {x1:.6g} {y1:.6g}")
    print(f"diameter   min {d.min():.6g} median {float(np.median(d)):.6g} max {d.max():.6g}")
    print(f"area       {float(mesh.areas.sum()):.6g}")


def build_parser():
    p = argparse.ArgumentParser(prog="em2d", description="Hybrid FEM/surface-admittance TM scattering solver.")
    sub = p.add_subparsers(dest="command", required=True)
    forms = ("hybrid-nonconformal", "hybrid-conformal", "reference-fem")

    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: config path without suffix)")
    r.add_argument("--formulation", choices=forms)
    r.set_defaults(func=cmd_run)

    pr = sub.add_parser("preset", help="run a built-in scenario")
    pr.add_argument("name", choices=sorted(PRESETS))
    pr.add_argument("--out", help="output directory (default: ./<name>)")
    pr.add_argument("--formulation", choices=forms)
    pr.add_argument("--print-config", action="store_true", help="print the scenario as a config file and exit")
    pr.set_defaults(func=cmd_preset)

    sw = sub.add_parser("sweep", help="convergence ladder against the configured oracle")
    sw.add_argument("config", help="scenario file or preset name")
    sw.add_argument("--elements", required=True, help="strictly increasing element counts, e.g. 8000,16000,32000")
    sw.add_argument("--out", help="write the CSV here as well")
    sw.add_argument("--no-condition", action="store_true", help="skip the condition estimate")
    sw.set_defaults(func=cmd_sweep)

    mi = sub.add_parser("mesh-info", help="summarize a mesh file")
    mi.add_argument("mesh")
    mi.set_defaults(func=cmd_mesh_info)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    warnings.simplefilter("ignore", NearBoundaryWarning)
    try:
        args.func(args)
    except (Em2dError, ValueError) as exc:
        kind = "parse error" if isinstance(exc, ParseError) else type(exc).__name__
        print(f"em2d: {kind}: {exc}", file=sys.stderr)
        return exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

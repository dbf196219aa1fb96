"""Scenario description, INI parsing and built-in presets."""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .contour import BoundaryContour, circle_contour, read_contour, sector_contour, square_contour
from .dsao import FILL_LOSS, Inclusion
from .errors import ConfigError, Em2dError
from .fem import AIR, LinearProfile, Material, PlaneWave

FORMULATIONS = ("hybrid-nonconformal", "hybrid-conformal", "reference-fem")
SHAPES = ("circle", "square", "sector-set", "polygon")
ORACLES = ("none", "mie", "reference-fem")
COPPER_SIGMA = 5.8e7


@dataclass
class SieSpec:
    """One SIE domain.

    ``eps_r``, ``sigma`` and ``mu_r`` list one entry per layer, outermost
    first.  Shape parameters live in ``params``.
    """

    name: str
    shape: str
    center: tuple = (0.0, 0.0)
    h: float = 0.05
    rotation: float = 0.0  # degrees
    eps_r: tuple = (1.0,)
    sigma: tuple = (0.0,)
    mu_r: tuple = (1.0,)
    params: dict = field(default_factory=dict)

    def materials(self, frequency):
        w = 2 * math.pi * frequency
        out = []
        for e, s, m in zip(self.eps_r, self.sigma, self.mu_r):
            out.append(Material(complex(e) - 1j * s / (w * 8.8541878128e-12), complex(m)))
        return out

    def inclusion(self, frequency) -> Inclusion:
        mats = self.materials(frequency)
        c = np.asarray(self.center, dtype=float)
        rot = math.radians(self.rotation)
        p = self.params
        if self.shape == "circle":
            inc = None
            for r, mat in reversed(list(zip(p["radii"], mats))):
                n = max(8, int(math.ceil(2 * math.pi * r / self.h)))
                cont = circle_contour(tuple(c), r, n=n, phase=rot)
                inc = Inclusion(cont, mat, () if inc is None else (inc,))
            return inc
        if self.shape == "square":
            cont = square_contour((0.0, 0.0), p["side"], self.h).rotated(rot).translated(*c)
            return Inclusion(cont, mats[0])
        if self.shape == "polygon":
            cont = read_contour(Path(p["file"]).read_text()).rotated(rot).translated(*c)
            return Inclusion(cont, mats[0])
        if self.shape == "sector-set":
            return _sector_set(c, rot, self.h, p, mats)
        raise ConfigError(f"unknown shape {self.shape!r}", f"sie.{self.name}.shape")

    def circumradius(self):
        p = self.params
        if self.shape == "circle":
            return float(p["radii"][0])
        if self.shape == "square":
            return float(p["side"]) / math.sqrt(2)
        if self.shape == "sector-set":
            return float(p["sheath_radius"])
        nodes = read_contour(Path(p["file"]).read_text()).nodes
        return float(np.hypot(nodes[:, 0], nodes[:, 1]).max())


def _sector_set(center, rot, h, p, mats):
    """Sheath circle holding ``sectors`` conductors whose apexes sit ``gap`` off the axis."""
    n = int(p["sectors"])
    ang = math.radians(p.get("sector_angle", 360.0 / n))
    R, rs, g = p["sheath_radius"], p["sector_radius"], p["gap"]
    holes = []
    for i in range(n):
        start = rot + 2 * math.pi * i / n + 0.5 * (2 * math.pi / n - ang)
        mid = start + 0.5 * ang
        apex = center + g * np.array([math.cos(mid), math.sin(mid)])
        holes.append(Inclusion(sector_contour(apex, rs, ang, start, h), mats[1]))
    ns = max(8, int(math.ceil(2 * math.pi * R / h)))
    sheath = circle_contour(tuple(center), R, n=ns, phase=rot)
    return Inclusion(sheath, mats[0], tuple(holes))


@dataclass
class Scenario:
    name: str
    frequency: float
    angle: float = 0.0  # degrees
    formulation: str = "hybrid-nonconformal"
    threads: int = 1
    eps_bg: complex = 1.0
    graded: tuple | None = None  # (eps_lo, eps_hi, axis)
    box: tuple = (-1.0, -1.0, 1.0, 1.0)
    h: float = 0.05
    h_near: float | None = None
    pml_layers: int = 10
    fill_loss: float = FILL_LOSS
    domains: list = field(default_factory=list)
    rcs_angles: int = 0
    huygens: tuple | None = None
    nearfield: tuple | None = None  # (x0, y0, x1, y1, nx, ny)
    current: bool = False
    trace_modes: int | None = None  # None picks from k R, 0 disables
    oracle: str = "none"

    @property
    def wave(self):
        return PlaneWave(self.frequency, math.radians(self.angle))

    @property
    def omega(self):
        return 2 * math.pi * self.frequency

    def background(self):
        """Material (homogeneous) or LinearProfile over the physical box."""
        if self.graded is None:
            return Material(self.eps_bg)
        lo, hi, axis = self.graded
        x0, y0, x1, y1 = self.box
        a, b = (x0, x1) if axis == 0 else (y0, y1)
        return LinearProfile(lo, hi, a, b, axis)

    def reference_medium(self):
        """Medium of the incident plane wave and of the PML."""
        return AIR if self.graded is not None else Material(self.eps_bg)

    def local_background(self, point):
        bg = self.background()
        if isinstance(bg, Material):
            return bg
        return Material(complex(bg.at(np.array([point[0]]), np.array([point[1]]))[0]), bg.mu_r)

    def scaled(self, factor):
        """Copy with every mesh size multiplied by ``factor``."""
        doms = [dataclasses.replace(d, h=d.h * factor) for d in self.domains]
        return dataclasses.replace(self, h=self.h * factor,
                                   h_near=None if self.h_near is None else self.h_near * factor, domains=doms)

    def validate(self):
        if not self.frequency > 0:
            raise ConfigError("must be positive", "scenario.frequency")
        if self.formulation not in FORMULATIONS:
            raise ConfigError(f"must be one of {', '.join(FORMULATIONS)}", "scenario.formulation")
        if self.threads < 1:
            raise ConfigError("must be at least 1", "scenario.threads")
        x0, y0, x1, y1 = self.box
        if not (x1 > x0 and y1 > y0):
            raise ConfigError("needs x0 < x1 and y0 < y1", "pde.box")
        if not 0 < self.h < min(x1 - x0, y1 - y0):
            raise ConfigError("must be positive and smaller than the box", "pde.h")
        if self.h_near is not None and not 0 < self.h_near <= self.h:
            raise ConfigError("must lie in (0, h]", "pde.h_near")
        if self.pml_layers < 1:
            raise ConfigError("must be at least 1", "pde.pml_layers")
        if self.fill_loss < 0:
            raise ConfigError("must be non-negative", "pde.fill_loss")
        if self.oracle not in ORACLES:
            raise ConfigError(f"must be one of {', '.join(ORACLES)}", "output.oracle")
        if self.trace_modes is not None and self.trace_modes < 0:
            raise ConfigError("must be non-negative", "output.trace_modes")
        if self.rcs_angles < 0:
            raise ConfigError("must be non-negative", "output.rcs_angles")
        if self.rcs_angles and self.graded is not None:
            raise ConfigError("far fields need a homogeneous background", "output.rcs_angles")
        box = BoundaryContour([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
        incs = []
        for d in self.domains:
            key = f"sie.{d.name}"
            if d.shape not in SHAPES:
                raise ConfigError(f"must be one of {', '.join(SHAPES)}", key + ".shape")
            if not d.h > 0:
                raise ConfigError("must be positive", key + ".h")
            if not (len(d.eps_r) == len(d.sigma) == len(d.mu_r)):
                raise ConfigError("eps_r, sigma and mu_r need equal lengths", key + ".eps_r")
            if any(s < 0 for s in d.sigma):
                raise ConfigError("must be non-negative", key + ".sigma")
            need = {"circle": len(d.params.get("radii", ())), "square": 1, "polygon": 1, "sector-set": 2}[d.shape]
            if len(d.eps_r) != need:
                raise ConfigError(f"expected {need} layer(s)", key + ".eps_r")
            try:
                inc = d.inclusion(self.frequency)
            except ConfigError:
                raise
            except (Em2dError, ValueError, OSError) as exc:
                raise ConfigError(str(exc), key) from exc
            if not np.all(box.contains(inc.contour.nodes)):
                raise ConfigError("shape lies outside the PDE box", key + ".center")
            incs.append(inc)
        for i, a in enumerate(incs):
            for b in incs[i + 1:]:
                if a.contour.overlaps(b.contour):
                    raise ConfigError("SIE domains overlap", f"sie.{self.domains[i].name}")
        if self.huygens is not None:
            hx0, hy0, hx1, hy1 = self.huygens
            if not (x0 < hx0 < hx1 < x1 and y0 < hy0 < hy1 < y1):
                raise ConfigError("must lie inside the PDE box", "output.huygens")
        if self.nearfield is not None:
            gx0, gy0, gx1, gy1, nx, ny = self.nearfield
            if not (x0 <= gx0 < gx1 <= x1 and y0 <= gy0 < gy1 <= y1) or nx < 2 or ny < 2:
                raise ConfigError("grid must lie inside the PDE box with at least 2x2 points", "output.nearfield")
        if self.oracle == "mie":
            if len(self.domains) != 1 or self.domains[0].shape != "circle" or self.graded is not None:
                raise ConfigError("the series oracle needs one circular domain in a homogeneous background",
                                  "output.oracle")
        return self

    def huygens_rect(self):
        if self.huygens is not None:
            return self.huygens
        x0, y0, x1, y1 = self.box
        cx, cy, w, hgt = 0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0
        return (cx - 0.3 * w, cy - 0.3 * hgt, cx + 0.3 * w, cy + 0.3 * hgt)


# -- INI parsing ----------------------------------------------------------

_SCENARIO_KEYS = {"name", "frequency", "angle", "formulation", "threads"}
_BACKGROUND_KEYS = {"eps_r", "graded", "axis"}
_PDE_KEYS = {"box", "h", "h_near", "pml_layers", "fill_loss"}
_OUTPUT_KEYS = {"rcs_angles", "huygens", "nearfield", "current", "trace_modes", "oracle"}
_SIE_KEYS = {"shape", "center", "h", "rotation", "eps_r", "sigma", "mu_r", "radii", "side", "file",
             "sheath_radius", "sector_radius", "sectors", "sector_angle", "gap"}


def _floats(text, key, n=None):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"not a number list: {text!r}", key) from exc
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} values", key)
    return vals


def _complexes(text, key):
    try:
        return [complex(t.strip().replace(" ", "")) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"not a complex list: {text!r}", key) from exc


def _float(sec, name, key, default=None):
    if name not in sec:
        if default is None:
            raise ConfigError("missing required key", key)
        return default
    return _floats(sec[name], key, 1)[0]


def _int(sec, name, key, default):
    if name not in sec:
        return default
    try:
        return int(sec[name])
    except ValueError as exc:
        raise ConfigError(f"not an integer: {sec[name]!r}", key) from exc


def _check_keys(sec, allowed, prefix):
    for k in sec:
        if k not in allowed:
            raise ConfigError("unknown key", f"{prefix}.{k}")


def parse_config(text: str, base_dir: Path | str | None = None) -> Scenario:
    """Parse an INI scenario; every key error names its ``section.key`` path."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc
    for name in cp.sections():
        if name not in ("scenario", "background", "pde", "output") and not name.startswith("sie."):
            raise ConfigError("unknown section", name)
    for need in ("scenario", "pde"):
        if need not in cp:
            raise ConfigError("missing section", need)
    sc = cp["scenario"]
    _check_keys(sc, _SCENARIO_KEYS, "scenario")
    s = Scenario(name=sc.get("name", "scenario"), frequency=_float(sc, "frequency", "scenario.frequency"))
    s.angle = _float(sc, "angle", "scenario.angle", 0.0)
    s.formulation = sc.get("formulation", s.formulation).strip()
    s.threads = _int(sc, "threads", "scenario.threads", 1)
    if "background" in cp:
        bg = cp["background"]
        _check_keys(bg, _BACKGROUND_KEYS, "background")
        if "graded" in bg:
            lo, hi = _floats(bg["graded"], "background.graded", 2)
            axis = bg.get("axis", "y").strip()
            if axis not in ("x", "y"):
                raise ConfigError("must be x or y", "background.axis")
            s.graded = (lo, hi, 0 if axis == "x" else 1)
        if "eps_r" in bg:
            s.eps_bg = _complexes(bg["eps_r"], "background.eps_r")[0]
    pde = cp["pde"]
    _check_keys(pde, _PDE_KEYS, "pde")
    if "box" not in pde:
        raise ConfigError("missing required key", "pde.box")
    s.box = tuple(_floats(pde["box"], "pde.box", 4))
    s.h = _float(pde, "h", "pde.h")
    s.h_near = _float(pde, "h_near", "pde.h_near", 0.0) or None
    s.pml_layers = _int(pde, "pml_layers", "pde.pml_layers", 10)
    s.fill_loss = _float(pde, "fill_loss", "pde.fill_loss", FILL_LOSS)
    if "output" in cp:
        out = cp["output"]
        _check_keys(out, _OUTPUT_KEYS, "output")
        s.rcs_angles = _int(out, "rcs_angles", "output.rcs_angles", 0)
        if "huygens" in out:
            s.huygens = tuple(_floats(out["huygens"], "output.huygens", 4))
        if "nearfield" in out:
            v = _floats(out["nearfield"], "output.nearfield", 6)
            s.nearfield = (*v[:4], int(v[4]), int(v[5]))
        if "current" in out:
            try:
                s.current = out.getboolean("current")
            except ValueError as exc:
                raise ConfigError("not a boolean", "output.current") from exc
        if "trace_modes" in out:
            s.trace_modes = _int(out, "trace_modes", "output.trace_modes", None)
        s.oracle = out.get("oracle", "none").strip()
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    for name in cp.sections():
        if not name.startswith("sie."):
            continue
        sec = cp[name]
        _check_keys(sec, _SIE_KEYS, name)
        if "shape" not in sec:
            raise ConfigError("missing required key", f"{name}.shape")
        d = SieSpec(name=name[4:], shape=sec["shape"].strip())
        if "center" in sec:
            d.center = tuple(_floats(sec["center"], f"{name}.center", 2))
        d.h = _float(sec, "h", f"{name}.h", s.h)
        d.rotation = _float(sec, "rotation", f"{name}.rotation", 0.0)
        d.eps_r = tuple(_complexes(sec.get("eps_r", "1"), f"{name}.eps_r"))
        n = len(d.eps_r)
        d.sigma = tuple(_floats(sec["sigma"], f"{name}.sigma")) if "sigma" in sec else (0.0,) * n
        d.mu_r = tuple(_complexes(sec["mu_r"], f"{name}.mu_r")) if "mu_r" in sec else (1.0,) * n
        p = {}
        if d.shape == "circle":
            if "radii" not in sec:
                raise ConfigError("missing required key", f"{name}.radii")
            p["radii"] = _floats(sec["radii"], f"{name}.radii")
            r = np.asarray(p["radii"])
            if np.any(r <= 0) or np.any(np.diff(r) >= 0):
                raise ConfigError("must be positive and strictly decreasing", f"{name}.radii")
        elif d.shape == "square":
            p["side"] = _float(sec, "side", f"{name}.side")
            if p["side"] <= 0:
                raise ConfigError("must be positive", f"{name}.side")
        elif d.shape == "polygon":
            if "file" not in sec:
                raise ConfigError("missing required key", f"{name}.file")
            p["file"] = str(base / sec["file"].strip())
        elif d.shape == "sector-set":
            for k in ("sheath_radius", "sector_radius", "gap"):
                p[k] = _float(sec, k, f"{name}.{k}")
            p["sectors"] = _int(sec, "sectors", f"{name}.sectors", 3)
            if "sector_angle" in sec:
                p["sector_angle"] = _float(sec, "sector_angle", f"{name}.sector_angle")
            if p["sectors"] < 1 or p["gap"] < 0 or not 0 < p["sector_radius"] + p["gap"] < p["sheath_radius"]:
                raise ConfigError("sectors must fit inside the sheath", f"{name}.sector_radius")
        d.params = p
        s.domains.append(d)
    return s.validate()


def format_config(s: Scenario) -> str:
    """INI text that parses back to ``s``."""
    lines = ["[scenario]", f"name = {s.name}", f"frequency = {s.frequency!r}", f"angle = {s.angle!r}",
             f"formulation = {s.formulation}", f"threads = {s.threads}", "", "[background]"]
    if s.graded is not None:
        lines += [f"graded = {s.graded[0]!r}, {s.graded[1]!r}", f"axis = {'xy'[s.graded[2]]}"]
    else:
        lines += [f"eps_r = {_cstr(s.eps_bg)}"]
    lines += ["", "[pde]", "box = " + ", ".join(repr(float(v)) for v in s.box), f"h = {s.h!r}",
              f"pml_layers = {s.pml_layers}", f"fill_loss = {s.fill_loss!r}"]
    if s.h_near:
        lines.append(f"h_near = {s.h_near!r}")
    lines += ["", "[output]", f"rcs_angles = {s.rcs_angles}", f"current = {'yes' if s.current else 'no'}",
              f"oracle = {s.oracle}"]
    if s.trace_modes is not None:
        lines.append(f"trace_modes = {s.trace_modes}")
    if s.huygens is not None:
        lines.append("huygens = " + ", ".join(repr(float(v)) for v in s.huygens))
    if s.nearfield is not None:
        lines.append("nearfield = " + ", ".join(str(v) for v in s.nearfield))
    for d in s.domains:
        lines += ["", f"[sie.{d.name}]", f"shape = {d.shape}", f"center = {d.center[0]!r}, {d.center[1]!r}",
                  f"h = {d.h!r}", f"rotation = {d.rotation!r}", "eps_r = " + ", ".join(_cstr(e) for e in d.eps_r),
                  "sigma = " + ", ".join(repr(float(v)) for v in d.sigma),
                  "mu_r = " + ", ".join(_cstr(m) for m in d.mu_r)]
        for k, v in sorted(d.params.items()):
            lines.append(f"{k} = " + (", ".join(repr(float(x)) for x in v) if isinstance(v, (list, tuple)) else str(v)))
    return "\n".join(lines) + "\n"


def _cstr(z):
    z = complex(z)
    return repr(z.real) if z.imag == 0 else f"{z.real!r}{z.imag:+.17g}j"


# -- presets --------------------------------------------------------------


def preset_coated_circle(h=0.07):
    d = SieSpec("coat", "circle", h=h * 5 / 14, eps_r=(2.3, 4.0), sigma=(0.0, 0.0), mu_r=(1.0, 1.0),
                params={"radii": [0.6, 0.4]})
    return Scenario("coated-circle", 300e6, box=(-2.5, -2.5, 2.5, 2.5), h=h, h_near=h * 2 / 7, pml_layers=10,
                    domains=[d],
                    rcs_angles=360, huygens=(-1.5, -1.5, 1.5, 1.5), nearfield=(-1.2, -1.2, 1.2, 1.2, 200, 200),
                    oracle="mie").validate()


def preset_dielectric_circle(h=0.05):
    d = SieSpec("disk", "circle", h=h, eps_r=(4.0,), params={"radii": [0.4]})
    return Scenario("dielectric-circle", 300e6, box=(-2.0, -2.0, 2.0, 2.0), h=h, domains=[d], rcs_angles=360,
                    huygens=(-1.2, -1.2, 1.2, 1.2), oracle="mie").validate()


def preset_copper_cylinder(h=0.02):
    d = SieSpec("wire", "circle", h=2.5e-5, eps_r=(1.0,), sigma=(COPPER_SIGMA,), params={"radii": [2e-3]})
    return Scenario("copper-cylinder", 300e6, box=(-0.5, -0.5, 0.5, 0.5), h=h, h_near=1e-4, domains=[d],
                    rcs_angles=360, huygens=(-0.3, -0.3, 0.3, 0.3), current=True, oracle="mie").validate()


def _cable(name, center, h_sie):
    return SieSpec(name, "sector-set", center=center, h=h_sie, rotation=90.0, eps_r=(2.3, 1.0),
                   sigma=(0.0, COPPER_SIGMA), mu_r=(1.0, 1.0),
                   params={"sheath_radius": 2.5e-3, "sector_radius": 2e-3, "sectors": 3, "gap": 1.5e-4})


def preset_single_cable(h=2e-4):
    return Scenario("single-cable", 300e6, angle=90.0, graded=(1.0, 4.0, 1), box=(-5e-3, -5e-3, 5e-3, 5e-3), h=h,
                    domains=[_cable("cable", (0.0, 0.0), h / 4)], current=True).validate()


def preset_cable_array(h=2e-4, n=4, pitch=8e-3):
    xs = (np.arange(n) - 0.5 * (n - 1)) * pitch
    half = 0.5 * (n - 1) * pitch + 5e-3
    cables = [_cable(f"cable{i + 1}", (float(x), 0.0), h / 4) for i, x in enumerate(xs)]
    return Scenario("cable-array", 300e6, angle=90.0, graded=(1.0, 4.0, 1), box=(-half, -5e-3, half, 5e-3), h=h,
                    domains=cables, current=True).validate()


PRESETS = {
    "coated-circle": preset_coated_circle,
    "dielectric-circle": preset_dielectric_circle,
    "copper-cylinder": preset_copper_cylinder,
    "single-cable": preset_single_cable,
    "cable-array": preset_cable_array,
}


def preset(name: str) -> Scenario:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}", "preset") from None

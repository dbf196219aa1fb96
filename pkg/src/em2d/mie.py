"""Series solution for plane-wave scattering by a layered circular cylinder (TM).

Fields are expanded in azimuthal harmonics ``exp(j n (phi - phi_inc))``.
Each layer is matched through its modal admittance ``(1/mu) dE/drho / E``,
which stays well conditioned for lossy cores where Bessel functions of
large complex argument overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import InvalidParameter, NumericalFailure
from .fem import Material, PlaneWave

N_MAX = 200


def _ratio_j(n, z):
    """``z J_n'(z) / J_n(z)`` from exponentially scaled values."""
    jm = special.jve(n, z)
    jp = 0.5 * (special.jve(n - 1, z) - special.jve(n + 1, z))
    return z * jp / jm


@dataclass
class LayeredCylinder:
    """Concentric cylinder; ``radii`` and ``materials`` are listed outermost first."""

    radii: tuple
    materials: tuple
    background: Material
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        if len(r) == 0 or len(r) != len(self.materials):
            raise InvalidParameter("need one material per radius")
        if np.any(r <= 0) or np.any(np.diff(r) >= 0):
            raise InvalidParameter("radii must be positive and strictly decreasing")


class MieSolution:
    def __init__(self, cyl: LayeredCylinder, wave: PlaneWave, tail=1e-12):
        self.cyl = cyl
        self.wave = wave
        w = wave.omega
        self.k0 = cyl.background.k(w)
        a_out = cyl.radii[0]
        n_try = int(math.ceil(abs(self.k0 * a_out))) + 15
        while True:
            if n_try > N_MAX:
                raise NumericalFailure("series did not converge within 200 harmonics")
            n = np.arange(n_try + 1)
            a, self._layers = self._coefficients(n)
            big = max(float(np.abs(a).max()), 1e-300)
            if np.all(np.abs(a[-3:]) < tail * big) or big <= 1e-300:
                break
            n_try += 10
        self.n = n
        self.a = a
        # incident phase at the cylinder axis
        cx, cy = cyl.center
        self._phase = wave.amplitude * np.exp(-1j * self.k0 * (cx * math.cos(wave.angle) + cy * math.sin(wave.angle)))

    def _coefficients(self, n):
        cyl, w = self.cyl, self.wave.omega
        mats, radii = cyl.materials, cyl.radii
        # admittance seen from just outside each interface, innermost first
        layers = []
        k_in = mats[-1].k(w)
        y = _ratio_j(n, k_in * radii[-1]) / radii[-1] / mats[-1].mu_r
        layers.append({"k": k_in, "mu": mats[-1].mu_r, "B": None})
        for i in range(len(radii) - 2, -1, -1):
            k = mats[i].k(w)
            mu = mats[i].mu_r
            r_in, r_out = radii[i + 1], radii[i]
            J, Y = special.jv(n, k * r_in), special.yv(n, k * r_in)
            Jp, Yp = special.jvp(n, k * r_in), special.yvp(n, k * r_in)
            # f = J + B Y with (k/mu) f'/f = y at r_in
            B = -(k / mu * Jp - y * J) / (k / mu * Yp - y * Y)
            Jo, Yo = special.jv(n, k * r_out), special.yv(n, k * r_out)
            Jpo, Ypo = special.jvp(n, k * r_out), special.yvp(n, k * r_out)
            y = k / mu * (Jpo + B * Ypo) / (Jo + B * Yo)
            layers.append({"k": k, "mu": mu, "B": B})
        k0 = self.k0
        mu0 = cyl.background.mu_r
        a0 = radii[0]
        J, H = special.jv(n, k0 * a0), special.hankel2(n, k0 * a0)
        Jp, Hp = special.jvp(n, k0 * a0), special.h2vp(n, k0 * a0)
        a = -(k0 / mu0 * Jp - y * J) / (k0 / mu0 * Hp - y * H)
        return a, layers[::-1]

    # -- far field ------------------------------------------------------

    def echo_width(self, angles):
        """2D echo width in meters at observation angles (radians)."""
        phi = np.atleast_1d(np.asarray(angles, dtype=float)) - self.wave.angle
        s = self.a[0] + 2.0 * np.sum(self.a[1:, None] * np.cos(self.n[1:, None] * phi[None]), axis=0)
        return 4.0 / self.k0.real * np.abs(s * self.wave.amplitude) ** 2

    def optical_theorem_defect(self):
        """``max |Re a_n + |a_n|^2| / max |a_n|`` (zero for lossless media)."""
        return float(np.max(np.abs(self.a.real + np.abs(self.a) ** 2)) / max(np.abs(self.a).max(), 1e-300))

    # -- near field -----------------------------------------------------

    def field(self, points):
        """Total E_z at ``points``."""
        p = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(self.cyl.center)
        rho = np.hypot(p[:, 0], p[:, 1])
        phi = np.arctan2(p[:, 1], p[:, 0]) - self.wave.angle
        n = self.n
        radii = self.cyl.radii
        # modal amplitude of E at the outer radius of each layer
        k0 = self.k0
        e_out = special.jv(n, k0 * radii[0]) + self.a * special.hankel2(n, k0 * radii[0])
        radial = np.zeros((len(n), len(p)), dtype=complex)
        outside = rho >= radii[0]
        if outside.any():
            # scattered part only; the incident wave is added in closed form
            z = k0 * rho[outside]
            radial[:, outside] = self.a[:, None] * special.hankel2(n[:, None], z[None])
        amp = e_out
        for i, lay in enumerate(self._layers):
            r_out = radii[i]
            r_in = radii[i + 1] if i + 1 < len(radii) else 0.0
            sel = (rho < r_out) & (rho >= r_in)
            k = lay["k"]
            if lay["B"] is None:
                if sel.any():
                    # J_n(k r) / J_n(k r_out) via scaled Bessel functions
                    z = k * rho[sel]
                    num = special.jve(n[:, None], z[None])
                    den = special.jve(n, k * r_out)[:, None]
                    scale = np.exp(abs(k.imag) * (rho[sel] - r_out))[None]
                    radial[:, sel] = amp[:, None] * num / den * scale
                break
            B = lay["B"]
            f_out = special.jv(n, k * r_out) + B * special.yv(n, k * r_out)
            if sel.any():
                z = k * rho[sel]
                f = special.jv(n[:, None], z[None]) + B[:, None] * special.yv(n[:, None], z[None])
                radial[:, sel] = amp[:, None] * f / f_out[:, None]
            amp = amp * (special.jv(n, k * r_in) + B * special.yv(n, k * r_in)) / f_out
        weight = np.where(n == 0, 1.0, 2.0)
        # incident expansion carries (-j)^n
        coef = weight * (-1j) ** n
        out = np.sum(coef[:, None] * radial * np.cos(n[:, None] * phi[None]), axis=0)
        out[outside] += np.exp(-1j * k0 * rho[outside] * np.cos(phi[outside]))
        return self._phase * out

    def scattered(self, points):
        """Scattered E_z outside the cylinder."""
        p = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(self.cyl.center)
        rho = np.hypot(p[:, 0], p[:, 1])
        phi = np.arctan2(p[:, 1], p[:, 0]) - self.wave.angle
        n = self.n
        coef = np.where(n == 0, 1.0, 2.0) * (-1j) ** n * self.a
        h = special.hankel2(n[:, None], self.k0 * rho[None])
        return self._phase * np.sum(coef[:, None] * h * np.cos(n[:, None] * phi[None]), axis=0)


def mie_coated_cylinder(a_inner, a_outer, mat_inner: Material, mat_coat: Material, mat_bg: Material,
                        omega, angles, center=(0.0, 0.0), angle_inc=0.0):
    """Echo width (m) of a coated cylinder plus the solution object for field evaluation."""
    if not 0 < a_inner < a_outer:
        raise InvalidParameter("need 0 < a_inner < a_outer")
    wave = PlaneWave(omega / (2 * math.pi), angle_inc)
    sol = MieSolution(LayeredCylinder((a_outer, a_inner), (mat_coat, mat_inner), mat_bg, center), wave)
    return sol.echo_width(angles), sol

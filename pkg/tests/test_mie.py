import math

import numpy as np
import pytest

from em2d.errors import InvalidParameter
from em2d.fem import AIR, Material, PlaneWave
from em2d.mie import LayeredCylinder, MieSolution, mie_coated_cylinder

W300 = 2 * math.pi * 300e6
ANG = np.linspace(0, 2 * math.pi, 90, endpoint=False)


def test_lossless_coefficients_satisfy_optical_theorem():
    sol = MieSolution(LayeredCylinder((0.6, 0.4), (Material(2.3), Material(4.0)), AIR), PlaneWave(300e6))
    assert sol.optical_theorem_defect() < 1e-8


def test_equal_layers_reduce_to_single_cylinder():
    s2, _ = mie_coated_cylinder(0.4, 0.6, Material(4.0), Material(4.0), AIR, W300, ANG)
    s1 = MieSolution(LayeredCylinder((0.6,), (Material(4.0),), AIR), PlaneWave(300e6)).echo_width(ANG)
    np.testing.assert_allclose(s2, s1, rtol=1e-12)


def test_no_contrast_means_no_scattering():
    s, sol = mie_coated_cylinder(0.4, 0.6, AIR, AIR, AIR, W300, ANG)
    assert np.abs(s).max() < 1e-20
    p = np.array([[0.1, 0.2], [1.0, -0.5]])
    np.testing.assert_allclose(sol.field(p), np.exp(-1j * AIR.k(W300) * p[:, 0]), atol=1e-10)


def test_field_is_continuous_across_interfaces():
    _, sol = mie_coated_cylinder(0.4, 0.6, Material(4.0 - 1j), Material(2.3), AIR, W300, ANG)
    for r in (0.4, 0.6):
        th = np.array([0.3, 1.7, 3.0])
        d = np.c_[np.cos(th), np.sin(th)]
        np.testing.assert_allclose(sol.field((r - 1e-9) * d), sol.field((r + 1e-9) * d), rtol=1e-6)


def test_scattered_plus_incident_is_total_outside():
    _, sol = mie_coated_cylinder(0.4, 0.6, Material(4.0), Material(2.3), AIR, W300, ANG)
    p = np.array([[0.9, 0.1], [-0.7, 0.8]])
    inc = np.exp(-1j * AIR.k(W300) * p[:, 0])
    np.testing.assert_allclose(sol.scattered(p) + inc, sol.field(p), rtol=1e-12)


def test_argument_validation():
    with pytest.raises(InvalidParameter):
        mie_coated_cylinder(0.6, 0.4, Material(4.0), Material(2.3), AIR, W300, ANG)
    with pytest.raises(InvalidParameter):
        LayeredCylinder((0.4, 0.6), (AIR, AIR), AIR)
    with pytest.raises(InvalidParameter):
        LayeredCylinder((0.4,), (AIR, AIR), AIR)

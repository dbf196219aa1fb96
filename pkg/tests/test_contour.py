import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from em2d.contour import (BoundaryContour, circle_contour, read_contour, sector_contour, square_contour,
                          subdivide, write_contour)
from em2d.errors import InvalidGeometry, ParseError


def test_orientation_and_simplicity_enforced():
    sq = [[0, 0], [1, 0], [1, 1], [0, 1]]
    assert BoundaryContour(sq).area == pytest.approx(1.0)
    with pytest.raises(InvalidGeometry):
        BoundaryContour(sq[::-1])
    with pytest.raises(InvalidGeometry):
        BoundaryContour([[0, 0], [1, 1], [1, 0], [0, 1]])
    with pytest.raises(InvalidGeometry):
        BoundaryContour([[0, 0], [1, 0]])


def test_circle_geometry():
    c = circle_contour((1.0, -2.0), 0.5, n=400)
    assert c.perimeter == pytest.approx(math.pi, rel=1e-4)
    np.testing.assert_allclose(c.centroid, [1.0, -2.0], atol=1e-12)
    np.testing.assert_allclose(np.hypot(*(c.nodes - [1, -2]).T), 0.5)
    # outward normals point away from the centre
    mid = c.nodes + 0.5 * c.segment_vectors
    assert np.all(np.sum(c.outward_normals * (mid - [1, -2]), axis=1) > 0)


def test_gram_matrix_integrates_products():
    c = square_contour(side=2.0, h=0.25)
    G = c.gram_matrix()
    one = np.ones(c.m)
    assert one @ G @ one == pytest.approx(c.perimeter)
    x = c.nodes[:, 0]
    # int x^2 over the square boundary: two sides at x=+-1 (length 2) plus two sides of int_{-1}^{1} x^2
    assert x @ G @ x == pytest.approx(2 * 2 + 2 * 2 / 3)


def test_contains_and_distance():
    c = square_contour(side=2.0, h=0.5)
    pts = np.array([[0, 0], [0.99, 0.5], [1.01, 0], [3, 3], [-0.5, -0.999]])
    np.testing.assert_array_equal(c.contains(pts), [True, True, False, False, True])
    np.testing.assert_allclose(c.distance(pts[:3]), [1.0, 0.01, 0.01], atol=1e-12)


def test_sector_contour():
    s = sector_contour((0, 0), 1.0, math.pi / 2, 0.0, 0.05)
    assert s.area == pytest.approx(math.pi / 4, rel=2e-3)
    assert s.contains([[0.3, 0.3]])[0] and not s.contains([[-0.1, 0.3]])[0]


def test_overlap_checks():
    a = circle_contour((0, 0), 1.0, n=64)
    assert a.overlaps(circle_contour((0.5, 0), 1.0, n=64))
    assert a.overlaps(circle_contour((0, 0), 0.2, n=16))
    assert not a.overlaps(circle_contour((3, 0), 1.0, n=64))


def test_subdivide_prolongation():
    c = circle_contour(radius=1.0, n=10)
    fine, P = subdivide(c, 4)
    assert fine.m == 40
    np.testing.assert_allclose(P @ c.nodes, fine.nodes, atol=1e-15)
    np.testing.assert_allclose(P.sum(axis=1), 1.0)


def test_contour_io_round_trip():
    c = circle_contour((0.25, 0.5), 0.3, n=17)
    text = write_contour(c)
    again = read_contour(text)
    np.testing.assert_array_equal(again.nodes, c.nodes)
    with pytest.raises(ParseError):
        read_contour("contour 1\nnodes 3\n0 0\n1 0\n")
    with pytest.raises(ParseError):
        read_contour("polygon\n")


@settings(max_examples=30, deadline=None)
@given(angle=st.floats(0, 2 * math.pi), dx=st.floats(-5, 5), dy=st.floats(-5, 5))
def test_rigid_motion_preserves_metrics(angle, dx, dy):
    c = sector_contour((0, 0), 1.0, 2.0, 0.3, 0.1)
    moved = c.rotated(angle).translated(dx, dy)
    assert moved.area == pytest.approx(c.area, rel=1e-12)
    np.testing.assert_allclose(moved.segment_lengths, c.segment_lengths, rtol=1e-9)
    np.testing.assert_allclose(moved.gram_matrix(), c.gram_matrix(), rtol=1e-9, atol=1e-15)

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from em2d.errors import DegenerateElement, InvalidParameter, ParseError
from em2d.mesh import TriMesh, element_geometry, interpolate, locate_point, read_mesh, write_mesh
from em2d.meshgen import build_rect_mesh

SQUARE = """mesh2d 1
nodes 4
0 0
1 0
1 1
0 1
triangles 2
0 1 2 0
0 2 3 0
"""


@pytest.mark.parametrize("box,h,ntri,nnode", [
    ((0, 0, 1, 1), 0.5, 8, 9),
    ((0, 0, 1, 1), 1.0, 2, 4),
    ((0, 0, 5, 5), 0.05, 20000, 10201),
])
def test_rect_mesh_counts(box, h, ntri, nnode):
    m = build_rect_mesh(box, h)
    assert (m.n_triangles, m.n_nodes) == (ntri, nnode)
    assert np.all(m.areas > 0)
    assert m.areas.sum() == pytest.approx((box[2] - box[0]) * (box[3] - box[1]))


def test_element_geometry_unit_triangle():
    m = TriMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    g = element_geometry(m, 0)
    np.testing.assert_allclose(g.b, [-1, 1, 0])
    np.testing.assert_allclose(g.c, [-1, 0, 1])
    assert g.area == pytest.approx(0.5)
    np.testing.assert_allclose(g.shape(1 / 3, 1 / 3), [1 / 3] * 3)
    np.testing.assert_allclose(g.shape(*m.nodes.T), np.eye(3), atol=1e-15)


def test_element_geometry_scaled_triangle():
    m = TriMesh([[0, 0], [2, 0], [0, 2]], [[0, 1, 2]])
    g = element_geometry(m, 0)
    assert g.area == pytest.approx(2.0)
    assert g.shape(0.5, 0.5)[0] == pytest.approx(0.5)


def test_degenerate_and_bad_meshes():
    with pytest.raises(DegenerateElement):
        TriMesh([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]])
    with pytest.raises(DegenerateElement):
        TriMesh([[0, 0], [0, 1], [1, 0]], [[0, 1, 2]])  # clockwise
    with pytest.raises(InvalidParameter):
        TriMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 5]])
    with pytest.raises(InvalidParameter):
        TriMesh([[0, 0], [1, 0], [0, 1], [0, 0]], [[0, 1, 2]])


def test_locate_shared_vertex_lowest_index_wins():
    m = build_rect_mesh((0, 0, 1, 1), 0.25)
    v = 6
    owners = np.flatnonzero(np.any(m.triangles == v, axis=1))
    assert len(owners) > 1
    e, w = locate_point(m, m.nodes[v])
    assert e == owners.min()
    j = list(m.triangles[e]).index(v)
    assert w[j] == 1.0 and w.sum() == 1.0


def test_locate_centroid_and_outside():
    m = build_rect_mesh((0, 0, 1, 1), 0.25)
    for e in (0, 7, 31):
        got, w = locate_point(m, m.centroids[e])
        assert got == e
        np.testing.assert_allclose(w, [1 / 3] * 3, atol=1e-14)
    assert locate_point(m, (1.5, 0.5)) is None
    assert locate_point(m, (-1e-3, 0.5)) is None


def test_interpolate_reproduces_linear_fields():
    m = build_rect_mesh((-1, -1, 2, 1), 0.3)
    rng = np.random.default_rng(0)
    pts = rng.uniform([-1, -1], [2, 1], size=(200, 2))
    f = lambda p: 2.0 - 3.0 * p[..., 0] + 0.5 * p[..., 1]
    np.testing.assert_allclose(interpolate(m, f(m.nodes), pts), f(pts), atol=1e-12)
    assert np.isnan(interpolate(m, f(m.nodes), [[5.0, 5.0]])[0])


def test_read_square():
    m = read_mesh(SQUARE)
    assert m.n_nodes == 4 and m.n_triangles == 2


def test_read_rejects_bad_node_reference():
    with pytest.raises(ParseError) as err:
        read_mesh(SQUARE.replace("0 2 3 0", "0 2 99 0"))
    assert err.value.line == 9


@pytest.mark.parametrize("text", [
    "",
    "mesh2d 2\n",
    SQUARE.replace("1 1\n", "1 x\n"),
    SQUARE + "extra\n",
    SQUARE.replace("triangles 2", "triangles 3"),
    SQUARE.replace("0 2 3 0", "0 3 2 0"),
])
def test_read_rejects_malformed(text):
    with pytest.raises(ParseError):
        read_mesh(text)


def test_write_read_round_trip():
    m = build_rect_mesh((0, 0, 0.7, 0.3), 0.1, tag=3)
    text = write_mesh(m)
    again = read_mesh(io.StringIO(text))
    np.testing.assert_array_equal(again.nodes, m.nodes)
    np.testing.assert_array_equal(again.triangles, m.triangles)
    np.testing.assert_array_equal(again.region_tag, m.region_tag)
    assert write_mesh(again) == text
    # comments and blank lines normalize away
    assert write_mesh(read_mesh("# header\n\n" + SQUARE)) == write_mesh(read_mesh(SQUARE))


@settings(max_examples=40, deadline=None)
@given(x=st.floats(0, 1), y=st.floats(0, 1), h=st.sampled_from([0.5, 0.25, 0.2, 0.1]))
def test_located_weights_are_a_partition_of_unity(x, y, h):
    m = build_rect_mesh((0, 0, 1, 1), h)
    e, w = locate_point(m, (x, y))
    assert np.all(w >= 0) and w.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(w @ m.nodes[m.triangles[e]], [x, y], atol=1e-12)

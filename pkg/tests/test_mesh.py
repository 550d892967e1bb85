import io

import numpy as np
import pytest

from biothdg.mesh import (MeshError, build_rectangle, build_structured_square, read_mesh, refine,
                          tag_boundary, uniform_refine, write_mesh)
from biothdg.mms import footing_case, cantilever_case, unit_square_mms_tags

from conftest import mms_square


def test_smallest_square():
    m = build_structured_square(1)
    assert (m.num_cells, m.num_facets, int(m.boundary.sum())) == (2, 5, 4)


@pytest.mark.parametrize("n,cells", [(4, 32), (8, 128)])
def test_square_counts_and_area(n, cells):
    m = build_structured_square(n)
    assert m.num_cells == cells
    assert abs(m.areas.sum() - 1.0) < 1e-14
    assert abs(m.h_max - np.sqrt(2) / n) < 1e-14


def test_crisscross_square():
    m = build_structured_square(3, "crisscross")
    assert m.num_cells == 36 and abs(m.areas.sum() - 1) < 1e-14
    with pytest.raises(MeshError):
        build_structured_square(2, "zigzag")
    with pytest.raises(MeshError):
        build_structured_square(0)


def test_rectangles():
    m = build_rectangle((-50, 50), (0, 75), 4, 3)
    assert m.num_cells == 24 and abs(m.areas.sum() - 7500) < 1e-9
    a, b = build_rectangle((0, 1), (0, 1), 2, 2), build_structured_square(2)
    assert np.array_equal(a.cells, b.cells) and np.array_equal(a.facets, b.facets)
    assert build_rectangle((-50, 50), (0, 75), 64, 64).num_cells == 8192
    with pytest.raises(MeshError):
        build_rectangle((1, 1), (0, 1), 2, 2)


@pytest.mark.parametrize("mesh", [build_structured_square(5), build_structured_square(3, "crisscross"),
                                  build_rectangle((0, 2), (0, 1), 3, 2)])
def test_topology_invariants(mesh):
    assert np.all(mesh.areas > 0)
    assert mesh.num_vertices - mesh.num_facets + mesh.num_cells == 1
    interior = ~mesh.boundary
    assert np.all(mesh.facet_cells[interior] >= 0)
    assert np.all(mesh.facet_cells[mesh.boundary, 1] == -1)
    # outward normals of the two neighbours are opposite
    n = mesh.local_normals
    c0, c1 = mesh.facet_cells[interior].T
    e0, e1 = mesh.facet_local[interior].T
    assert np.allclose(n[c0, e0], -n[c1, e1], atol=1e-14)
    # every facet appears in its cells' facet lists
    for f in np.flatnonzero(interior)[:10]:
        for c, e in zip(mesh.facet_cells[f], mesh.facet_local[f]):
            assert mesh.cell_facets[c, e] == f


def test_mms_tags():
    m = mms_square(4)
    mids = m.facet_midpoints
    for f in np.flatnonzero(m.boundary):
        x, y = mids[f]
        d = "T" if abs(x - 1) < 1e-12 else "D"
        p = "P" if (abs(y) < 1e-12 or abs(x - 1) < 1e-12) else "F"
        assert (m.disp_tag[f], m.flow_tag[f]) == (d, p)
    assert m.is_tagged
    m.validate()


def test_cantilever_and_all_dirichlet_tags():
    m = cantilever_case().mesh()
    b = m.boundary
    assert np.all(m.flow_tag[b] == "F")
    left = np.abs(m.facet_midpoints[:, 0]) < 1e-12
    assert np.all(m.disp_tag[b & left] == "D") and np.all(m.disp_tag[b & ~left] == "T")
    one = tag_boundary(build_structured_square(1), {"D": lambda x, y: True}, {"P": lambda x, y: True})
    assert int((one.disp_tag == "D").sum()) == 4 and int((one.flow_tag == "P").sum()) == 4


def test_tagging_errors_name_the_midpoint():
    m = build_structured_square(1)
    with pytest.raises(MeshError, match="unmatched"):
        tag_boundary(m, {"D": lambda x, y: x < 0.1}, {"P": lambda x, y: True})
    with pytest.raises(MeshError, match="matched by"):
        tag_boundary(m, {"D": lambda x, y: True, "T": lambda x, y: True}, {"P": lambda x, y: True})
    with pytest.raises(MeshError):
        tag_boundary(m, {"X": lambda x, y: True}, {"P": lambda x, y: True})


def test_validate_requires_dirichlet_part():
    m = tag_boundary(build_structured_square(1), {"T": lambda x, y: True}, {"P": lambda x, y: True})
    with pytest.raises(MeshError):
        m.validate()


def test_refinement():
    m = mms_square(1)
    f = uniform_refine(m)
    assert f.num_cells == 8 and abs(f.areas.sum() - 1) < 1e-14
    r2 = refine(m, 2)
    assert abs(r2.h_max - m.h_max / 4) < 1e-14
    assert abs(r2.tag_measure("D") - m.tag_measure("D")) < 1e-14
    # tags inherited: refined mesh matches the directly tagged one
    direct = unit_square_mms_tags(r2)
    assert np.array_equal(direct.disp_tag, r2.disp_tag) and np.array_equal(direct.flow_tag, r2.flow_tag)
    big = refine(build_rectangle((0, 1), (0, 1), 8, 12), 1)
    assert big.num_cells == 4 * 192


def test_file_round_trip_is_exact():
    m = mms_square(3)
    buf = io.StringIO()
    write_mesh(m, buf)
    text = buf.getvalue()
    back = read_mesh(io.StringIO(text))
    assert np.array_equal(back.vertices, m.vertices) and np.array_equal(back.cells, m.cells)
    assert np.array_equal(back.disp_tag, m.disp_tag) and np.array_equal(back.flow_tag, m.flow_tag)
    buf2 = io.StringIO()
    write_mesh(back, buf2)
    assert buf2.getvalue() == text
    assert back.digest() == m.digest()
    with pytest.raises(MeshError):
        read_mesh(io.StringIO("not a mesh\n"))


def test_locate():
    m = build_structured_square(4)
    pts = np.array([[0.26, 0.5], [0.99, 0.01], [0.0, 0.0]])
    cells, ref = m.locate(pts)
    v = m.cell_coords[cells]
    back = v[:, 0] + np.einsum("nab,nb->na", np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], -1), ref)
    assert np.allclose(back, pts)
    with pytest.raises(MeshError):
        m.locate([[1.5, 0.5]])

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracdd.mesh import (DARCY_NOFLUX, DARCY_PRESSURE, INTERFACE, NOSLIP, TRACTION, build_two_domain_mesh,
                         build_unit_cube_mesh, build_unit_square_mesh, cell_volumes, extract_trace_mesh,
                         mesh_entities, write_mesh_text)


def all_tags(mesh):
    return set(np.unique(mesh.facet_markers).tolist())


def facet_cell_counts(mesh):
    d = mesh.dim
    faces = np.sort(np.vstack([np.delete(mesh.cells, k, axis=1) for k in range(d + 1)]), axis=1)
    _, counts = np.unique(faces, axis=0, return_counts=True)
    return faces, counts


@pytest.mark.parametrize("n, nv, nc", [(1, 4, 2), (2, 9, 8)])
def test_unit_square_counts(n, nv, nc):
    m = build_unit_square_mesh(n)
    assert m.num_vertices == nv and m.num_cells == nc
    if n == 1:
        assert len(m.facets) == 4


@pytest.mark.parametrize("n, nv, nc", [(1, 8, 6), (2, 27, 48)])
def test_unit_cube_counts(n, nv, nc):
    m = build_unit_cube_mesh(n)
    assert m.num_vertices == nv and m.num_cells == nc


def test_total_measure():
    assert abs(cell_volumes(build_unit_square_mesh(4)).sum() - 1.0) <= 1e-14
    assert abs(cell_volumes(build_unit_cube_mesh(2)).sum() - 1.0) <= 1e-14


@pytest.mark.parametrize("build", [build_unit_square_mesh, build_unit_cube_mesh])
def test_zero_cells_rejected(build):
    with pytest.raises(ValueError):
        build(0)


@settings(max_examples=15, deadline=None)
@given(n=st.integers(1, 6), d=st.sampled_from([2, 3]))
def test_mesh_invariants(n, d):
    m = (build_unit_square_mesh if d == 2 else build_unit_cube_mesh)(n)
    assert np.all(cell_volumes(m) > 0)
    assert m.vertices.min() >= 0.0 and m.vertices.max() <= 1.0
    faces, counts = facet_cell_counts(m)
    assert set(counts.tolist()) <= {1, 2}
    boundary = {tuple(f) for f, c in zip(np.unique(faces, axis=0), counts) if c == 1}
    assert boundary == {tuple(f) for f in np.sort(m.facets, axis=1)}


@pytest.mark.parametrize("d", [2, 3])
def test_refinement_multiplies_cells(d):
    build = build_unit_square_mesh if d == 2 else build_unit_cube_mesh
    assert build(4).num_cells == 2 ** d * build(2).num_cells


def test_euler_characteristic():
    m = build_unit_square_mesh(3)
    assert m.num_vertices - len(mesh_entities(m, 1)) + m.num_cells == 1
    c = build_unit_cube_mesh(2)
    chi = c.num_vertices - len(mesh_entities(c, 1)) + len(mesh_entities(c, 2)) - c.num_cells
    assert chi == 1


def test_trace_full_boundary():
    m = build_unit_square_mesh(2)
    tr = extract_trace_mesh(m, all_tags(m))
    assert tr.mesh.num_cells == 8 and tr.mesh.num_vertices == 8
    cube = build_unit_cube_mesh(1)
    assert extract_trace_mesh(cube, all_tags(cube)).mesh.num_cells == 12


def test_trace_single_side():
    m = build_unit_square_mesh(2)
    tag = int(m.facet_markers[0])
    tr = extract_trace_mesh(m, {tag})
    assert tr.mesh.num_cells == 2 and tr.mesh.num_vertices == 3


def test_trace_empty_selection():
    with pytest.raises(ValueError):
        extract_trace_mesh(build_unit_square_mesh(2), {999})


@pytest.mark.parametrize("d", [2, 3])
def test_trace_parent_maps(d):
    m = (build_unit_square_mesh if d == 2 else build_unit_cube_mesh)(3)
    tr = extract_trace_mesh(m, all_tags(m))
    assert len(np.unique(tr.parent_vertex)) == len(tr.parent_vertex)
    assert len(np.unique(tr.parent_facet)) == len(tr.parent_facet)
    assert np.array_equal(tr.mesh.vertices, m.vertices[tr.parent_vertex])
    mapped = np.sort(tr.parent_vertex[tr.mesh.cells], axis=1)
    assert np.array_equal(mapped, np.sort(m.facets[tr.parent_facet], axis=1))


def test_two_domain_small():
    ms, md, tr = build_two_domain_mesh(2)
    assert ms.num_vertices == 9 and md.num_vertices == 9
    assert tr.mesh.num_cells == 2


def test_two_domain_interface_matches():
    ms, md, _ = build_two_domain_mesh(4)
    ts = extract_trace_mesh(ms, {INTERFACE})
    td = extract_trace_mesh(md, {INTERFACE})
    xs = ts.mesh.vertices[np.lexsort(ts.mesh.vertices.T[::-1])]
    xd = td.mesh.vertices[np.lexsort(td.mesh.vertices.T[::-1])]
    assert np.array_equal(xs, xd)
    assert np.all(xs[:, 1] == 0.0)


def test_two_domain_marker_partition():
    ms, md, _ = build_two_domain_mesh(4)
    assert all_tags(ms) == {NOSLIP, TRACTION, INTERFACE}
    assert all_tags(md) <= {DARCY_PRESSURE, DARCY_NOFLUX, INTERFACE}
    for m in (ms, md):
        # one marker per boundary facet, and the markers cover the boundary
        assert len(m.facet_markers) == len(m.facets)
        _, counts = facet_cell_counts(m)
        assert len(m.facets) == int((counts == 1).sum())


def test_write_mesh_text(tmp_path):
    m = build_unit_square_mesh(1)
    path = tmp_path / "mesh.txt"
    write_mesh_text(m, path)
    text = path.read_text()
    assert text.count("\n") >= m.num_vertices + m.num_cells

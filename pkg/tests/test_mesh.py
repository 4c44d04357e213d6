import numpy as np
import pytest
from hypothesis import given, strategies as st

from hmaxwell import mesh


def test_coarse_cube_is_six_kuhn_tets():
    m = mesh.unit_cube_coarse()
    assert m.n_tets == 6 and m.n_vertices == 8
    assert np.allclose(np.abs(m.signed_volumes()), 1 / 6)
    # all six share the main diagonal 0 -> (1,1,1)
    diag = [np.flatnonzero((m.vertices == v).all(1))[0] for v in ([0, 0, 0], [1, 1, 1])]
    assert all(set(diag) <= set(t) for t in m.tets)


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_refined_cube_matches_kuhn_grid(k):
    m = mesh.unit_cube(k)
    n = 2 ** k
    assert m.n_tets == 6 * 8 ** k
    assert mesh.enumerate_edges(m).n_edges == mesh.kuhn_edge_count(n)
    assert m.volume() == pytest.approx(1.0, rel=1e-13)
    assert m.is_conforming()
    assert np.all(m.signed_volumes() > 0)
    # same tets as a Kuhn grid built directly at that resolution
    g = mesh.kuhn_grid(n)
    key = lambda mm: sorted(tuple(sorted(map(tuple, np.round(mm.vertices[t], 12)))) for t in mm.tets)
    assert key(m) == key(g)


def test_edge_formula_values():
    assert [mesh.kuhn_edge_count(n) for n in (1, 2, 4, 8)] == [19, 98, 604, 4184]


def test_edge_signs_and_boundary():
    m = mesh.unit_cube(1)
    e = mesh.enumerate_edges(m)
    assert np.all(e.edges[:, 0] < e.edges[:, 1])
    a = m.tets[:, mesh.LOCAL_EDGES[:, 0]]
    b = m.tets[:, mesh.LOCAL_EDGES[:, 1]]
    assert np.array_equal(e.tet_signs == 1, a < b)
    # interior edges of a 2x2x2 Kuhn grid: those not on the cube surface
    mid = 0.5 * (m.vertices[e.edges[:, 0]] + m.vertices[e.edges[:, 1]])
    on_face = np.any((np.abs(mid) < 1e-12) | (np.abs(mid - 1) < 1e-12), axis=1)
    assert np.array_equal(e.boundary_mask, on_face)


def test_two_boxes_and_inclusion():
    m = mesh.two_boxes_geometry()
    assert m.volume() == pytest.approx(32.0)
    assert m.n_tets == 192 and m.is_conforming()
    m, reg = mesh.box_with_inclusion(h=0.125)
    vols = m.region_volumes()
    assert vols[mesh.MAGNET] == pytest.approx(0.1875)
    assert vols[mesh.AIR] == pytest.approx(0.8125)
    assert mesh.enumerate_edges(m).n_edges == 4184


def test_inclusion_errors():
    with pytest.raises(mesh.MeshError):
        mesh.box_with_inclusion(inner=(1.0, 0.5, 0.5))
    with pytest.raises(mesh.MeshError):
        mesh.box_with_inclusion(h=0.25)   # inner box not on the grid


def test_refinement_keeps_regions():
    m, _ = mesh.box_with_inclusion(h=0.25, inner=(0.5, 0.5, 0.5))
    r = mesh.refine_uniform(m)
    assert r.region_volumes() == pytest.approx(m.region_volumes())
    assert r.is_conforming()


def test_mesh_io_round_trip(tmp_path):
    m, _ = mesh.box_with_inclusion(h=0.25, inner=(0.5, 0.5, 0.5))
    p = tmp_path / "m.mesh"
    mesh.write_mesh(p, m)
    m2 = mesh.read_mesh(p)
    assert np.array_equal(m2.vertices, m.vertices)
    assert np.array_equal(m2.tets, m.tets)
    assert np.array_equal(m2.regions, m.regions)


def test_mesh_io_errors(tmp_path):
    p = tmp_path / "bad.mesh"
    p.write_text("something else\n")
    with pytest.raises(mesh.MeshError):
        mesh.read_mesh(p)
    p.write_text("hmaxwell-mesh 1\nvertices 1\n0 0 0\ntets 1\n0 1 2 3 0\n")
    with pytest.raises(mesh.MeshError):
        mesh.read_mesh(p)


def test_bad_shapes():
    with pytest.raises(mesh.MeshError):
        mesh.TetMesh(np.zeros((4, 2)), np.zeros((1, 4), int))
    with pytest.raises(mesh.MeshError):
        mesh.TetMesh(np.zeros((4, 3)), np.zeros((1, 3), int))


@given(st.lists(st.floats(-2, 2), min_size=9, max_size=9), st.integers(0, 1))
def test_refinement_under_affine_maps(vals, k):
    """Red refinement preserves volume and conformity for any nondegenerate
    affine image of the cube."""
    M = np.array(vals).reshape(3, 3) + 3 * np.eye(3)
    if abs(np.linalg.det(M)) < 0.1:
        return
    c = mesh.unit_cube(k)
    m = mesh.TetMesh(c.vertices @ M.T, c.tets)
    r = mesh.refine_uniform(m)
    assert r.volume() == pytest.approx(m.volume(), rel=1e-10)
    assert r.n_tets == 8 * m.n_tets
    assert r.is_conforming()
    assert mesh.enumerate_edges(r).n_edges == mesh.kuhn_edge_count(2 ** (k + 1))

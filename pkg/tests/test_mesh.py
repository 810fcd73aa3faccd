"""Mesh construction, edge conventions, and the element orderings."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgcns.mesh import (MeshError, Mesh2D, build_rect_mesh, element_geometry,
                        element_neighbors, mesh_hash, nested_dissection_order)


def test_single_cell_counts(mesh1):
    assert mesh1.n_elements == 2
    assert mesh1.n_interior_edges == 1
    assert mesh1.n_boundary_edges == 4


def test_two_by_two_counts(mesh2):
    # 9 - 16 + 8 = 1, Euler with the outer face dropped
    assert mesh2.vertices.shape == (9, 2)
    assert mesh2.n_elements == 8
    assert mesh2.n_interior_edges == 8
    assert mesh2.n_boundary_edges == 8


def test_areas_tile_the_domain(mesh2, mesh3):
    assert abs(mesh2.areas.sum() - 1.0) <= 1e-12
    assert abs(mesh3.areas.sum() - 2.0) <= 2e-12
    assert (mesh2.areas > 0).all()


def test_mesh_size_is_longest_cell_edge():
    mesh = build_rect_mesh(4, 2)
    assert mesh.h == pytest.approx(0.5)
    assert build_rect_mesh(8, 8).h == pytest.approx(0.125)


def test_normals_unit_and_outward_for_left_element(mesh2):
    for normal, length in ((mesh2.iedge_normal, mesh2.iedge_length),
                           (mesh2.bedge_normal, mesh2.bedge_length)):
        assert np.abs(np.linalg.norm(normal, axis=1) - 1.0).max() <= 1e-14
        assert (length > 0).all()
    # interior normal points from the left element toward the right one
    mid = 0.5 * (mesh2.vertices[mesh2.iedge_verts[:, 0]]
                 + mesh2.vertices[mesh2.iedge_verts[:, 1]])
    cen = mesh2.vertices[mesh2.triangles].mean(axis=1)
    left, right = mesh2.iedge_elems[:, 0], mesh2.iedge_elems[:, 1]
    assert (np.einsum("ij,ij->i", mesh2.iedge_normal, mid - cen[left]) > 1e-12).all()
    assert (np.einsum("ij,ij->i", mesh2.iedge_normal, cen[right] - mid) > 1e-12).all()
    assert (left < right).all()


def test_edge_endpoints_agree_from_both_sides(mesh2):
    tri = mesh2.triangles
    for i in range(mesh2.n_interior_edges):
        (el, er), (ll, lr) = mesh2.iedge_elems[i], mesh2.iedge_local[i]
        from_left = {tri[el, ll], tri[el, (ll + 1) % 3]}
        from_right = {tri[er, lr], tri[er, (lr + 1) % 3]}
        assert from_left == from_right == set(mesh2.iedge_verts[i])


def test_refinement_quarters_areas_and_nests_vertices():
    coarse, fine = build_rect_mesh(2, 2), build_rect_mesh(4, 4)
    assert fine.areas.max() == pytest.approx(coarse.areas.max() / 4)
    cset = {tuple(v) for v in np.round(coarse.vertices, 12)}
    fset = {tuple(v) for v in np.round(fine.vertices, 12)}
    assert cset <= fset


def test_unit_right_triangle_geometry(mesh1):
    # element 0 of the single-cell mesh is the lower triangle (0,0),(1,0),(1,1)
    g = element_geometry(mesh1, 0)
    assert g.area == pytest.approx(0.5)
    assert g.diameter == pytest.approx(np.sqrt(2.0))
    assert g.det == pytest.approx(1.0)
    # r = area / semiperimeter
    assert g.inradius == pytest.approx(0.5 / (0.5 * (2 + np.sqrt(2.0))))
    assert g.inradius == pytest.approx((2 - np.sqrt(2.0)) / 2, abs=1e-12)


def test_equilateral_shape_ratio():
    mesh = Mesh2D(np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3.0) / 2]]),
                  np.array([[0, 1, 2]]))
    assert mesh.shape_regularity == pytest.approx(2 * np.sqrt(3.0))


def test_affine_map_roundtrip(mesh3, rng):
    g = element_geometry(mesh3, 4)
    ref = rng.random((10, 2)) * [0.6, 0.3]
    back = g.to_reference(g.to_physical(ref))
    assert np.abs(back - ref).max() <= 1e-13


def test_invalid_inputs_rejected():
    with pytest.raises(MeshError):
        build_rect_mesh(0, 1)
    with pytest.raises(MeshError):
        build_rect_mesh(2, 2, (0.0, 0.0, 0.0, 1.0))
    with pytest.raises(MeshError):
        # clockwise triangle has negative signed area
        Mesh2D(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
               np.array([[0, 2, 1]]))
    with pytest.raises(IndexError):
        element_geometry(build_rect_mesh(1, 1), 2)


def test_mesh_hash_distinguishes_geometry():
    a, b = build_rect_mesh(2, 2), build_rect_mesh(2, 2)
    assert mesh_hash(a) == mesh_hash(b)
    assert mesh_hash(a) != mesh_hash(build_rect_mesh(2, 3))
    assert mesh_hash(a) != mesh_hash(build_rect_mesh(2, 2, (0.0, 2.0, 0.0, 1.0)))


def test_arrays_are_frozen(mesh2):
    with pytest.raises(ValueError):
        mesh2.iedge_normal[0, 0] = 5.0


def test_element_neighbors_match_edge_list(mesh3):
    nbr = element_neighbors(mesh3)
    pairs = {tuple(p) for p in mesh3.iedge_elems}
    listed = set()
    for e in range(mesh3.n_elements):
        for other in nbr[e]:
            if other >= 0:
                assert e != other
                listed.add((min(e, other), max(e, other)))
                assert e in nbr[other]          # adjacency is mutual
    assert listed == pairs


@settings(max_examples=40, deadline=None)
@given(nx=st.integers(1, 6), ny=st.integers(1, 6), leaf=st.integers(1, 16))
def test_mesh_properties_hold_on_any_uniform_grid(nx, ny, leaf):
    mesh = build_rect_mesh(nx, ny)
    # Euler: V - E + F = 1 without the outer face
    n_edges = mesh.n_interior_edges + mesh.n_boundary_edges
    assert mesh.vertices.shape[0] - n_edges + mesh.n_elements == 1
    assert abs(mesh.areas.sum() - 1.0) <= 1e-12
    assert np.abs(np.linalg.norm(mesh.iedge_normal, axis=1) - 1).max() <= 1e-14 \
        if mesh.n_interior_edges else True
    order = nested_dissection_order(mesh, leaf=leaf)
    assert np.array_equal(np.sort(order), np.arange(mesh.n_elements))


def test_nested_dissection_rejects_bad_leaf(mesh2):
    with pytest.raises(ValueError):
        nested_dissection_order(mesh2, leaf=0)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynbc import (Mesh2D, MeshError, disk_mesh, extract_boundary, mesh_to_text,
                   refine_mesh, square_mesh, tangential_derivative_stencil,
                   text_to_mesh)


def test_square_ref0_counts(unit_square):
    mesh, bmesh, _, _ = unit_square
    assert mesh.n_nodes == 4
    assert len(mesh.triangles) == 2
    assert len(mesh.boundary_edges) == 4
    assert mesh.total_area == pytest.approx(1.0, abs=1e-12)


def test_square_ref2_counts():
    mesh = square_mesh(1.0, 2)
    assert len(mesh.triangles) == 32
    assert mesh.total_area == pytest.approx(1.0, abs=1e-12)


def test_disk_ref0_perimeter_chord_formula():
    mesh = disk_mesh(1.0, 16, 0)
    assert len(mesh.boundary_edges) == 16
    # chord length of a regular 16-gon inscribed in the unit circle
    assert mesh.perimeter == pytest.approx(2 * 16 * math.sin(math.pi / 16), abs=1e-12)


def test_square_boundary_extraction(unit_square):
    _, bmesh, _, _ = unit_square
    assert bmesh.total_length == pytest.approx(4.0, abs=1e-12)


def test_disk_nodes_on_circle_every_refinement():
    for refinement in (0, 1, 2):
        mesh = disk_mesh(1.0, 16, refinement)
        bmesh, _ = extract_boundary(mesh)
        radii = np.hypot(*mesh.nodes[bmesh.node_ids].T)
        assert np.abs(radii - 1.0).max() <= 1e-12


def test_trace_map_image_is_boundary_node_set(coarse_disk):
    mesh, bmesh, _, _, _, _ = coarse_disk
    boundary_nodes = set(mesh.boundary_edges.ravel().tolist())
    assert set(bmesh.node_ids.tolist()) == boundary_nodes
    assert len(set(bmesh.node_ids.tolist())) == len(bmesh.node_ids)


def test_trace_map_round_trip(unit_square):
    mesh, _, tmap, _ = unit_square
    inv = tmap.bulk_to_surface(mesh.n_nodes)
    fwd = tmap.surface_to_bulk
    assert np.array_equal(inv[fwd], np.arange(len(fwd)))


def test_tangent_normal_orthonormal(coarse_disk):
    _, bmesh, _, _, _, _ = coarse_disk
    t_norm = np.hypot(*bmesh.tangents.T)
    n_norm = np.hypot(*bmesh.normals.T)
    dots = np.einsum("ed,ed->e", bmesh.tangents, bmesh.normals)
    assert np.abs(t_norm - 1.0).max() <= 1e-12
    assert np.abs(n_norm - 1.0).max() <= 1e-12
    assert np.abs(dots).max() <= 1e-12


def test_disk_normals_point_outward():
    mesh = disk_mesh(1.0, 16, 1)
    bmesh, _ = extract_boundary(mesh)
    midpoints = 0.5 * (mesh.nodes[bmesh.edges[:, 0]] + mesh.nodes[bmesh.edges[:, 1]])
    assert np.einsum("ed,ed->e", bmesh.normals, midpoints).min() > 0.0


def test_stencil_half_edge():
    # edge of length 1/2 carries hat slopes -2 and +2
    mesh = square_mesh(0.5, 0)
    bmesh, _ = extract_boundary(mesh)
    stencil = tangential_derivative_stencil(bmesh)
    assert np.allclose(stencil, np.tile([-2.0, 2.0], (4, 1)))


def test_stencil_constant_and_arclength_fields():
    mesh = square_mesh(1.0, 1)
    bmesh, _ = extract_boundary(mesh)
    stencil = tangential_derivative_stencil(bmesh)
    const = np.ones(mesh.n_nodes)
    values = const[bmesh.edges]
    assert np.abs(np.einsum("ei,ei->e", stencil, values)).max() == 0.0
    # cumulative arclength along the cycle differentiates to 1 per edge
    arclength = np.concatenate([[0.0], np.cumsum(bmesh.edge_lengths[:-1])])
    field = np.zeros(mesh.n_nodes)
    field[bmesh.node_ids] = arclength
    derivs = np.einsum("ei,ei->e", stencil, field[bmesh.edges])
    assert np.allclose(derivs[:-1], 1.0, atol=1e-12)   # last edge wraps to 0


@given(side=st.floats(0.3, 3.0), refinement=st.integers(0, 2))
@settings(max_examples=20, deadline=None)
def test_refinement_preserves_square_measures(side, refinement):
    mesh = square_mesh(side, refinement)
    refined = refine_mesh(mesh)
    assert refined.total_area == pytest.approx(mesh.total_area, abs=1e-12)
    assert refined.perimeter == pytest.approx(mesh.perimeter, abs=1e-12)


def test_disk_perimeter_monotone_towards_circle():
    perims = [disk_mesh(1.0, n, 0).perimeter for n in (8, 16, 32, 64, 128)]
    assert all(a < b for a, b in zip(perims, perims[1:]))
    assert all(p < 2 * math.pi for p in perims)
    assert perims[-1] == pytest.approx(2 * math.pi, rel=1e-3)


def test_mesh_text_round_trip_bit_exact():
    mesh = disk_mesh(1.0, 16, 1)
    text = mesh_to_text(mesh)
    again = mesh_to_text(text_to_mesh(text))
    assert text == again


def test_mesh_text_rejects_bad_header():
    with pytest.raises(MeshError):
        text_to_mesh("vertices 3 cells 1\n0 0\n1 0\n0 1\n0 1 2\n")


def test_rejects_inverted_triangle():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(MeshError):
        Mesh2D(nodes, np.array([[0, 2, 1]]), np.array([[0, 1], [1, 2], [2, 0]]))


def test_rejects_duplicate_nodes():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1e-13]])
    tris = np.array([[0, 1, 2], [1, 3, 2]])
    with pytest.raises(MeshError):
        text_to_mesh("nodes 4 triangles 2\n" +
                     "\n".join(f"{x} {y}" for x, y in nodes) +
                     "\n0 1 2\n1 3 2\n")


def test_rejects_disconnected_boundary():
    # two disjoint triangles: boundary is two cycles
    text = ("nodes 6 triangles 2\n"
            "0 0\n1 0\n0 1\n5 5\n6 5\n5 6\n"
            "0 1 2\n3 4 5\n")
    with pytest.raises(MeshError):
        text_to_mesh(text)


@pytest.mark.parametrize("kwargs", [
    {"radius": -1.0, "n_segments": 16},
    {"radius": 1.0, "n_segments": 4},
])
def test_disk_parameter_validation(kwargs):
    with pytest.raises(ValueError):
        disk_mesh(**kwargs)


def test_refinement_validation():
    with pytest.raises(ValueError):
        square_mesh(1.0, -1)
    with pytest.raises(ValueError):
        square_mesh(-2.0, 0)

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from temnn.mesh import (Mesh, MeshError, MeshParseError, face_normals, format_off,
                        node_normals, parse_mesh, validate_watertight)

from conftest import random_orthogonal


def brute_force_edges(faces):
    edges = set()
    for f in faces:
        for a, b in itertools.combinations(f, 2):
            edges.add((min(a, b), max(a, b)))
    return edges


def brute_force_incidence(faces):
    count = {}
    for f in faces:
        for a, b in itertools.combinations(f, 2):
            key = (min(a, b), max(a, b))
            count[key] = count.get(key, 0) + 1
    return count


def test_parse_minimal_off():
    m = parse_mesh("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2")
    assert m.n_vertices == 3 and m.n_faces == 1
    assert len(m.edges) == 3


def test_parse_off_bytes_and_comments():
    m = parse_mesh(b"OFF # header\n# comment\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
    assert m.n_faces == 1


def test_obj_quad_rejected():
    text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"
    with pytest.raises(MeshParseError, match="non-triangle") as exc:
        parse_mesh(text, "OBJ")
    assert exc.value.line == 5


def test_obj_one_based_indices():
    m = parse_mesh("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n", "OBJ")
    assert m.faces.tolist() == [[0, 1, 2]]


@pytest.mark.parametrize("text, fragment", [
    ("OFX\n3 1 0\n", "header"),
    ("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n4 0 1 2 3\n", "non-triangle"),
    ("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n", "out of range"),
    ("OFF\nx y z\n", "counts"),
])
def test_off_errors(text, fragment):
    with pytest.raises(MeshParseError, match=fragment):
        parse_mesh(text)


def test_off_error_line_number():
    with pytest.raises(MeshParseError) as exc:
        parse_mesh("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n")
    assert exc.value.line == 6


def test_cube_edge_count_matches_enumeration(cube):
    assert len(brute_force_edges(cube.faces.tolist())) == 18
    assert len(cube.edges) == 18


def test_off_round_trip(cube):
    again = parse_mesh(format_off(cube))
    np.testing.assert_array_equal(again.vertices, cube.vertices)
    np.testing.assert_array_equal(again.faces, cube.faces)


def test_single_triangle_not_watertight():
    m = Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    rep = validate_watertight(m)
    assert not rep.watertight
    assert len(rep.boundary_edges) == 3


def test_cube_watertight(cube):
    counts = brute_force_incidence(cube.faces.tolist())
    assert set(counts.values()) == {2}
    assert validate_watertight(cube).watertight


def test_cube_missing_face(cube):
    open_cube = Mesh(cube.vertices, cube.faces[1:])
    counts = brute_force_incidence(open_cube.faces.tolist())
    assert sum(1 for c in counts.values() if c == 1) == 3
    rep = validate_watertight(open_cube)
    assert not rep.watertight and len(rep.boundary_edges) == 3


def test_generated_shapes_watertight(fixture_shapes):
    for s in fixture_shapes:
        rep = validate_watertight(s.mesh)
        assert rep.watertight
        assert np.all(s.mesh.edge_face_counts == 2)


def test_face_normal_examples():
    m = Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    np.testing.assert_allclose(face_normals(m), [[0, 0, 1]])
    m = Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 2, 1]])
    np.testing.assert_allclose(face_normals(m), [[0, 0, -1]])
    # (1,0,0) x (0,0,1) = (0,-1,0)
    m = Mesh([[0, 0, 0], [1, 0, 0], [0, 0, 1]], [[0, 1, 2]])
    np.testing.assert_allclose(face_normals(m), [[0, -1, 0]])


def test_degenerate_face_reported():
    m = Mesh([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]], [[0, 1, 3], [0, 1, 2]])
    with pytest.raises(MeshError, match="face 1"):
        face_normals(m)


def test_cube_outward_normals(cube):
    n = face_normals(cube)
    centroids = cube.vertices[cube.faces].mean(axis=1)
    assert np.all(np.sum(n * (centroids - 0.5), axis=1) > 0)


def test_node_normal_flat_plate(plate_shape):
    n = node_normals(plate_shape.mesh)
    interior_top = plate_shape.interior & (n[:, 2] > 0.5)
    assert interior_top.any()
    np.testing.assert_allclose(n[interior_top], np.tile([0, 0, 1.0], (interior_top.sum(), 1)))


def test_node_normal_two_faces():
    # two triangles sharing vertex 0, normals +x and +y
    v = [[0, 0, 0], [0, 1, 0], [0, 0, 1], [1, 0, 0]]
    m = Mesh(v, [[0, 1, 2], [0, 2, 3]])
    fn = face_normals(m)
    np.testing.assert_allclose(fn, [[1, 0, 0], [0, 1, 0]])
    np.testing.assert_allclose(node_normals(m, fn)[0], np.array([1, 1, 0]) / np.sqrt(2))


def test_cube_corner_normal(cube):
    fn = face_normals(cube)
    # vertex 0 touches faces 0, 1 (-z), 4, 5 (-y), 10 (-x): two -z, two -y, one -x
    incident = [k for k, f in enumerate(cube.faces.tolist()) if 0 in f]
    assert incident == [0, 1, 4, 5, 10]
    expected = np.array([-1.0, -2.0, -2.0])
    expected /= np.linalg.norm(expected)
    np.testing.assert_allclose(node_normals(cube, fn)[0], expected, atol=1e-12)


def test_isolated_vertex_rejected():
    m = Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5]], [[0, 1, 2]])
    with pytest.raises(MeshError, match="isolated vertex 3"):
        node_normals(m)


def test_invalid_faces_rejected():
    with pytest.raises(MeshError):
        Mesh([[0, 0, 0], [1, 0, 0]], [[0, 1, 2]])
    with pytest.raises(MeshError):
        Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 0, 1]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_normals_rotate_with_mesh(seed):
    from temnn.synthetic import ShapeSpec, gen_shape
    rng = np.random.default_rng(seed)
    mesh = gen_shape(ShapeSpec("plate", (20.0, 16.0), (1.5,), 4)).mesh
    q = random_orthogonal(rng)
    moved = mesh.transformed(q, rng.uniform(-5, 5, 3))
    np.testing.assert_allclose(face_normals(moved), face_normals(mesh) @ q.T, atol=1e-12)
    nn = node_normals(moved)
    np.testing.assert_allclose(np.linalg.norm(nn, axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(nn, node_normals(mesh) @ q.T, atol=1e-12)

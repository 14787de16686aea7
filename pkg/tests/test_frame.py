import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from temnn.frame import (CanonicalFrame, FrameError, bounding_box_center, center_of_mass,
                         compute_frame, from_invariant, random_rigid_transform, to_invariant)

from conftest import random_orthogonal


def jacobi_eigh(a, sweeps=50):
    """Cyclic Jacobi rotations; independent of LAPACK."""
    a = np.array(a, dtype=float)
    v = np.eye(3)
    for _ in range(sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off < 1e-15 * np.abs(a).max():
            break
        for p in range(2):
            for q in range(p + 1, 3):
                if a[p, q] == 0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta ** 2 + 1)) if theta else 1.0
                c = 1 / np.sqrt(t * t + 1)
                s = t * c
                j = np.eye(3)
                j[p, p] = j[q, q] = c
                j[p, q] = s
                j[q, p] = -s
                a = j.T @ a @ j
                v = v @ j
    return np.diag(a), v


def stretched_cloud():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-1, 1, size=(400, 3)) * [4.0, 2.0, 1.0]
    tail = np.array([[3.9, 1.9, 0.95], [3.8, 1.8, 0.9], [3.7, 1.95, 0.97]])
    return np.vstack([pts, tail])


def test_center_of_mass_examples():
    np.testing.assert_array_equal(center_of_mass([[1, 2, 3]]), [1, 2, 3])
    np.testing.assert_array_equal(center_of_mass([[1, 0, 0], [-1, 0, 0]]), [0, 0, 0])
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    np.testing.assert_allclose(center_of_mass(corners), [0.5, 0.5, 0.5])
    with pytest.raises(FrameError):
        center_of_mass(np.zeros((0, 3)))


def test_bounding_box_center_examples():
    np.testing.assert_array_equal(bounding_box_center([[0, 0, 0], [2, 4, 6]]), [1, 2, 3])
    np.testing.assert_array_equal(bounding_box_center([[7, 8, 9]]), [7, 8, 9])
    pts = [[0, 0, 0], [3, 0, 0], [0, 1, 0], [0, 0, 2]]
    np.testing.assert_array_equal(bounding_box_center(pts), [1.5, 0.5, 1.0])


def test_stretched_cloud_axes_match_jacobi():
    pts = stretched_cloud()
    frame = compute_frame(pts)
    centered = pts - pts.mean(axis=0)
    evals, evecs = jacobi_eigh(centered.T @ centered / (len(pts) - 1))
    order = np.argsort(-evals)
    ref = evecs[:, order]
    # same axes up to sign, and a signed permutation of the world axes
    np.testing.assert_allclose(np.abs(frame.rotation.T @ ref), np.eye(3), atol=1e-9)
    assert np.all(np.argmax(np.abs(frame.rotation), axis=0) == [0, 1, 2])
    assert not frame.is_degenerate


def test_translation_leaves_rotation_unchanged(fixture_shapes):
    for s in fixture_shapes:
        f0 = compute_frame(s.mesh)
        f1 = compute_frame(s.mesh.vertices + np.array([13.0, -7.5, 2.25]))
        np.testing.assert_allclose(f1.rotation, f0.rotation, atol=1e-9)


def test_rotation_equivariance_of_frame(fixture_shapes):
    rng = np.random.default_rng(0)
    for s in fixture_shapes:
        f0 = compute_frame(s.mesh)
        assert not f0.is_degenerate
        for _ in range(100):
            q = random_orthogonal(rng)
            f1 = compute_frame(s.mesh.vertices @ q.T)
            np.testing.assert_allclose(f1.rotation, q @ f0.rotation, atol=1e-7)


def test_to_invariant_examples():
    ident = CanonicalFrame.identity()
    pts = np.array([[1.0, 2.0, 3.0], [-4.0, 5.0, 0.5]])
    np.testing.assert_array_equal(to_invariant(ident, pts), pts)
    f = compute_frame(stretched_cloud())
    np.testing.assert_allclose(to_invariant(f, f.center[None]), [[0, 0, 0]], atol=1e-15)


def test_from_invariant_examples():
    f = compute_frame(stretched_cloud())
    np.testing.assert_allclose(from_invariant(f, [[0, 0, 0]], "point"), [f.center])
    np.testing.assert_array_equal(from_invariant(f, [[0, 0, 0]], "vector"), [[0, 0, 0]])
    x = stretched_cloud()
    np.testing.assert_allclose(from_invariant(f, to_invariant(f, x), "point"), x, atol=1e-9)


def test_frame_json_round_trip(box_shape):
    f = compute_frame(box_shape.mesh)
    g = CanonicalFrame.from_json(f.to_json())
    np.testing.assert_array_equal(g.rotation, f.rotation)
    np.testing.assert_array_equal(g.center, f.center)
    assert g.degenerate == f.degenerate


def test_symmetric_shape_is_flagged_or_rejected(cube):
    with pytest.raises(FrameError) as exc:
        compute_frame(cube)
    assert exc.value.flags == (True, True, True)


def test_eigenvalue_tie_flagged():
    # regular octagon: isotropic in-plane covariance, so the first two variances tie
    k = np.arange(8)
    pts = np.c_[3 * np.cos(k * np.pi / 4), 3 * np.sin(k * np.pi / 4), 0.1 * (-1.0) ** k]
    with pytest.raises(FrameError) as exc:
        compute_frame(pts)
    assert exc.value.flags[0] and exc.value.flags[1]


def test_too_few_vertices():
    with pytest.raises(FrameError):
        compute_frame([[0.0, 0.0, 0.0]])


def test_frame_deterministic(ribbed_shape):
    a = compute_frame(ribbed_shape.mesh)
    b = compute_frame(ribbed_shape.mesh)
    assert a.rotation.tobytes() == b.rotation.tobytes()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_invariance_and_inverse_equivariance(seed):
    from temnn.synthetic import ShapeSpec, gen_shape
    rng = np.random.default_rng(seed)
    mesh = gen_shape(ShapeSpec("ribbed_plate", (24.0, 17.0), (1.5, 1.5), 6)).mesh
    f0 = compute_frame(mesh)
    q, g = random_rigid_transform(rng)
    moved = mesh.vertices @ q.T + g
    f1 = compute_frame(moved)
    r = f1.rotation
    assert np.abs(r.T @ r - np.eye(3)).max() < 1e-9
    assert abs(abs(np.linalg.det(r)) - 1) < 1e-9
    np.testing.assert_allclose(to_invariant(f1, moved), to_invariant(f0, mesh.vertices), atol=1e-7)
    p = rng.standard_normal((10, 3))
    np.testing.assert_allclose(from_invariant(f1, p, "point"),
                               from_invariant(f0, p, "point") @ q.T + g, atol=1e-7)
    np.testing.assert_allclose(from_invariant(f1, p, "vector"),
                               from_invariant(f0, p, "vector") @ q.T, atol=1e-7)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradfem.elements import (
    InvertedElementError,
    build_reference_element,
    face_quadrature,
    interpolate_gradient,
    map_element,
    map_elements,
    shape_functions,
)
from gradfem.mesh import HEX_FACES, generate_box_mesh


def test_reference_element_tables():
    ref = build_reference_element()
    assert np.allclose(shape_functions(np.zeros(3)), 1.0 / 8.0)
    assert np.abs(ref.shape_values.sum(axis=1) - 1.0).max() <= 1e-14
    assert np.abs(ref.shape_ref_grads.sum(axis=1)).max() <= 1e-14
    assert ref.quad_weights.sum() == 8.0
    g = 1.0 / np.sqrt(3.0)
    assert np.allclose(np.abs(ref.quad_points), g)


def unit_cell():
    return generate_box_mesh(1, 1, 1, 1, 1, 1).cell_coords()[0]


def test_map_unit_cube():
    geom = map_element(unit_cell())
    assert np.allclose(geom.JxW, 1.0 / 8.0, atol=1e-15)
    assert np.isclose(geom.JxW.sum(), 1.0)


def test_map_scaling_in_x():
    base = unit_cell()
    geom0 = map_element(base)
    scaled = base * np.array([2.0, 1.0, 1.0])
    geom1 = map_element(scaled)
    assert np.allclose(geom1.phys_grads[..., 0], geom0.phys_grads[..., 0] / 2.0)
    assert np.allclose(geom1.phys_grads[..., 1:], geom0.phys_grads[..., 1:])
    assert np.allclose(geom1.JxW, 2.0 * geom0.JxW)


def test_map_translation_invariance():
    base = unit_cell()
    geom0 = map_element(base)
    geom1 = map_element(base + np.array([3.0, -1.0, 2.5]))
    assert np.allclose(geom0.phys_grads, geom1.phys_grads, atol=1e-13)
    assert np.allclose(geom0.JxW, geom1.JxW, atol=1e-14)


def test_inverted_element_rejected():
    bad = unit_cell().copy()
    bad[:, 2] *= -1.0  # mirror flips orientation
    with pytest.raises(InvertedElementError):
        map_element(bad)


def test_interpolate_gradient_zero_and_rigid():
    geom = map_element(unit_cell())
    assert np.allclose(interpolate_gradient(geom, np.zeros(24), 3), 0.0)
    rigid = np.tile([0.3, -0.2, 0.9], 8)
    assert np.abs(interpolate_gradient(geom, rigid, 0)).max() < 1e-14


@settings(max_examples=20, deadline=None)
@given(A=arrays(np.float64, (3, 3), elements=st.floats(-2, 2)))
def test_affine_reproduction(A):
    coords = unit_cell()
    geom = map_element(coords)
    U_e = (coords @ A.T).reshape(-1)
    for q in range(8):
        assert np.abs(interpolate_gradient(geom, U_e, q) - A).max() <= 1e-12


@settings(max_examples=20, deadline=None)
@given(M=arrays(np.float64, (3, 3), elements=st.floats(-1, 1)))
def test_quadrature_exact_volume_of_affine_images(M):
    M = M + 2.0 * np.eye(3)  # keep orientation positive
    if np.linalg.det(M) <= 1e-3:
        return
    coords = unit_cell() @ M.T + np.array([0.5, -0.3, 1.0])
    geom = map_element(coords)
    assert np.isclose(geom.JxW.sum(), np.linalg.det(M), rtol=1e-12)


def test_surface_quadrature_unit_cube_faces():
    mesh = generate_box_mesh(1, 1, 1, 1, 1, 1)
    for face in range(6):
        fq = face_quadrature(mesh, np.array([[0, face]]))
        assert np.isclose(fq.JxW.sum(), 1.0, rtol=1e-12)
        assert np.array_equal(fq.local_nodes[0], HEX_FACES[face])
        # bilinear partition of unity on the face
        assert np.allclose(fq.shape_values.sum(axis=1), 1.0)


def test_batched_matches_single():
    mesh = generate_box_mesh(2, 2, 1, 2.0, 1.5, 0.7)
    batched = map_elements(mesh.cell_coords())
    for e in range(mesh.n_cells):
        single = map_element(mesh.cell_coords()[e])
        assert np.array_equal(single.phys_grads, batched.phys_grads[e])
        assert np.array_equal(single.JxW, batched.JxW[e])

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradfem.elements import map_elements
from gradfem.mesh import (
    BoundaryLocator,
    Mesh,
    MeshError,
    boundary_facets,
    boundary_nodes,
    generate_box_mesh,
    import_mesh,
    locate_nodes,
)


def test_single_unit_cell():
    m = generate_box_mesh(1, 1, 1, 1, 1, 1)
    assert m.n_nodes == 8
    assert m.n_cells == 1
    corners = {(i, j, k) for i in (0, 1) for j in (0, 1) for k in (0, 1)}
    assert {tuple(p) for p in m.nodes} == {(float(i), float(j), float(k)) for i, j, k in corners}


def test_inference_demo_mesh_counts():
    m = generate_box_mesh(50, 50, 10, 1.0, 1.0, 0.2)
    assert m.n_nodes == 51 * 51 * 11 == 28611
    assert m.n_cells == 25000


def test_unit_cells_jacobian_determinant():
    # axis-aligned unit cells map from [-1,1]^3 with det J = 1/8
    m = generate_box_mesh(2, 1, 1, 2.0, 1.0, 1.0)
    geom = map_elements(m.cell_coords())
    assert np.allclose(geom.JxW, 1.0 / 8.0, rtol=0, atol=1e-15)


@pytest.mark.parametrize(
    "args",
    [
        (0, 1, 1, 1, 1, 1),
        (1, -2, 1, 1, 1, 1),
        (1, 1, 1, 0.0, 1, 1),
        (1, 1, 1, 1, 1, -3.0),
    ],
)
def test_generator_rejects_bad_arguments(args):
    with pytest.raises(MeshError):
        generate_box_mesh(*args)


@settings(max_examples=25, deadline=None)
@given(
    nx=st.integers(1, 4),
    ny=st.integers(1, 4),
    nz=st.integers(1, 4),
    lx=st.floats(0.1, 10),
    ly=st.floats(0.1, 10),
    lz=st.floats(0.1, 10),
)
def test_structured_counts_and_volume(nx, ny, nz, lx, ly, lz):
    m = generate_box_mesh(nx, ny, nz, lx, ly, lz)
    assert m.n_nodes == (nx + 1) * (ny + 1) * (nz + 1)
    assert m.n_cells == nx * ny * nz
    vol = map_elements(m.cell_coords()).JxW.sum()
    assert np.isclose(vol, lx * ly * lz, rtol=1e-12)


def test_locate_nodes_bottom_face():
    m1 = generate_box_mesh(1, 1, 1, 1, 1, 1)
    assert len(locate_nodes(m1, BoundaryLocator.plane(2, 0.0))) == 4
    m2 = generate_box_mesh(2, 2, 2, 1, 1, 1)
    assert len(locate_nodes(m2, BoundaryLocator.plane(2, 0.0))) == 9


def test_locate_nodes_empty_and_partition():
    m = generate_box_mesh(2, 2, 2, 1, 1, 1)
    never = BoundaryLocator(lambda p: np.zeros(np.asarray(p).shape[:-1], dtype=bool))
    assert locate_nodes(m, never).size == 0
    sel = locate_nodes(m, BoundaryLocator.plane(0, 0.5))
    comp = BoundaryLocator(lambda p: ~(np.abs(np.asarray(p)[..., 0] - 0.5) <= 1e-5))
    other = locate_nodes(m, comp)
    assert np.array_equal(np.sort(np.concatenate([sel, other])), np.arange(m.n_nodes))
    assert np.intersect1d(sel, other).size == 0


def test_boundary_facets():
    m1 = generate_box_mesh(1, 1, 1, 1, 1, 1)
    top = boundary_facets(m1, BoundaryLocator.plane(2, 1.0))
    assert len(top) == 1
    m2 = generate_box_mesh(2, 2, 1, 1, 1, 1)
    assert len(boundary_facets(m2, BoundaryLocator.plane(2, 0.0))) == 4
    # interior plane of a 2-layer mesh: faces there are shared, so none qualify
    m3 = generate_box_mesh(1, 1, 2, 1, 1, 1)
    assert len(boundary_facets(m3, BoundaryLocator.plane(2, 0.5))) == 0


def test_boundary_nodes_counts():
    m = generate_box_mesh(3, 3, 3, 1, 1, 1)
    assert boundary_nodes(m).size == 4**3 - 2**3


def test_mesh_validation():
    nodes = np.zeros((4, 3))
    with pytest.raises(MeshError):
        Mesh(nodes=nodes, cells=np.array([[0, 1, 2, 3, 4, 5, 6, 7]]))  # out of range
    m = generate_box_mesh(1, 1, 1, 1, 1, 1)
    extra = np.vstack([m.nodes, [[5.0, 5.0, 5.0]]])
    with pytest.raises(MeshError, match="not referenced"):
        Mesh(nodes=extra, cells=m.cells)


GMSH_UNIT_CUBE = """$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
9
1 0 0 0
2 1 0 0
3 1 1 0
4 0 1 0
5 0 0 1
6 1 0 1
7 1 1 1
8 0 1 1
9 4 4 4
$EndNodes
$Elements
3
1 15 2 0 1 9
2 3 2 0 1 1 2 3 4
3 5 2 0 1 1 2 3 4 5 6 7 8
$EndElements
"""


def test_import_gmsh_v22(tmp_path):
    path = tmp_path / "cube.msh"
    path.write_text(GMSH_UNIT_CUBE)
    m = import_mesh(path)
    # the point entity, the surface quad, and the orphan node are dropped
    assert m.n_cells == 1
    assert m.n_nodes == 8
    vol = map_elements(m.cell_coords()).JxW.sum()
    assert np.isclose(vol, 1.0, rtol=1e-12)


def test_import_rejects_unsupported_volume_cells(tmp_path):
    text = GMSH_UNIT_CUBE.replace("3 5 2 0 1 1 2 3 4 5 6 7 8", "3 4 2 0 1 1 2 3 5")
    path = tmp_path / "tet.msh"
    path.write_text(text)
    with pytest.raises(MeshError, match="type 4"):
        import_mesh(path)


def test_import_rejects_inverted_cells(tmp_path):
    # swap top/bottom planes so det J < 0
    text = GMSH_UNIT_CUBE.replace("3 5 2 0 1 1 2 3 4 5 6 7 8", "3 5 2 0 1 5 6 7 8 1 2 3 4")
    path = tmp_path / "inv.msh"
    path.write_text(text)
    with pytest.raises(Exception, match="Jacobian"):
        import_mesh(path)


def test_import_rejects_wrong_version(tmp_path):
    path = tmp_path / "v4.msh"
    path.write_text(GMSH_UNIT_CUBE.replace("2.2 0 8", "4.1 0 8"))
    with pytest.raises(MeshError, match="version"):
        import_mesh(path)

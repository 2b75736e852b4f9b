"""Hexahedral meshes and geometric boundary selection.

Cells follow the VTK hexahedron vertex ordering: nodes 0-3 are the
bottom quad (counter-clockwise seen from +z), nodes 4-7 the top quad
above them. Local faces are numbered

    0: -z (0,3,2,1)   1: +z (4,5,6,7)   2: -y (0,1,5,4)
    3: +y (2,3,7,6)   4: -x (0,4,7,3)   5: +x (1,2,6,5)

with face nodes ordered so the outward normal follows the right-hand
rule.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# Local face index -> the 4 local vertex ids of that face.
HEX_FACES = np.array(
    [
        [0, 3, 2, 1],
        [4, 5, 6, 7],
        [0, 1, 5, 4],
        [2, 3, 7, 6],
        [0, 4, 7, 3],
        [1, 2, 6, 5],
    ],
    dtype=np.int64,
)

DEFAULT_TOLERANCE = 1e-5


class MeshError(ValueError):
    """Invalid mesh input or geometry."""


@dataclass(frozen=True)
class Mesh:
    """Nodes (N, 3) in mm and HEX8 connectivity (N_e, 8).

    Immutable after construction; safe to share between threads.
    """

    nodes: np.ndarray
    cells: np.ndarray
    dim: int = 3

    def __post_init__(self):
        nodes = np.ascontiguousarray(np.asarray(self.nodes, dtype=np.float64))
        cells = np.ascontiguousarray(np.asarray(self.cells, dtype=np.int64))
        if nodes.ndim != 2 or nodes.shape[1] != 3:
            raise MeshError(f"nodes must have shape (N, 3), got {nodes.shape}")
        if cells.ndim != 2 or cells.shape[1] != 8:
            raise MeshError(f"cells must have shape (N_e, 8), got {cells.shape}")
        if cells.size and (cells.min() < 0 or cells.max() >= nodes.shape[0]):
            raise MeshError("cell connectivity references nodes out of range")
        referenced = np.zeros(nodes.shape[0], dtype=bool)
        referenced[cells.ravel()] = True
        if not referenced.all():
            orphan = int(np.flatnonzero(~referenced)[0])
            raise MeshError(f"node {orphan} is not referenced by any cell")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "cells", cells)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    def cell_coords(self, idx=None) -> np.ndarray:
        """Coordinates of cell vertices, shape (n, 8, 3)."""
        cells = self.cells if idx is None else self.cells[idx]
        return self.nodes[cells]


@dataclass(frozen=True)
class BoundaryLocator:
    """Geometric node-selection predicate.

    ``predicate`` maps a coordinate (3,) to bool; it may also accept a
    coordinate block (N, 3) and return (N,) bools, which is used when
    available. ``tolerance`` is the closeness used by the plane/box
    constructors.
    """

    predicate: Callable
    tolerance: float = DEFAULT_TOLERANCE

    @staticmethod
    def plane(axis: int, value: float, tolerance: float = DEFAULT_TOLERANCE) -> "BoundaryLocator":
        """All points with |x[axis] - value| <= tolerance."""
        return BoundaryLocator(
            lambda p: np.abs(np.asarray(p)[..., axis] - value) <= tolerance,
            tolerance,
        )

    @staticmethod
    def everywhere() -> "BoundaryLocator":
        return BoundaryLocator(lambda p: np.ones(np.asarray(p).shape[:-1], dtype=bool))

    def select(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask over rows of ``points`` (N, 3)."""
        points = np.asarray(points, dtype=np.float64)
        try:
            mask = np.asarray(self.predicate(points))
            if mask.shape == (points.shape[0],):
                return mask.astype(bool)
        except Exception:
            pass
        return np.fromiter(
            (bool(self.predicate(p)) for p in points), dtype=bool, count=points.shape[0]
        )


@dataclass(frozen=True)
class FacetSet:
    """Boundary faces as (cell index, local face 0..5) pairs, shape (F, 2)."""

    facets: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))

    def __post_init__(self):
        facets = np.asarray(self.facets, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "facets", facets)

    def __len__(self) -> int:
        return self.facets.shape[0]


def generate_box_mesh(nx: int, ny: int, nz: int, Lx: float, Ly: float, Lz: float) -> Mesh:
    """Structured grid of nx*ny*nz cells on [0,Lx]x[0,Ly]x[0,Lz].

    Node (i,j,k) sits at (i*Lx/nx, j*Ly/ny, k*Lz/nz) and gets the flat
    index i + j*(nx+1) + k*(nx+1)*(ny+1).
    """
    for name, v in (("nx", nx), ("ny", ny), ("nz", nz)):
        if int(v) != v or v < 1:
            raise MeshError(f"{name} must be a positive integer, got {v}")
    for name, v in (("Lx", Lx), ("Ly", Ly), ("Lz", Lz)):
        if not (v > 0):
            raise MeshError(f"{name} must be positive, got {v}")
    nx, ny, nz = int(nx), int(ny), int(nz)

    xs = np.linspace(0.0, Lx, nx + 1)
    ys = np.linspace(0.0, Ly, ny + 1)
    zs = np.linspace(0.0, Lz, nz + 1)
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    # Flat node index i + j*(nx+1) + k*(nx+1)*(ny+1).
    nodes = np.stack(
        [X.transpose(2, 1, 0).ravel(), Y.transpose(2, 1, 0).ravel(), Z.transpose(2, 1, 0).ravel()],
        axis=1,
    )

    nid = np.arange((nx + 1) * (ny + 1) * (nz + 1)).reshape(nz + 1, ny + 1, nx + 1)
    c000 = nid[:-1, :-1, :-1].ravel()
    c100 = nid[:-1, :-1, 1:].ravel()
    c010 = nid[:-1, 1:, :-1].ravel()
    c110 = nid[:-1, 1:, 1:].ravel()
    c001 = nid[1:, :-1, :-1].ravel()
    c101 = nid[1:, :-1, 1:].ravel()
    c011 = nid[1:, 1:, :-1].ravel()
    c111 = nid[1:, 1:, 1:].ravel()
    cells = np.stack([c000, c100, c110, c010, c001, c101, c111, c011], axis=1)
    return Mesh(nodes=nodes, cells=cells)


def locate_nodes(mesh: Mesh, locator: BoundaryLocator) -> np.ndarray:
    """Sorted indices of all nodes satisfying the locator predicate."""
    return np.flatnonzero(locator.select(mesh.nodes))


def _boundary_face_table(mesh: Mesh) -> np.ndarray:
    """(F, 2) array of (cell, local face) pairs on the mesh boundary.

    A face is on the boundary iff its node set occurs in exactly one
    cell.
    """
    faces = mesh.cells[:, HEX_FACES]  # (N_e, 6, 4)
    keys = np.sort(faces.reshape(-1, 4), axis=1)
    order = np.lexsort(keys.T[::-1])
    sorted_keys = keys[order]
    new_group = np.ones(len(sorted_keys), dtype=bool)
    if len(sorted_keys) > 1:
        new_group[1:] = np.any(sorted_keys[1:] != sorted_keys[:-1], axis=1)
    group_ids = np.cumsum(new_group) - 1
    counts = np.bincount(group_ids)
    unique_mask = counts[group_ids] == 1
    flat = order[unique_mask]
    return np.stack([flat // 6, flat % 6], axis=1)


def boundary_facets(mesh: Mesh, locator: BoundaryLocator) -> FacetSet:
    """Boundary faces whose 4 nodes all satisfy the locator."""
    table = _boundary_face_table(mesh)
    if table.size == 0:
        return FacetSet(table)
    node_mask = locator.select(mesh.nodes)
    face_nodes = mesh.cells[table[:, 0], :][np.arange(len(table))[:, None], HEX_FACES[table[:, 1]]]
    keep = node_mask[face_nodes].all(axis=1)
    return FacetSet(table[keep])


def boundary_nodes(mesh: Mesh) -> np.ndarray:
    """Sorted indices of all nodes lying on the mesh boundary."""
    table = _boundary_face_table(mesh)
    if table.size == 0:
        return np.empty(0, dtype=np.int64)
    face_nodes = mesh.cells[table[:, 0], :][np.arange(len(table))[:, None], HEX_FACES[table[:, 1]]]
    return np.unique(face_nodes)


_GMSH_HEX8 = 5
# Lower-dimensional gmsh entity types that annotate boundaries; skipped
# on import because they are not volume cells.
_GMSH_SKIP = {15, 1, 8, 2, 9, 3, 10, 16}


def import_mesh(path) -> Mesh:
    """Read a Gmsh MSH ASCII v2.2 file containing HEX8 volume cells.

    Points/lines/surface elements are skipped (they only tag
    boundaries); any other volume element type is an error. Nodes not
    referenced by a hexahedron are dropped and the mesh is re-indexed.
    """
    with open(path, "r") as fh:
        lines = [ln.strip() for ln in fh]

    def section(name):
        try:
            start = lines.index(f"${name}")
            end = lines.index(f"$End{name}")
        except ValueError:
            raise MeshError(f"gmsh file missing ${name} section: {path}")
        return lines[start + 1 : end]

    fmt = section("MeshFormat")
    if not fmt or not fmt[0].split()[0].startswith("2."):
        version = fmt[0].split()[0] if fmt else "<missing>"
        raise MeshError(f"unsupported gmsh MSH version {version}; expected ASCII v2.x")

    node_lines = section("Nodes")
    n_nodes = int(node_lines[0])
    if len(node_lines) - 1 != n_nodes:
        raise MeshError(f"gmsh node count mismatch: header {n_nodes}, data {len(node_lines) - 1}")
    ids = np.empty(n_nodes, dtype=np.int64)
    coords = np.empty((n_nodes, 3), dtype=np.float64)
    for i, ln in enumerate(node_lines[1:]):
        parts = ln.split()
        ids[i] = int(parts[0])
        coords[i] = [float(parts[1]), float(parts[2]), float(parts[3])]
    id_to_row = {int(g): i for i, g in enumerate(ids)}

    elem_lines = section("Elements")
    n_elems = int(elem_lines[0])
    cells = []
    for ln in elem_lines[1 : n_elems + 1]:
        parts = [int(p) for p in ln.split()]
        etype = parts[1]
        if etype in _GMSH_SKIP:
            continue
        if etype != _GMSH_HEX8:
            raise MeshError(f"unsupported gmsh element type {etype}; only 8-node hexahedra (type 5)")
        n_tags = parts[2]
        conn = parts[3 + n_tags :]
        if len(conn) != 8:
            raise MeshError(f"malformed hexahedron connectivity line: {ln!r}")
        cells.append([id_to_row[c] for c in conn])
    if not cells:
        raise MeshError(f"no hexahedral cells found in {path}")
    cells = np.asarray(cells, dtype=np.int64)

    # Drop nodes used only by skipped boundary entities.
    used = np.unique(cells.ravel())
    remap = -np.ones(n_nodes, dtype=np.int64)
    remap[used] = np.arange(used.size)
    mesh = Mesh(nodes=coords[used], cells=remap[cells])

    from .elements import check_positive_jacobians

    check_positive_jacobians(mesh)
    return mesh

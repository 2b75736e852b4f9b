"""Reference HEX8 element: trilinear shape functions, 2x2x2 Gauss
quadrature, and the reference-to-physical mapping.

phi_i(xi) = prod_d (1 + xi_d * s_d^i) / 2 with s^i the vertex sign
pattern. The 2x2x2 rule integrates products of trilinear functions
needed by the weak form exactly on affinely-mapped cells.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .mesh import HEX_FACES, Mesh

# Vertex sign pattern of the reference cube [-1,1]^3, VTK ordering.
VERTEX_SIGNS = np.array(
    [
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, 1],
        [1, -1, 1],
        [1, 1, 1],
        [-1, 1, 1],
    ],
    dtype=np.float64,
)

_G = 1.0 / np.sqrt(3.0)


class InvertedElementError(ValueError):
    """Non-positive Jacobian determinant at a quadrature point."""


def shape_functions(xi: np.ndarray) -> np.ndarray:
    """phi_i at points xi (..., 3) -> (..., 8)."""
    xi = np.asarray(xi, dtype=np.float64)
    terms = 1.0 + xi[..., None, :] * VERTEX_SIGNS  # (..., 8, 3)
    return terms.prod(axis=-1) / 8.0


def shape_gradients(xi: np.ndarray) -> np.ndarray:
    """d phi_i / d xi_d at points xi (..., 3) -> (..., 8, 3)."""
    xi = np.asarray(xi, dtype=np.float64)
    terms = 1.0 + xi[..., None, :] * VERTEX_SIGNS  # (..., 8, 3)
    grads = np.empty(xi.shape[:-1] + (8, 3), dtype=np.float64)
    for d in range(3):
        others = [e for e in range(3) if e != d]
        grads[..., d] = VERTEX_SIGNS[:, d] * terms[..., others].prod(axis=-1) / 8.0
    return grads


@dataclass(frozen=True)
class ReferenceElement:
    """Shape values/gradients tabulated at the 2x2x2 Gauss points."""

    quad_points: np.ndarray  # (8, 3)
    quad_weights: np.ndarray  # (8,)
    shape_values: np.ndarray  # (8 q, 8 i)
    shape_ref_grads: np.ndarray  # (8 q, 8 i, 3)


@lru_cache(maxsize=1)
def build_reference_element() -> ReferenceElement:
    pts = np.array(
        [(x, y, z) for z in (-_G, _G) for y in (-_G, _G) for x in (-_G, _G)],
        dtype=np.float64,
    )
    return ReferenceElement(
        quad_points=pts,
        quad_weights=np.ones(8),
        shape_values=shape_functions(pts),
        shape_ref_grads=shape_gradients(pts),
    )


def _inv_det_3x3(J: np.ndarray):
    """Inverse and determinant of (..., 3, 3) matrices, closed form."""
    a, b, c = J[..., 0, 0], J[..., 0, 1], J[..., 0, 2]
    d, e, f = J[..., 1, 0], J[..., 1, 1], J[..., 1, 2]
    g, h, i = J[..., 2, 0], J[..., 2, 1], J[..., 2, 2]
    A = e * i - f * h
    B = c * h - b * i
    C = b * f - c * e
    D = f * g - d * i
    E = a * i - c * g
    F = c * d - a * f
    G = d * h - e * g
    H = b * g - a * h
    I = a * e - b * d
    det = a * A + b * D + c * G
    inv = np.stack(
        [
            np.stack([A, B, C], axis=-1),
            np.stack([D, E, F], axis=-1),
            np.stack([G, H, I], axis=-1),
        ],
        axis=-2,
    )
    return inv / det[..., None, None], det


@dataclass(frozen=True)
class ElementGeometry:
    """Physical shape gradients and integration weights for cells.

    phys_grads: (..., 8 q, 8 i, 3), units 1/mm. JxW: (..., 8 q), mm^3.
    """

    phys_grads: np.ndarray
    JxW: np.ndarray


def map_elements(cell_coords: np.ndarray) -> ElementGeometry:
    """Map a batch of cells (n, 8, 3) through the isoparametric map."""
    ref = build_reference_element()
    coords = np.asarray(cell_coords, dtype=np.float64)
    # J[n, q, a, b] = sum_k coords[n, k, a] * dphi_k/dxi_b (q)
    J = np.einsum("nka,qkb->nqab", coords, ref.shape_ref_grads)
    invJ, det = _inv_det_3x3(J)
    if np.any(det <= 0.0):
        n, q = np.argwhere(det <= 0.0)[0]
        raise InvertedElementError(
            f"non-positive Jacobian determinant {det[n, q]:.3e} "
            f"(cell {n} of batch, quad point {q})"
        )
    phys_grads = np.einsum("nqba,qkb->nqka", invJ, ref.shape_ref_grads)
    return ElementGeometry(phys_grads=phys_grads, JxW=det * ref.quad_weights)


def map_element(cell_coords: np.ndarray) -> ElementGeometry:
    """Map a single cell (8, 3); see map_elements."""
    geom = map_elements(np.asarray(cell_coords)[None])
    return ElementGeometry(phys_grads=geom.phys_grads[0], JxW=geom.JxW[0])


def interpolate_gradient(geom: ElementGeometry, U_e: np.ndarray, q: int) -> np.ndarray:
    """grad u^h at quad point q from element DOFs U_e (8*vec,) -> (vec, 3)."""
    U = np.asarray(U_e, dtype=np.float64).reshape(8, -1)
    return np.einsum("kv,kd->vd", U, geom.phys_grads[q])


def quad_point_coords(mesh: Mesh) -> np.ndarray:
    """Physical coordinates of all quadrature points, (N_e, 8, 3)."""
    ref = build_reference_element()
    return np.einsum("qk,nkd->nqd", ref.shape_values, mesh.cell_coords())


def check_positive_jacobians(mesh: Mesh) -> None:
    """Raise InvertedElementError if any cell is inverted."""
    map_elements(mesh.cell_coords())


# 2x2 Gauss points on a reference face [-1,1]^2 and the bilinear shape
# functions of the 4 face corners (ordered as in HEX_FACES rows).
_FACE_QP = np.array([(x, y) for y in (-_G, _G) for x in (-_G, _G)])
_FACE_SIGNS = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=np.float64)


def _face_shape_values(pts: np.ndarray) -> np.ndarray:
    terms = 1.0 + pts[:, None, :] * _FACE_SIGNS
    return terms.prod(axis=-1) / 4.0


def _face_shape_gradients(pts: np.ndarray) -> np.ndarray:
    grads = np.empty((pts.shape[0], 4, 2))
    terms = 1.0 + pts[:, None, :] * _FACE_SIGNS
    grads[..., 0] = _FACE_SIGNS[:, 0] * terms[..., 1] / 4.0
    grads[..., 1] = _FACE_SIGNS[:, 1] * terms[..., 0] / 4.0
    return grads


@dataclass(frozen=True)
class FaceQuadrature:
    """Surface quadrature for a batch of boundary faces.

    points: (F, 4 q, 3) physical positions; JxW: (F, 4 q) in mm^2;
    shape_values: (4 q, 4 a) bilinear values; local_nodes: (F, 4 a)
    cell-local vertex ids carrying the face.
    """

    points: np.ndarray
    JxW: np.ndarray
    shape_values: np.ndarray
    local_nodes: np.ndarray


def face_quadrature(mesh: Mesh, facets: np.ndarray) -> FaceQuadrature:
    """Build surface quadrature for (cell, face) pairs, shape (F, 2)."""
    facets = np.asarray(facets, dtype=np.int64).reshape(-1, 2)
    local = HEX_FACES[facets[:, 1]]  # (F, 4)
    corner_ids = mesh.cells[facets[:, 0][:, None], local]  # (F, 4)
    corners = mesh.nodes[corner_ids]  # (F, 4, 3)
    vals = _face_shape_values(_FACE_QP)  # (4q, 4a)
    grads = _face_shape_gradients(_FACE_QP)  # (4q, 4a, 2)
    points = np.einsum("qa,fad->fqd", vals, corners)
    tangents = np.einsum("qag,fad->fqdg", grads, corners)  # (F, 4q, 3, 2)
    normal = np.cross(tangents[..., 0], tangents[..., 1])
    area_scale = np.linalg.norm(normal, axis=-1)  # |t1 x t2|, weight 1 each
    return FaceQuadrature(points=points, JxW=area_scale, shape_values=vals, local_nodes=local)

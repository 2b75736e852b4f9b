"""Global residual and sparse Jacobian assembly.

Element kernels are evaluated in chunks, batched over elements in
array style. The Jacobian chunk seeds all element DOFs at once through
the forward-mode engine, so each element's tangent block is the exact
derivative of its residual kernel. Scatter into the fixed CSR pattern
runs in a single fixed order, making assembly deterministic for any
thread count.

Dirichlet conditions use row replacement: constrained residual rows
become U[d] - u_D(x_d) and the matching Jacobian rows become identity
rows. The adjoint solve later transposes exactly this modified matrix.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Dual, KernelEvaluationError
from .elements import build_reference_element, face_quadrature, map_elements, quad_point_coords
from .kernels import scatter_add
from .materials import InvertedDeformationError
from .mesh import BoundaryLocator, FacetSet, Mesh, locate_nodes
from .sparse import CsrMatrix, pattern_from_cells

RESIDUAL_CHUNK = 8192
JACOBIAN_CHUNK = 1024


class ConflictingConstraintError(ValueError):
    """Two Dirichlet specs prescribe different values on one DOF."""


@dataclass(frozen=True)
class DirichletSpec:
    """Component-wise prescribed value on geometrically located nodes."""

    locator: BoundaryLocator
    component: int
    value_fn: Callable  # coordinate (3,) -> float; may be vectorized


@dataclass(frozen=True)
class NeumannSpec:
    """Prescribed traction integrated over a boundary facet set."""

    facet_set: FacetSet
    traction_fn: Callable  # coordinate (3,) -> (vec,); may be vectorized


def _eval_pointwise(fn, points, out_shape):
    """Evaluate fn over points (n, 3), tolerating non-vectorized fns."""
    try:
        out = np.asarray(fn(points), dtype=np.float64)
        if out.shape == out_shape:
            return out
    except Exception:
        pass
    return np.array([fn(p) for p in points], dtype=np.float64).reshape(out_shape)


@dataclass
class Workspace:
    """Per-problem cache: geometry, pattern, BC tables, fixed loads."""

    edofs: np.ndarray  # (N_e, nd) global DOF per element-local DOF
    phys_grads: np.ndarray  # (N_e, 8, 8, 3)
    JxW: np.ndarray  # (N_e, 8)
    shape_values: np.ndarray  # (8, 8)
    indptr: np.ndarray
    indices: np.ndarray
    dest: np.ndarray  # (N_e, nd, nd) scatter slots
    diag_slots: np.ndarray  # (N,) position of each diagonal entry
    dir_dofs: np.ndarray  # sorted constrained DOFs
    dir_values: np.ndarray  # unscaled prescribed values
    dir_row_slots: np.ndarray  # all storage slots in constrained rows
    f_neumann: np.ndarray  # (N,) unscaled traction load
    f_body: np.ndarray  # (N,) body-force load


def workspace(problem) -> Workspace:
    """Build (once) and return the assembly cache for a problem."""
    if getattr(problem, "_ws", None) is not None:
        return problem._ws
    mesh: Mesh = problem.mesh
    vec: int = problem.vec
    n = mesh.n_nodes * vec

    ref = build_reference_element()
    geom = map_elements(mesh.cell_coords())
    indptr, indices, dest = pattern_from_cells(mesh.cells, mesh.n_nodes, vec)
    edofs = (mesh.cells[:, :, None] * vec + np.arange(vec)).reshape(mesh.n_cells, 8 * vec)

    keys = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr)) * n + indices
    diag_slots = np.searchsorted(keys, np.arange(n, dtype=np.int64) * (n + 1))

    dir_dofs, dir_values = _dirichlet_table(mesh, vec, problem.dirichlet)
    dir_row_slots = (
        np.concatenate([np.arange(indptr[d], indptr[d + 1]) for d in dir_dofs])
        if dir_dofs.size
        else np.empty(0, dtype=np.int64)
    )

    f_neumann = np.zeros(n)
    for spec in problem.neumann:
        facets = spec.facet_set.facets
        if facets.size == 0:
            continue
        fq = face_quadrature(mesh, facets)
        tvals = _eval_pointwise(
            spec.traction_fn, fq.points.reshape(-1, 3), (facets.shape[0] * 4, vec)
        ).reshape(facets.shape[0], 4, vec)
        # F[a, v] += sum_q t_v(x_q) phi_a(q) JxW_q
        fe = np.einsum("fqv,qa,fq->fav", tvals, fq.shape_values, fq.JxW)
        face_nodes = mesh.cells[facets[:, 0][:, None], fq.local_nodes]
        face_dofs = face_nodes[:, :, None] * vec + np.arange(vec)
        scatter_add(f_neumann, face_dofs.ravel(), fe.ravel())

    f_body = np.zeros(n)
    if problem.body_force is not None:
        coords = quad_point_coords(mesh)  # (N_e, 8, 3)
        bvals = _eval_pointwise(
            problem.body_force, coords.reshape(-1, 3), (mesh.n_cells * 8, vec)
        ).reshape(mesh.n_cells, 8, vec)
        fe = np.einsum("nqv,qi,nq->niv", bvals, ref.shape_values, geom.JxW)
        scatter_add(f_body, edofs.ravel(), fe.ravel())

    problem._ws = Workspace(
        edofs=edofs,
        phys_grads=geom.phys_grads,
        JxW=geom.JxW,
        shape_values=ref.shape_values,
        indptr=indptr,
        indices=indices,
        dest=dest,
        diag_slots=diag_slots,
        dir_dofs=dir_dofs,
        dir_values=dir_values,
        dir_row_slots=dir_row_slots,
        f_neumann=f_neumann,
        f_body=f_body,
    )
    return problem._ws


def _dirichlet_table(mesh, vec, specs):
    dofs, values = [], []
    for spec in specs:
        if not 0 <= spec.component < vec:
            raise ValueError(f"Dirichlet component {spec.component} out of range for vec={vec}")
        nodes = locate_nodes(mesh, spec.locator)
        if nodes.size == 0:
            continue
        vals = _eval_pointwise(spec.value_fn, mesh.nodes[nodes], (nodes.size,))
        dofs.append(nodes * vec + spec.component)
        values.append(vals)
    if not dofs:
        return np.empty(0, dtype=np.int64), np.empty(0)
    dofs = np.concatenate(dofs)
    values = np.concatenate(values)
    order = np.argsort(dofs, kind="stable")
    dofs, values = dofs[order], values[order]
    dup = dofs[1:] == dofs[:-1]
    if np.any(dup & (values[1:] != values[:-1])):
        d = int(dofs[1:][dup & (values[1:] != values[:-1])][0])
        raise ConflictingConstraintError(
            f"DOF {d} (node {d // vec}, component {d % vec}) receives two "
            "different prescribed values"
        )
    keep = np.concatenate([[True], ~dup])
    return dofs[keep], values[keep]


def _element_residual(problem, sl, U_e, theta_e, state, ws):
    """Residual blocks (chunk, nd) for elements in slice sl.

    U_e / theta_e may be Dual-seeded; geometry and state are plain.
    """
    pg = ws.phys_grads[sl]
    jxw = ws.JxW[sl]
    grad_u = ad.einsum_linear("ckv,cqkd->cqvd", U_e, pg)
    try:
        flux = problem.flux_kernel(grad_u, theta_e, state)
    except InvertedDeformationError as err:
        raise _locate_kernel_error(err, sl) from err
    _check_chunk_finite(flux, sl, "flux")
    Re = ad.einsum_linear("cqvd,cqid,cq->civ", flux, pg, jxw)
    src = problem.source_kernel(theta_e, ws.shape_values)
    if src is not None:
        Re = Re - ad.einsum_linear("cqv,qi,cq->civ", src, ws.shape_values, jxw)
    return _flatten_dofs(Re)


def _flatten_dofs(Re):
    if isinstance(Re, Dual):
        d = Re.dot.shape[0]
        c = Re.val.shape[0]
        return Dual(Re.val.reshape(c, -1), Re.dot.reshape(d, c, -1))
    return Re.reshape(Re.shape[0], -1)


def _locate_kernel_error(err, sl):
    mask = getattr(err, "bad_mask", None)
    if mask is None:
        return err
    mask = np.asarray(mask)
    flat = np.argwhere(mask.reshape(mask.shape[0], -1))
    if flat.size == 0:
        return err
    c, q = flat[0]
    return type(err)(f"{err} [element {sl.start + int(c)}, quad point {int(q)}]")


def _check_chunk_finite(x, sl, label):
    val = ad.value_of(x)
    if np.all(np.isfinite(val)):
        dot = x.dot if isinstance(x, Dual) else None
        if dot is None or np.all(np.isfinite(ad.value_of(dot))):
            return
        bad = ~np.isfinite(ad.value_of(dot))
        bad = bad.reshape(bad.shape[0], bad.shape[1], -1).any(axis=(0, 2))
        c = int(np.flatnonzero(bad)[0])
        raise KernelEvaluationError(
            f"non-finite derivative in {label} kernel [element {sl.start + c}]"
        )
    bad = ~np.isfinite(val)
    flat = np.argwhere(bad.reshape(bad.shape[0], bad.shape[1], -1).any(axis=-1))
    c, q = flat[0]
    raise KernelEvaluationError(
        f"non-finite value in {label} kernel [element {sl.start + int(c)}, quad point {int(q)}]"
    )


def assemble_residual(problem, U, apply_dirichlet: bool = True) -> np.ndarray:
    """Weak-form residual at U: element flux terms minus loads.

    With apply_dirichlet, constrained rows are overwritten with
    U[d] - scale * u_D(x_d) so the Newton update drives them to the
    prescribed values.
    """
    ws = workspace(problem)
    U = np.asarray(U, dtype=np.float64)
    n = problem.mesh.n_nodes * problem.vec
    if U.shape != (n,):
        raise ValueError(f"U must have shape ({n},), got {U.shape}")
    R = np.zeros(n)
    vec = problem.vec
    for lo in range(0, problem.mesh.n_cells, RESIDUAL_CHUNK):
        sl = slice(lo, min(lo + RESIDUAL_CHUNK, problem.mesh.n_cells))
        U_e = U[ws.edofs[sl]].reshape(-1, 8, vec)
        Re = _element_residual(
            problem, sl, U_e, problem.gather_theta(sl), problem.state_for(sl), ws
        )
        scatter_add(R, ws.edofs[sl].ravel(), Re.ravel())
    R -= problem.bc_scale * ws.f_neumann
    R -= ws.f_body
    if apply_dirichlet and ws.dir_dofs.size:
        R[ws.dir_dofs] = U[ws.dir_dofs] - problem.bc_scale * ws.dir_values
    return R


def impose_dirichlet_residual(R, U, mesh, vec, specs, scale: float = 1.0) -> np.ndarray:
    """Overwrite constrained rows of R with U[d] - scale * u_D(x_d)."""
    dofs, values = _dirichlet_table(mesh, vec, specs)
    out = np.array(R, dtype=np.float64, copy=True)
    if dofs.size:
        out[dofs] = np.asarray(U)[dofs] - scale * values
    return out


def assemble_jacobian(problem, U) -> CsrMatrix:
    """Exact tangent dR/dU scattered into the fixed CSR pattern.

    Element blocks come from forward-mode seeds over all element DOFs;
    Dirichlet rows are replaced by identity rows.
    """
    ws = workspace(problem)
    U = np.asarray(U, dtype=np.float64)
    vec = problem.vec
    nd = 8 * vec
    values = np.zeros(ws.indices.shape[0])
    eye = np.eye(nd).reshape(nd, 1, 8, vec)
    for lo in range(0, problem.mesh.n_cells, JACOBIAN_CHUNK):
        sl = slice(lo, min(lo + JACOBIAN_CHUNK, problem.mesh.n_cells))
        c = sl.stop - sl.start
        U_val = U[ws.edofs[sl]].reshape(c, 8, vec)
        U_dual = Dual(U_val, np.broadcast_to(eye, (nd, c, 8, vec)))
        Re = _element_residual(
            problem, sl, U_dual, problem.gather_theta(sl), problem.state_for(sl), ws
        )
        _check_chunk_finite(Re, sl, "residual")
        dot = np.broadcast_to(Re.dot, (nd, c, nd))
        Ke = np.moveaxis(dot, 0, -1)  # (c, row i, col seed)
        scatter_add(values, ws.dest[sl].ravel(), Ke.ravel())
    if ws.dir_dofs.size:
        values[ws.dir_row_slots] = 0.0
        values[ws.diag_slots[ws.dir_dofs]] = 1.0
    return CsrMatrix(indptr=ws.indptr, indices=ws.indices, data=values)


def assemble_param_vjp(problem, U, theta, w) -> np.ndarray:
    """w^T (dR/dtheta) accumulated into design space.

    Constrained residual rows are design-independent, so their w
    entries are zeroed before the element-level products.
    """
    ws = workspace(problem)
    if problem.design_layout is None:
        raise ValueError("problem has no design parameters bound")
    U = np.asarray(U, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    w_eff = np.array(w, dtype=np.float64, copy=True)
    w_eff[ws.dir_dofs] = 0.0
    out = np.zeros(problem.n_design)
    vec = problem.vec
    cells = problem.mesh.cells
    for lo in range(0, problem.mesh.n_cells, JACOBIAN_CHUNK):
        sl = slice(lo, min(lo + JACOBIAN_CHUNK, problem.mesh.n_cells))
        c = sl.stop - sl.start
        U_e = U[ws.edofs[sl]].reshape(c, 8, vec)
        theta_val = problem.gather_theta_from(theta, sl)
        if problem.design_layout == "element":
            seeds = np.ones((1, c))
        else:
            seeds = np.broadcast_to(np.eye(8).reshape(8, 1, 8), (8, c, 8))
        theta_dual = Dual(theta_val, seeds)
        Re = _element_residual(problem, sl, U_e, theta_dual, problem.state_for(sl), ws)
        if not isinstance(Re, Dual):
            continue
        _check_chunk_finite(Re, sl, "residual")
        m = seeds.shape[0]
        dot = np.broadcast_to(Re.dot, (m, c, 8 * vec))
        w_e = w_eff[ws.edofs[sl]]
        contrib = np.einsum("mci,ci->cm", dot, w_e)
        if problem.design_layout == "element":
            scatter_add(out, np.arange(sl.start, sl.stop), contrib.ravel())
        else:
            scatter_add(out, cells[sl].ravel(), contrib.ravel())
    return out

"""The two shipped PDE-constrained optimization applications.

* Full-field source inference: recover the nodal source of a Poisson
  problem from sparse solution observations (sum-of-squares misfit,
  L-BFGS).
* SIMP topology optimization: minimize compliance of a density-
  penalized solid under a volume constraint, with sensitivity
  filtering and the method of moving asymptotes.
"""

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .adjoint import ReducedObjective, adjoint_solve, total_derivative
from .assembly import workspace
from .elements import build_reference_element, face_quadrature
from .mesh import Mesh
from .problems import PoissonProblem, SimpElasticityProblem, simp_flux  # noqa: F401
from .solvers import LinearSolveConfig, NewtonConfig, newton_solve
from .sparse import CsrMatrix

THETA_MIN = 1e-3


# -- Poisson full-field inference ---------------------------------------


def poisson_objective(U, obs_indices, obs_values) -> float:
    """Sum of squared misfits at the observed DOFs only."""
    U = np.asarray(U)
    d = U[np.asarray(obs_indices)] - np.asarray(obs_values)
    return float(d @ d)


def poisson_objective_gradient(U, obs_indices, obs_values) -> np.ndarray:
    g = np.zeros(np.asarray(U).shape[0])
    idx = np.asarray(obs_indices)
    g[idx] = 2.0 * (np.asarray(U)[idx] - np.asarray(obs_values))
    return g


def l2_field_error(mesh: Mesh, u_pred, u_true) -> float:
    """Relative L2 error ||u_pred - u_true|| / ||u_true|| by quadrature."""
    ref = build_reference_element()
    from .elements import map_elements

    geom = map_elements(mesh.cell_coords())
    dp = np.einsum("qk,nk->nq", ref.shape_values, np.asarray(u_pred)[mesh.cells])
    dt = np.einsum("qk,nk->nq", ref.shape_values, np.asarray(u_true)[mesh.cells])
    num = np.sqrt(np.sum((dp - dt) ** 2 * geom.JxW))
    den = np.sqrt(np.sum(dt**2 * geom.JxW))
    return float(num / den)


@dataclass
class InferenceResult:
    theta: np.ndarray
    u_pred: np.ndarray
    u_true: np.ndarray
    obs_indices: np.ndarray
    objective_history: list
    error_history: list
    relative_l2_error: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "objective", "relative_l2_error"])
            for k, (o, e) in enumerate(zip(self.objective_history, self.error_history)):
                writer.writerow([k, repr(o), repr(e)])


def run_inference(
    problem: PoissonProblem,
    true_source: Callable,
    n_obs: int,
    seed: int = 0,
    max_iters: int = 100,
    lin_cfg: LinearSolveConfig = LinearSolveConfig(),
    observe_all: bool = False,
) -> InferenceResult:
    """Recover the nodal source field from sparse observations.

    Ground truth comes from a forward solve with ``true_source``
    interpolated at the nodes. Observation nodes are drawn without
    replacement from the unconstrained nodes (prescribed nodes carry
    no information); the draw is fixed by ``seed``.
    """
    if problem.design_layout != "node":
        raise ValueError("inference requires a PoissonProblem with design_source=True")
    mesh = problem.mesh
    newton_cfg = NewtonConfig(rel_tol=1e-10, abs_tol=1e-10)

    theta_true = np.array([true_source(x) for x in mesh.nodes], dtype=np.float64)
    problem.set_theta(theta_true)
    u_true, _ = newton_solve(problem, cfg=newton_cfg, lin_cfg=lin_cfg)

    ws = workspace(problem)
    free = np.setdiff1d(np.arange(mesh.n_nodes), ws.dir_dofs)
    if observe_all:
        obs = np.arange(mesh.n_nodes)
    else:
        if not 0 < n_obs <= free.size:
            raise ValueError(f"n_obs must lie in [1, {free.size}], got {n_obs}")
        rng = np.random.default_rng(seed)
        obs = np.sort(rng.choice(free, size=n_obs, replace=False))
    obs_values = u_true[obs]

    error_history = []
    obj = ReducedObjective(
        problem,
        objective=lambda U, t: poisson_objective(U, obs, obs_values),
        dj_du=lambda U, t: poisson_objective_gradient(U, obs, obs_values),
        newton_cfg=newton_cfg,
        lin_cfg=lin_cfg,
    )

    from .adjoint import OptimizeHistory

    history = OptimizeHistory()

    def fun(t):
        v, g = obj.value_and_gradient(t)
        history.record(v, g)
        error_history.append(l2_field_error(mesh, obj._U_warm, u_true))
        return v, g

    from scipy.optimize import minimize

    res = minimize(
        fun,
        np.zeros(mesh.n_nodes),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iters, "gtol": 1e-12, "ftol": 1e-16},
    )
    theta_star = res.x
    u_pred = obj.forward(theta_star)
    return InferenceResult(
        theta=theta_star,
        u_pred=u_pred,
        u_true=u_true,
        obs_indices=obs,
        objective_history=history.objective,
        error_history=error_history,
        relative_l2_error=l2_field_error(mesh, u_pred, u_true),
    )


# -- SIMP topology optimization ------------------------------------------


def compliance(problem, U) -> float:
    """Work of the boundary tractions: surface quadrature of u . t."""
    U = np.asarray(U)
    total = 0.0
    mesh = problem.mesh
    vec = problem.vec
    for spec in problem.neumann:
        facets = spec.facet_set.facets
        if facets.size == 0:
            continue
        fq = face_quadrature(mesh, facets)
        from .assembly import _eval_pointwise

        tvals = problem.bc_scale * _eval_pointwise(
            spec.traction_fn, fq.points.reshape(-1, 3), (facets.shape[0] * 4, vec)
        ).reshape(facets.shape[0], 4, vec)
        face_nodes = mesh.cells[facets[:, 0][:, None], fq.local_nodes]
        u_face = U.reshape(-1, vec)[face_nodes]  # (F, 4 a, vec)
        u_q = np.einsum("qa,fav->fqv", fq.shape_values, u_face)
        total += float(np.einsum("fqv,fqv,fq->", u_q, tvals, fq.JxW))
    return total


def compliance_load_vector(problem) -> np.ndarray:
    """dJ/dU of the compliance: the assembled traction load vector."""
    ws = workspace(problem)
    return problem.bc_scale * ws.f_neumann


@dataclass
class FilterOperator:
    """Normalized hat-weight average over element centroids.

    Linear in its input field; a uniform field is unchanged. Weights
    are w_ij = max(0, r - |x_i - x_j|), normalized per receiving
    element.
    """

    matrix: CsrMatrix

    def __call__(self, field: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(field, dtype=np.float64)


def element_centroids(mesh: Mesh) -> np.ndarray:
    return mesh.cell_coords().mean(axis=1)


def density_filter(mesh: Mesh, radius: float) -> FilterOperator:
    """Build the hat-weight averaging operator for the given radius."""
    if not radius > 0:
        raise ValueError(f"filter radius must be positive, got {radius}")
    cent = element_centroids(mesh)
    tree = cKDTree(cent)
    pairs = tree.query_ball_point(cent, r=radius)
    indptr = np.zeros(mesh.n_cells + 1, dtype=np.int32)
    cols = []
    vals = []
    for i, neigh in enumerate(pairs):
        neigh = np.sort(np.asarray(neigh, dtype=np.int64))
        w = radius - np.linalg.norm(cent[neigh] - cent[i], axis=1)
        w = np.maximum(w, 0.0)
        total = w.sum()
        cols.append(neigh)
        vals.append(w / total)
        indptr[i + 1] = indptr[i] + neigh.size
    return FilterOperator(
        CsrMatrix(
            indptr=indptr,
            indices=np.concatenate(cols).astype(np.int32),
            data=np.concatenate(vals),
        )
    )


def filter_sensitivities(filt: FilterOperator, theta, sens, theta_floor=THETA_MIN) -> np.ndarray:
    """Classic sensitivity blur: H(theta * sens) / max(theta, floor)."""
    theta = np.asarray(theta, dtype=np.float64)
    return filt(theta * np.asarray(sens)) / np.maximum(theta, theta_floor)


# -- Method of moving asymptotes ----------------------------------------


@dataclass
class MmaState:
    """Asymptotes and the two previous iterates."""

    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    x_prev: Optional[np.ndarray] = None
    x_prev2: Optional[np.ndarray] = None
    iteration: int = 0
    move_limit: float = 0.2
    asym_init: float = 0.5
    asym_expand: float = 1.2
    asym_shrink: float = 0.7

    @staticmethod
    def fresh(n: int, move_limit: float = 0.2) -> "MmaState":
        return MmaState(move_limit=move_limit)


def mma_update(state: MmaState, x, dj, g_value, g_grad, lb, ub) -> np.ndarray:
    """One MMA step for a single linear inequality constraint g(x) <= 0.

    The objective is replaced by the convex separable moving-asymptote
    approximation around x; the constraint (linear for the volume
    fraction) enters the subproblem exactly. The dual is solved by
    bisection on the one multiplier, with an inner per-variable
    bisection for the stationarity roots. Asymptotes expand on
    oscillation-free steps and shrink on sign flips; results respect
    the box bounds and the move limit.
    """
    x = np.asarray(x, dtype=np.float64)
    dj = np.asarray(dj, dtype=np.float64)
    g_grad = np.broadcast_to(np.asarray(g_grad, dtype=np.float64), x.shape)
    lb = np.broadcast_to(np.asarray(lb, dtype=np.float64), x.shape)
    ub = np.broadcast_to(np.asarray(ub, dtype=np.float64), x.shape)
    rng = ub - lb

    if state.iteration < 2 or state.x_prev is None or state.x_prev2 is None:
        low = x - state.asym_init * rng
        upp = x + state.asym_init * rng
    else:
        osc = (x - state.x_prev) * (state.x_prev - state.x_prev2)
        scale = np.where(osc < 0, state.asym_shrink, np.where(osc > 0, state.asym_expand, 1.0))
        low = x - scale * (state.x_prev - state.lower)
        upp = x + scale * (state.upper - state.x_prev)
        low = np.clip(low, x - 10.0 * rng, x - 0.01 * rng)
        upp = np.clip(upp, x + 0.01 * rng, x + 10.0 * rng)

    move = state.move_limit * rng
    alpha = np.maximum.reduce([lb, low + 0.1 * (x - low), x - move])
    beta = np.minimum.reduce([ub, upp - 0.1 * (upp - x), x + move])

    ux = upp - x
    xl = x - low
    # Symmetric epsilon keeps the subproblem strictly convex and makes
    # a zero-gradient variable stay exactly at x.
    eps = 1e-9 * max(float(np.abs(dj).max()), 1.0)
    p0 = ux**2 * (np.maximum(dj, 0.0) + eps)
    q0 = xl**2 * (np.maximum(-dj, 0.0) + eps)

    def x_of(y):
        # Per-variable root of p0/(U-t)^2 - q0/(t-L)^2 + y*c = 0, a
        # strictly increasing function of t on (L, U); clipped to the
        # box. 80 bisection steps resolve the root to machine level.
        def phi(t):
            return p0 / (upp - t) ** 2 - q0 / (t - low) ** 2 + y * g_grad

        lo = alpha.copy()
        hi = beta.copy()
        at_lo = phi(lo) >= 0.0
        at_hi = phi(hi) <= 0.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            neg = phi(mid) < 0.0
            lo = np.where(neg, mid, lo)
            hi = np.where(neg, hi, mid)
        t = 0.5 * (lo + hi)
        return np.where(at_lo, alpha, np.where(at_hi, beta, t))

    def g_of(xv):
        # The volume constraint is linear, so its subproblem model is
        # itself: g(xv) = g(x) + c . (xv - x).
        return g_value + float(g_grad @ (xv - x))

    if g_of(x_of(0.0)) <= 0.0:
        y_star = 0.0
        x_new = x_of(0.0)
    else:
        y_hi = 1.0
        while g_of(x_of(y_hi)) > 0.0 and y_hi < 1e12:
            y_hi *= 2.0
        y_lo = 0.0
        for _ in range(100):
            y_mid = 0.5 * (y_lo + y_hi)
            if g_of(x_of(y_mid)) > 0.0:
                y_lo = y_mid
            else:
                y_hi = y_mid
        x_new = x_of(y_hi)

    state.lower = low
    state.upper = upp
    state.x_prev2 = state.x_prev
    state.x_prev = x.copy()
    state.iteration += 1
    return x_new


# -- topology optimization driver ----------------------------------------


@dataclass
class TopOptResult:
    theta: np.ndarray
    compliance_history: list
    volume_history: list
    final_compliance: float
    final_volume: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "compliance", "volume_fraction"])
            for k, (c, v) in enumerate(zip(self.compliance_history, self.volume_history)):
                writer.writerow([k, repr(c), repr(v)])


def run_topopt(
    problem: SimpElasticityProblem,
    volume_fraction: float,
    n_steps: int,
    filter_radius: Optional[float] = None,
    design_mask: Optional[np.ndarray] = None,
    move_limit: float = 0.2,
    newton_cfg: NewtonConfig = NewtonConfig(),
    lin_cfg: LinearSolveConfig = LinearSolveConfig(),
    callback: Optional[Callable] = None,
) -> TopOptResult:
    """Compliance minimization with volume-constrained MMA.

    Starts from the uniform feasible design theta = volume_fraction.
    Each step: forward solve, adjoint compliance gradient, sensitivity
    filter, MMA update. Elements outside ``design_mask`` stay solid.
    History rows hold the design used in each step's forward solve.
    """
    mesh = problem.mesh
    n_e = mesh.n_cells
    mask = np.ones(n_e, dtype=bool) if design_mask is None else np.asarray(design_mask, dtype=bool)
    if filter_radius is None:
        edge = np.linalg.norm(mesh.cell_coords()[0, 1] - mesh.cell_coords()[0, 0])
        filter_radius = 1.5 * edge
    filt = density_filter(mesh, filter_radius)

    theta = np.full(n_e, float(volume_fraction))
    theta[~mask] = 1.0
    state = MmaState.fresh(int(mask.sum()), move_limit=move_limit)
    n_design = int(mask.sum())
    g_grad = np.full(n_design, 1.0 / n_design)

    comp_hist, vol_hist = [], []
    U_warm = None
    for step in range(n_steps):
        problem.set_theta(theta)
        U, _ = newton_solve(problem, U_warm, cfg=newton_cfg, lin_cfg=lin_cfg)
        U_warm = U.copy()
        c = compliance(problem, U)
        comp_hist.append(c)
        vol_hist.append(float(theta[mask].mean()))

        lam = adjoint_solve(problem, U, compliance_load_vector(problem), lin_cfg=lin_cfg)
        sens = total_derivative(problem, U, lam, problem.theta)
        sens = filter_sensitivities(filt, problem.theta, sens, problem.theta_min)

        g_value = float(theta[mask].mean()) - volume_fraction
        theta_new = theta.copy()
        theta_new[mask] = mma_update(
            state, theta[mask], sens[mask], g_value, g_grad, problem.theta_min, 1.0
        )
        theta = theta_new
        if callback is not None:
            callback(step, theta, c)

    problem.set_theta(theta)
    U, _ = newton_solve(problem, U_warm, cfg=newton_cfg, lin_cfg=lin_cfg)
    final_c = compliance(problem, U)
    return TopOptResult(
        theta=theta,
        compliance_history=comp_hist,
        volume_history=vol_hist,
        final_compliance=final_c,
        final_volume=float(theta[mask].mean()),
    )

"""Linear, nonlinear, and incremental-load solvers.

The linear solver is BiCGSTAB with a Jacobi (diagonal) preconditioner,
which the Dirichlet identity rows and elliptic assembly keep
invertible. Newton's method assembles the exact forward-mode tangent
each iteration; quasi-static loading ramps the boundary data and
commits path-dependent state after each converged step.
"""

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .assembly import assemble_jacobian, assemble_residual, workspace
from .mesh import BoundaryLocator, locate_nodes
from .sparse import CsrMatrix


class LinearSolverError(RuntimeError):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class BreakdownError(LinearSolverError):
    pass


class NonConvergenceError(RuntimeError):
    def __init__(self, message, residual_norms=None, step=None):
        super().__init__(message)
        self.residual_norms = residual_norms or []
        self.step = step


@dataclass(frozen=True)
class LinearSolveConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_iters: int = 0  # 0 -> 10 * N

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("linear solver tolerances must be positive")


@dataclass(frozen=True)
class NewtonConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_iters: int = 20

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("Newton tolerances must be positive")


@dataclass(frozen=True)
class LoadSchedule:
    """Ordered boundary-value scale factors applied step by step."""

    factors: tuple

    def __post_init__(self):
        factors = tuple(float(f) for f in self.factors)
        if not factors:
            raise ValueError("load schedule must contain at least one step")
        if not all(np.isfinite(factors)):
            raise ValueError("load schedule factors must be finite")
        object.__setattr__(self, "factors", factors)

    @staticmethod
    def ramp(n_steps: int, amplitude: float = 1.0) -> "LoadSchedule":
        return LoadSchedule(tuple(amplitude * (k + 1) / n_steps for k in range(n_steps)))

    @staticmethod
    def ramp_and_back(n_steps: int, amplitude: float = 1.0) -> "LoadSchedule":
        up = [amplitude * (k + 1) / n_steps for k in range(n_steps)]
        down = [amplitude * (n_steps - 1 - k) / n_steps for k in range(n_steps)]
        return LoadSchedule(tuple(up + down))


def bicgstab_jacobi(
    A: CsrMatrix, b: np.ndarray, x0: Optional[np.ndarray] = None, cfg: LinearSolveConfig = LinearSolveConfig()
) -> np.ndarray:
    """Solve A x = b by BiCGSTAB, left-preconditioned with diag(A).

    Terminates on the true residual: ||A x - b|| <= max(rel_tol ||b||,
    abs_tol), confirmed with an explicit matvec before returning. A
    recurrence breakdown (rho or omega vanishing, which the identity
    rows of constrained systems can trigger exactly) restarts the
    recurrence from the explicit residual; BreakdownError is raised
    only when such a restart makes no progress.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    diag = A.diagonal()
    if np.any(diag == 0.0):
        raise LinearSolverError("zero diagonal entry; Jacobi preconditioner undefined")
    inv_diag = 1.0 / diag

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64, copy=True)
    tol = max(cfg.rel_tol * np.linalg.norm(b), cfg.abs_tol)
    max_iters = cfg.max_iters if cfg.max_iters > 0 else 10 * n

    it = 0
    last_breakdown_res = None
    while True:
        # (Re)start the recurrence on M^-1 A x = M^-1 b from the
        # explicit residual; the true residual is diag * r.
        r = inv_diag * (b - A @ x)
        res = np.linalg.norm(diag * r)
        if res <= tol:
            return x
        if it >= max_iters:
            raise LinearSolverError(
                f"BiCGSTAB did not converge in {max_iters} iterations "
                f"(residual {res:.3e}, tol {tol:.3e})",
                iterations=it,
                residual=res,
            )
        r0 = r.copy()
        rho = alpha = omega = 1.0
        v = np.zeros(n)
        p = np.zeros(n)
        first = True
        while it < max_iters:
            it += 1
            rho_new = r0 @ r
            scale = np.linalg.norm(r0) * np.linalg.norm(r)
            broke = abs(rho_new) <= 1e-30 * scale or (not first and omega == 0.0)
            if not broke:
                beta = 0.0 if first else (rho_new / rho) * (alpha / omega)
                first = False
                rho = rho_new
                p = r + beta * (p - omega * v)
                v = inv_diag * (A @ p)
                r0v = r0 @ v
                broke = r0v == 0.0
            if broke:
                # Shadow residual went orthogonal (identity rows of
                # constrained systems trigger this exactly). Restart
                # from the explicit residual; stuck only if the last
                # restart brought no progress.
                if last_breakdown_res is not None and res >= 0.999 * last_breakdown_res:
                    raise BreakdownError(
                        f"BiCGSTAB breakdown without progress at iteration {it} "
                        f"(residual {res:.3e})",
                        iterations=it,
                        residual=res,
                    )
                last_breakdown_res = res
                break
            alpha = rho / r0v
            s = r - alpha * v
            t = inv_diag * (A @ s)
            tt = t @ t
            omega = (t @ s) / tt if tt > 0.0 else 0.0
            x += alpha * p + omega * s
            r = s - omega * t
            res = np.linalg.norm(diag * r)
            if res <= tol:
                break  # outer loop verifies with an explicit residual


@dataclass
class NewtonReport:
    residual_norms: list
    n_iterations: int
    converged: bool


def _tangent_matrix(problem, U) -> CsrMatrix:
    if problem.jacobian_constant:
        cached = getattr(problem, "_jac_cache", None)
        if cached is None:
            cached = assemble_jacobian(problem, U)
            problem._jac_cache = cached
        return cached
    return assemble_jacobian(problem, U)


def tangent_transpose(problem, U) -> CsrMatrix:
    """Transpose of the (Dirichlet-modified) tangent at U."""
    if problem.jacobian_constant:
        cached = getattr(problem, "_jac_t_cache", None)
        if cached is None:
            cached = _tangent_matrix(problem, U).transpose()
            problem._jac_t_cache = cached
        return cached
    return assemble_jacobian(problem, U).transpose()


def newton_solve(
    problem,
    U0: Optional[np.ndarray] = None,
    cfg: NewtonConfig = NewtonConfig(),
    lin_cfg: LinearSolveConfig = LinearSolveConfig(),
):
    """Newton iteration on the assembled residual.

    Returns (U, NewtonReport). Raises NonConvergenceError with the
    residual history when max_iters is exhausted.
    """
    U = np.zeros(problem.n_dofs) if U0 is None else np.array(U0, dtype=np.float64, copy=True)
    R = assemble_residual(problem, U)
    norms = [float(np.linalg.norm(R))]
    r0 = norms[0]
    for it in range(cfg.max_iters):
        if norms[-1] <= max(cfg.rel_tol * r0, cfg.abs_tol):
            return U, NewtonReport(residual_norms=norms, n_iterations=it, converged=True)
        K = _tangent_matrix(problem, U)
        dU = bicgstab_jacobi(K, -R, cfg=lin_cfg)
        U += dU
        R = assemble_residual(problem, U)
        norms.append(float(np.linalg.norm(R)))
    if norms[-1] <= max(cfg.rel_tol * r0, cfg.abs_tol):
        return U, NewtonReport(residual_norms=norms, n_iterations=cfg.max_iters, converged=True)
    raise NonConvergenceError(
        f"Newton did not converge in {cfg.max_iters} iterations "
        f"(residual history {['%.3e' % v for v in norms]})",
        residual_norms=norms,
    )


def reaction_force(problem, U, locator: BoundaryLocator, component: int) -> float:
    """Discrete reaction: unconstrained residual summed over located DOFs."""
    R = assemble_residual(problem, U, apply_dirichlet=False)
    nodes = locate_nodes(problem.mesh, locator)
    return float(R[nodes * problem.vec + component].sum())


def quad_point_stress(problem, U) -> np.ndarray:
    """Flux tensor at every quadrature point, (N_e, 8, vec, 3)."""
    ws = workspace(problem)
    U = np.asarray(U, dtype=np.float64)
    out = np.empty((problem.mesh.n_cells, 8, problem.vec, 3))
    chunk = 8192
    for lo in range(0, problem.mesh.n_cells, chunk):
        sl = slice(lo, min(lo + chunk, problem.mesh.n_cells))
        U_e = U[ws.edofs[sl]].reshape(-1, 8, problem.vec)
        grad_u = np.einsum("ckv,cqkd->cqvd", U_e, ws.phys_grads[sl])
        out[sl] = ad.value_of(
            problem.flux_kernel(grad_u, problem.gather_theta(sl), problem.state_for(sl))
        )
    return out


def volume_averaged_stress(problem, U) -> np.ndarray:
    """Volume average of the flux tensor over the mesh, (vec, 3)."""
    ws = workspace(problem)
    sig = quad_point_stress(problem, U)
    total = np.einsum("cqvd,cq->vd", sig, ws.JxW)
    return total / ws.JxW.sum()


@dataclass
class StepRecord:
    step: int
    scale: float
    U: np.ndarray
    newton_iterations: int
    residual_norm: float
    residual_history: list = field(default_factory=list)
    reaction: Optional[float] = None
    avg_stress: Optional[np.ndarray] = None


@dataclass
class LoadHistory:
    steps: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["step", "scale", "newton_iterations", "residual_norm", "reaction", "avg_stress_zz"]
            )
            for rec in self.steps:
                writer.writerow(
                    [
                        rec.step,
                        repr(rec.scale),
                        rec.newton_iterations,
                        repr(rec.residual_norm),
                        "" if rec.reaction is None else repr(rec.reaction),
                        "" if rec.avg_stress is None else repr(float(rec.avg_stress[-1, -1])),
                    ]
                )

    def write_newton_csv(self, path) -> None:
        """Per-iteration residual norms: (step, iteration, residual)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "iteration", "residual_norm"])
            for rec in self.steps:
                for it, norm in enumerate(rec.residual_history):
                    writer.writerow([rec.step, it, repr(norm)])


def incremental_solve(
    problem,
    schedule: LoadSchedule,
    cfg: NewtonConfig = NewtonConfig(),
    lin_cfg: LinearSolveConfig = LinearSolveConfig(),
    reaction_locator: Optional[BoundaryLocator] = None,
    reaction_component: int = 2,
    record_stress: bool = True,
    on_step=None,
) -> LoadHistory:
    """Quasi-static driver: scale boundary data, solve, commit state.

    Each step warm-starts Newton from the previous converged solution.
    ``on_step(record)`` fires after the step converges but before the
    state commit, so path-dependent stress queries see step-k state.
    Non-convergence aborts with the failing step index.
    """
    history = LoadHistory()
    U = np.zeros(problem.n_dofs)
    for k, factor in enumerate(schedule.factors):
        problem.bc_scale = factor
        try:
            U, report = newton_solve(problem, U, cfg=cfg, lin_cfg=lin_cfg)
        except (NonConvergenceError, LinearSolverError) as err:
            raise NonConvergenceError(
                f"load step {k} (scale {factor}) failed: {err}", step=k
            ) from err
        rec = StepRecord(
            step=k,
            scale=factor,
            U=U.copy(),
            newton_iterations=report.n_iterations,
            residual_norm=report.residual_norms[-1],
            residual_history=list(report.residual_norms),
        )
        if record_stress:
            rec.avg_stress = volume_averaged_stress(problem, U)
        if reaction_locator is not None:
            rec.reaction = reaction_force(problem, U, reaction_locator, reaction_component)
        if on_step is not None:
            on_step(rec)
        if problem.material.path_dependent:
            problem.commit(U)
        history.steps.append(rec)
    return history

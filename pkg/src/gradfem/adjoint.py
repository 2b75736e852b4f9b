"""Discretize-then-optimize machinery.

The forward problem is the discrete constraint C(U, theta) = 0. With a
converged U, the adjoint system (dC/dU)^T lambda = (dJ/dU)^T reuses
the transposed forward tangent (Dirichlet-modified, exactly as
assembled), and the total design derivative is

    dJhat/dtheta = -lambda^T dC/dtheta + dJ/dtheta,

so gradients are exact for the discrete system. The Taylor test
verifies that: zeroth-order remainders shrink like h, first-order
remainders like h^2.
"""

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .assembly import assemble_param_vjp
from .solvers import LinearSolveConfig, NewtonConfig, bicgstab_jacobi, newton_solve, tangent_transpose


def adjoint_solve(
    problem, U, dj_du: np.ndarray, lin_cfg: LinearSolveConfig = LinearSolveConfig(),
    x0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Solve (dC/dU)^T lambda = dj_du at the converged state U."""
    KT = tangent_transpose(problem, U)
    return bicgstab_jacobi(KT, np.asarray(dj_du, dtype=np.float64), x0=x0, cfg=lin_cfg)


def total_derivative(problem, U, lam, theta, dj_dtheta=None) -> np.ndarray:
    """dJhat/dtheta = -lambda^T dC/dtheta + dJ/dtheta."""
    grad = -assemble_param_vjp(problem, U, theta, lam)
    if dj_dtheta is not None:
        grad = grad + np.asarray(dj_dtheta, dtype=np.float64)
    return grad


class ReducedObjective:
    """Jhat(theta) = J(U(theta), theta) with adjoint gradients.

    ``objective(U, theta) -> float``, ``dj_du(U, theta) -> (N,)`` and
    optionally ``dj_dtheta(U, theta) -> (M,)`` define J. Each
    evaluation re-solves the forward problem (warm-started), so
    gradient queries cost one forward and one adjoint solve.
    """

    def __init__(
        self,
        problem,
        objective: Callable,
        dj_du: Callable,
        dj_dtheta: Optional[Callable] = None,
        newton_cfg: NewtonConfig = NewtonConfig(),
        lin_cfg: LinearSolveConfig = LinearSolveConfig(),
    ):
        self.problem = problem
        self.objective = objective
        self.dj_du = dj_du
        self.dj_dtheta = dj_dtheta
        self.newton_cfg = newton_cfg
        self.lin_cfg = lin_cfg
        self._U_warm = None
        self._lam_warm = None

    def forward(self, theta) -> np.ndarray:
        self.problem.set_theta(theta)
        U, _ = newton_solve(self.problem, self._U_warm, cfg=self.newton_cfg, lin_cfg=self.lin_cfg)
        self._U_warm = U.copy()
        return U

    def value(self, theta) -> float:
        U = self.forward(theta)
        return float(self.objective(U, np.asarray(theta)))

    def value_and_gradient(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        U = self.forward(theta)
        val = float(self.objective(U, theta))
        lam = adjoint_solve(
            self.problem, U, self.dj_du(U, theta), lin_cfg=self.lin_cfg, x0=self._lam_warm
        )
        self._lam_warm = lam.copy()
        extra = self.dj_dtheta(U, theta) if self.dj_dtheta is not None else None
        grad = total_derivative(self.problem, U, lam, theta, extra)
        return val, grad

    def gradient(self, theta) -> np.ndarray:
        return self.value_and_gradient(theta)[1]


@dataclass
class TaylorReport:
    h_values: np.ndarray
    r_zeroth: np.ndarray
    r_first: np.ndarray
    orders_zeroth: np.ndarray  # successive log-ratio orders
    orders_first: np.ndarray
    fitted_zeroth: float  # least-squares slope over the h grid
    fitted_first: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["h", "r_zeroth", "r_first"])
            for h, r0, r1 in zip(self.h_values, self.r_zeroth, self.r_first):
                writer.writerow([repr(h), repr(r0), repr(r1)])
            writer.writerow(["fitted_order_zeroth", repr(self.fitted_zeroth), ""])
            writer.writerow(["fitted_order_first", repr(self.fitted_first), ""])


def taylor_test(value_fn, gradient_fn, theta, delta_theta, h_values) -> TaylorReport:
    """Remainder convergence check for an objective and its gradient.

    r_zeroth(h) = |Jhat(theta + h dtheta) - Jhat(theta)| must shrink at
    order 1 and r_first(h) = |Jhat(theta + h dtheta) - Jhat(theta)
    - h g . dtheta| at order 2 when the gradient is exact.
    """
    theta = np.asarray(theta, dtype=np.float64)
    delta_theta = np.asarray(delta_theta, dtype=np.float64)
    h_values = np.asarray(sorted(h_values, reverse=True), dtype=np.float64)
    if np.any(h_values <= 0):
        raise ValueError("taylor test step sizes must be positive")

    j0 = float(value_fn(theta))
    gdot = float(np.dot(np.asarray(gradient_fn(theta), dtype=np.float64), delta_theta))
    r0, r1 = [], []
    for h in h_values:
        jh = float(value_fn(theta + h * delta_theta))
        if not np.isfinite(jh):
            raise ValueError(f"objective non-finite at step size h={h}")
        r0.append(abs(jh - j0))
        r1.append(abs(jh - j0 - h * gdot))
    r0 = np.asarray(r0)
    r1 = np.asarray(r1)

    def orders(r):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(r[:-1] / r[1:]) / np.log(h_values[:-1] / h_values[1:])

    def fitted(r):
        good = r > 0
        if good.sum() < 2:
            return float("nan")
        return float(np.polyfit(np.log(h_values[good]), np.log(r[good]), 1)[0])

    return TaylorReport(
        h_values=h_values,
        r_zeroth=r0,
        r_first=r1,
        orders_zeroth=orders(r0),
        orders_first=orders(r1),
        fitted_zeroth=fitted(r0),
        fitted_first=fitted(r1),
    )


@dataclass
class OptimizeHistory:
    """One row per gradient query of the optimizer."""

    objective: list = field(default_factory=list)
    gradient_norm: list = field(default_factory=list)

    def record(self, value, grad) -> None:
        self.objective.append(float(value))
        self.gradient_norm.append(float(np.linalg.norm(grad)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "objective", "gradient_norm"])
            for k, (v, g) in enumerate(zip(self.objective, self.gradient_norm)):
                writer.writerow([k, repr(v), repr(g)])


def optimize(
    value_and_gradient: Callable,
    theta0: np.ndarray,
    method: str = "lbfgs",
    max_iters: int = 100,
    bounds=None,
    volume_constraint: Optional[Callable] = None,
    gtol: float = 1e-8,
):
    """Gradient-based minimization loop over the reduced objective.

    method "lbfgs" wraps scipy's limited-memory BFGS (with optional
    box bounds); "mma" runs the moving-asymptotes update and requires
    ``volume_constraint(theta) -> (value, gradient)`` plus bounds.
    Returns (theta_star, OptimizeHistory) with one history row per
    gradient query.
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    history = OptimizeHistory()

    if method == "lbfgs":
        from scipy.optimize import minimize

        def fun(t):
            v, g = value_and_gradient(t)
            history.record(v, g)
            return v, g

        res = minimize(
            fun,
            theta0,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": max_iters, "gtol": gtol, "ftol": 1e-16},
        )
        return res.x, history

    if method == "mma":
        if bounds is None or volume_constraint is None:
            raise ValueError("MMA needs box bounds and a volume constraint")
        from .inverse import MmaState, mma_update

        lb = np.full(theta0.shape, bounds[0]) if np.isscalar(bounds[0]) else np.asarray(bounds[0])
        ub = np.full(theta0.shape, bounds[1]) if np.isscalar(bounds[1]) else np.asarray(bounds[1])
        state = MmaState.fresh(theta0.shape[0])
        theta = theta0.copy()
        for _ in range(max_iters):
            v, g = value_and_gradient(theta)
            history.record(v, g)
            gv, gg = volume_constraint(theta)
            theta = mma_update(state, theta, g, gv, gg, lb, ub)
        return theta, history

    raise ValueError(f"unknown optimizer {method!r}; expected 'lbfgs' or 'mma'")

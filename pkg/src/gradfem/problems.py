"""Weak-form problem bindings: mesh + material + boundary conditions
+ optional design-parameter coupling.

A problem instance owns its assembly workspace (geometry and sparsity
caches) and, for path-dependent materials, the committed quadrature
state. ``bc_scale`` scales all Dirichlet values and Neumann tractions,
which is how the incremental load driver ramps boundary data.
"""

from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .assembly import DirichletSpec, NeumannSpec
from .materials import (
    ElasticConstants,
    IsotropicDiffusion,
    J2Plasticity,
    LinearElastic,
    NeoHookean,
    QuadPointState,
)
from .mesh import Mesh


class WeakFormProblem:
    """Base class: the discrete constraint C(U, theta) = 0.

    Subclasses define the flux kernel (and optionally a design-bound
    source term) in terms of the autodiff primitive set.
    """

    design_layout: Optional[str] = None  # None | "element" | "node"

    def __init__(
        self,
        mesh: Mesh,
        material,
        dirichlet: Sequence[DirichletSpec],
        neumann: Sequence[NeumannSpec] = (),
        body_force: Optional[Callable] = None,
    ):
        self.mesh = mesh
        self.material = material
        self.vec = material.vec
        self.dirichlet = list(dirichlet)
        self.neumann = list(neumann)
        self.body_force = body_force
        self.bc_scale = 1.0
        self.theta: Optional[np.ndarray] = None
        self._ws = None

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_nodes * self.vec

    @property
    def n_design(self) -> int:
        if self.design_layout == "element":
            return self.mesh.n_cells
        if self.design_layout == "node":
            return self.mesh.n_nodes
        return 0

    # True when dR/dU depends on neither U nor theta, allowing solver
    # reuse of the assembled matrix.
    jacobian_constant = False

    def flux_kernel(self, grad_u, theta_e, state):
        return self.material.flux(grad_u, state)

    def source_kernel(self, theta_e, shape_values):
        return None

    def state_for(self, sl):
        return None

    def gather_theta(self, sl):
        if self.design_layout is None:
            return None
        if self.theta is None:
            raise ValueError("problem has a design layout but no theta bound")
        return self.gather_theta_from(self.theta, sl)

    def gather_theta_from(self, theta, sl):
        if self.design_layout == "element":
            return np.asarray(theta)[sl]
        if self.design_layout == "node":
            return np.asarray(theta)[self.mesh.cells[sl]]
        return None

    def set_theta(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_design,):
            raise ValueError(f"theta must have shape ({self.n_design},), got {theta.shape}")
        self.theta = theta


class PoissonProblem(WeakFormProblem):
    """-alpha lap(u) = b with a fixed or design-bound nodal source.

    When ``design_source`` is set, theta holds the nodal values of b
    and enters the residual through the source quadrature.
    """

    def __init__(
        self,
        mesh: Mesh,
        alpha: float,
        dirichlet: Sequence[DirichletSpec],
        neumann: Sequence[NeumannSpec] = (),
        source: Optional[Callable] = None,
        design_source: bool = False,
    ):
        super().__init__(mesh, IsotropicDiffusion(alpha), dirichlet, neumann, body_force=source)
        if design_source:
            if source is not None:
                raise ValueError("pass either a fixed source or design_source, not both")
            self.design_layout = "node"
            self.set_theta(np.zeros(mesh.n_nodes))

    jacobian_constant = True  # flux linear in U, theta only in the source

    def source_kernel(self, theta_e, shape_values):
        if self.design_layout is None:
            return None
        # b at quad points: sum_k theta_e[c, k] phi_k(q), one component.
        bq = ad.einsum_linear("ck,qk->cq", theta_e, shape_values)
        return bq[..., None]


class LinearElasticityProblem(WeakFormProblem):
    jacobian_constant = True

    def __init__(self, mesh, constants: ElasticConstants, dirichlet, neumann=(), body_force=None):
        super().__init__(mesh, LinearElastic(constants), dirichlet, neumann, body_force)


class NeoHookeanProblem(WeakFormProblem):
    def __init__(self, mesh, constants: ElasticConstants, dirichlet, neumann=(), body_force=None):
        super().__init__(mesh, NeoHookean(constants), dirichlet, neumann, body_force)


class J2PlasticityProblem(WeakFormProblem):
    """Perfect J2 plasticity; holds the committed per-step state."""

    def __init__(self, mesh, constants: ElasticConstants, dirichlet, neumann=(), body_force=None):
        super().__init__(mesh, J2Plasticity(constants), dirichlet, neumann, body_force)
        self.state = QuadPointState.fresh((mesh.n_cells, 8))

    def state_for(self, sl):
        return QuadPointState(self.state.eps_prev[sl], self.state.sig_prev[sl])

    def commit(self, U) -> None:
        """Commit strain/stress after a converged load step."""
        from .assembly import workspace

        ws = workspace(self)
        U = np.asarray(U, dtype=np.float64)
        U_e = U[ws.edofs].reshape(self.mesh.n_cells, 8, self.vec)
        grad_u = np.einsum("ckv,cqkd->cqvd", U_e, ws.phys_grads)
        self.state = self.material.commit(grad_u, self.state)


def simp_flux(grad_u, theta_e, penalty, material):
    """theta^p times the base material flux (the SIMP stiffness law)."""
    scale = theta_e**penalty
    return material.flux(grad_u, None) * scale[..., None, None, None]


class SimpElasticityProblem(WeakFormProblem):
    """Density-penalized elasticity: flux scaled by theta^p per element.

    theta lives in [theta_min, 1]; the floor keeps the operator
    invertible where material vanishes.
    """

    design_layout = "element"

    def __init__(
        self,
        mesh,
        base_material,
        dirichlet,
        neumann=(),
        penalty: float = 3.0,
        theta_min: float = 1e-3,
    ):
        super().__init__(mesh, base_material, dirichlet, neumann)
        if base_material.vec != 3:
            raise ValueError("SIMP penalization applies to the solid models")
        self.penalty = float(penalty)
        self.theta_min = float(theta_min)
        self.set_theta(np.ones(mesh.n_cells))

    def set_theta(self, theta):
        theta = np.clip(np.asarray(theta, dtype=np.float64), self.theta_min, 1.0)
        super().set_theta(theta)

    def flux_kernel(self, grad_u, theta_e, state):
        return simp_flux(grad_u, theta_e, self.penalty, self.material)

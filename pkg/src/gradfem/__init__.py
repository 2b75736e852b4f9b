"""Differentiable hexahedral finite element solver.

Forward solves for elliptic problems (Poisson, linear elasticity,
neo-Hookean hyperelasticity, perfect J2 plasticity) on HEX8 meshes,
with element-level forward-mode automatic differentiation supplying
exact tangent matrices and adjoint-based design sensitivities for
inverse problems (full-field inference, SIMP topology optimization).
"""

__version__ = "0.1.0"

from .mesh import (
    Mesh,
    BoundaryLocator,
    FacetSet,
    generate_box_mesh,
    locate_nodes,
    boundary_facets,
    boundary_nodes,
    import_mesh,
)
from .materials import (
    ElasticConstants,
    LinearElastic,
    NeoHookean,
    J2Plasticity,
    IsotropicDiffusion,
    QuadPointState,
)
from .problems import (
    WeakFormProblem,
    PoissonProblem,
    LinearElasticityProblem,
    NeoHookeanProblem,
    J2PlasticityProblem,
    SimpElasticityProblem,
)
from .assembly import (
    DirichletSpec,
    NeumannSpec,
    assemble_residual,
    assemble_jacobian,
    assemble_param_vjp,
    impose_dirichlet_residual,
)
from .solvers import (
    LinearSolveConfig,
    NewtonConfig,
    LoadSchedule,
    bicgstab_jacobi,
    newton_solve,
    incremental_solve,
    reaction_force,
)
from .adjoint import (
    ReducedObjective,
    adjoint_solve,
    total_derivative,
    taylor_test,
    optimize,
)

__all__ = [
    "Mesh", "BoundaryLocator", "FacetSet", "generate_box_mesh", "locate_nodes",
    "boundary_facets", "boundary_nodes", "import_mesh",
    "ElasticConstants", "LinearElastic", "NeoHookean", "J2Plasticity",
    "IsotropicDiffusion", "QuadPointState",
    "WeakFormProblem", "PoissonProblem", "LinearElasticityProblem",
    "NeoHookeanProblem", "J2PlasticityProblem", "SimpElasticityProblem",
    "DirichletSpec", "NeumannSpec", "assemble_residual", "assemble_jacobian",
    "assemble_param_vjp", "impose_dirichlet_residual",
    "LinearSolveConfig", "NewtonConfig", "LoadSchedule", "bicgstab_jacobi",
    "newton_solve", "incremental_solve", "reaction_force",
    "ReducedObjective", "adjoint_solve", "total_derivative", "taylor_test",
    "optimize",
]

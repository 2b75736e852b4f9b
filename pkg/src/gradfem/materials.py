"""Constitutive kernels: each maps a solution gradient (and, for
path-dependent models, the committed state) to the flux tensor of the
weak form. All kernels are written against the autodiff primitive set
so element tangents come out of forward-mode differentiation directly.

Stress units are MPa, lengths mm, so reactions come out in N.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import det3, grad_wrt_3x3, ramp, sqrt, sym3, trace3, where

_EYE3 = np.eye(3)


class InvertedDeformationError(ValueError):
    """det(F) <= 0: deformation state outside the model's domain."""

    def __init__(self, message, bad_mask=None):
        super().__init__(message)
        self.bad_mask = bad_mask


@dataclass(frozen=True)
class ElasticConstants:
    """Isotropic constants with the derived moduli.

    lam/mu are the Lame parameters; G/kappa the shear/bulk moduli used
    by the hyperelastic energy; sigma_yield only matters for J2.
    """

    E: float
    nu: float
    sigma_yield: float = np.inf
    lam: float = field(init=False)
    mu: float = field(init=False)
    G: float = field(init=False)
    kappa: float = field(init=False)

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError(f"Young's modulus must be positive, got {self.E}")
        if not (-1.0 < self.nu < 0.5):
            raise ValueError(f"Poisson's ratio must lie in (-1, 0.5), got {self.nu}")
        if not self.sigma_yield > 0:
            raise ValueError(f"yield strength must be positive, got {self.sigma_yield}")
        object.__setattr__(self, "lam", self.E * self.nu / ((1 + self.nu) * (1 - 2 * self.nu)))
        object.__setattr__(self, "mu", self.E / (2 * (1 + self.nu)))
        object.__setattr__(self, "G", self.E / (2 * (1 + self.nu)))
        object.__setattr__(self, "kappa", self.E / (3 * (1 - 2 * self.nu)))


@dataclass
class QuadPointState:
    """Committed strain/stress history per quadrature point.

    eps_prev/sig_prev have shape (..., 3, 3); a fresh state is zeros.
    """

    eps_prev: np.ndarray
    sig_prev: np.ndarray

    @staticmethod
    def fresh(shape=()) -> "QuadPointState":
        return QuadPointState(
            eps_prev=np.zeros(tuple(shape) + (3, 3)),
            sig_prev=np.zeros(tuple(shape) + (3, 3)),
        )


def linear_elastic_flux(grad_u, constants: ElasticConstants):
    """Cauchy stress: lam tr(eps) I + 2 mu eps with eps = sym(grad u)."""
    eps = sym3(grad_u)
    return constants.lam * trace3(eps)[..., None, None] * _EYE3 + (2.0 * constants.mu) * eps


def neo_hookean_energy(F, constants: ElasticConstants):
    """W(F) = G/2 (J^{-2/3} I1 - 3) + kappa/2 (J - 1)^2 with I1 = tr(F^T F)."""
    J = det3(F)
    I1 = (F * F).sum((-1, -2))
    return 0.5 * constants.G * (J ** (-2.0 / 3.0) * I1 - 3.0) + 0.5 * constants.kappa * (J - 1.0) ** 2


def neo_hookean_flux(grad_u, constants: ElasticConstants):
    """First Piola-Kirchhoff stress P = dW/dF at F = grad_u + I.

    P is produced by differentiating the energy, not by a hand-derived
    closed form.
    """
    F = grad_u + _EYE3
    J = det3(ad.value_of(F))
    if np.any(J <= 0.0):
        raise InvertedDeformationError(
            f"det(F) <= 0 (min {np.min(J):.3e}): element inverted beyond the "
            "neo-Hookean domain",
            bad_mask=J <= 0.0,
        )
    return grad_wrt_3x3(lambda Fd: neo_hookean_energy(Fd, constants), F)


def j2_return_map(grad_u_k, state: QuadPointState, constants: ElasticConstants):
    """Radially-returned stress for the perfect J2 model.

    Trial stress from the committed state plus the elastic increment;
    the deviator is scaled back onto the yield surface when the trial
    effective stress exceeds sigma_yield. At a vanishing deviator the
    return direction is taken as zero (the yield check cannot trigger
    there).
    """
    eps = sym3(grad_u_k)
    deps = eps - state.eps_prev
    dsig = constants.lam * trace3(deps)[..., None, None] * _EYE3 + (2.0 * constants.mu) * deps
    sig_trial = state.sig_prev + dsig
    s_dev = sig_trial - (trace3(sig_trial) / 3.0)[..., None, None] * _EYE3
    ssq = 1.5 * (s_dev * s_dev).sum((-1, -2))
    # Guard the sqrt at s = 0; the plastic branch is inactive there.
    s_eff = sqrt(where(ad.value_of(ssq) > 0.0, ssq, 1.0))
    overstress = ramp(s_eff - constants.sigma_yield)
    return sig_trial - s_dev * (overstress / s_eff)[..., None, None]


def commit_state(grad_u_k, state: QuadPointState, constants: ElasticConstants) -> QuadPointState:
    """State for the next load step, from the converged solution."""
    grad_u_k = ad.value_of(grad_u_k)
    return QuadPointState(
        eps_prev=np.asarray(sym3(grad_u_k)),
        sig_prev=np.asarray(j2_return_map(grad_u_k, state, constants)),
    )


class LinearElastic:
    """Small-strain isotropic elasticity."""

    vec = 3
    path_dependent = False
    linear = True

    def __init__(self, constants: ElasticConstants):
        self.constants = constants

    def flux(self, grad_u, state=None):
        return linear_elastic_flux(grad_u, self.constants)


class NeoHookean:
    """Nearly-incompressible neo-Hookean solid (total Lagrangian)."""

    vec = 3
    path_dependent = False
    linear = False

    def __init__(self, constants: ElasticConstants):
        self.constants = constants

    def flux(self, grad_u, state=None):
        return neo_hookean_flux(grad_u, self.constants)


class J2Plasticity:
    """Perfect J2 plasticity with committed per-step history."""

    vec = 3
    path_dependent = True
    linear = False

    def __init__(self, constants: ElasticConstants):
        if not np.isfinite(constants.sigma_yield):
            raise ValueError("J2 plasticity requires a finite sigma_yield")
        self.constants = constants

    def flux(self, grad_u, state: QuadPointState):
        return j2_return_map(grad_u, state, self.constants)

    def commit(self, grad_u, state: QuadPointState) -> QuadPointState:
        return commit_state(grad_u, state, self.constants)


class IsotropicDiffusion:
    """Scalar Poisson flux alpha * grad u."""

    vec = 1
    path_dependent = False
    linear = True

    def __init__(self, alpha: float = 1.0):
        if not alpha > 0:
            raise ValueError(f"diffusivity must be positive, got {alpha}")
        self.alpha = alpha

    def flux(self, grad_u, state=None):
        return self.alpha * grad_u

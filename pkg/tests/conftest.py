import numpy as np
import pytest

from gradfem.assembly import DirichletSpec
from gradfem.materials import ElasticConstants
from gradfem.mesh import BoundaryLocator


def onbox_locator(Lx, Ly, Lz, tol=1e-9):
    """All six faces of [0,Lx]x[0,Ly]x[0,Lz]."""
    def pred(p):
        p = np.asarray(p)
        return (
            (np.abs(p[..., 0]) < tol) | (np.abs(p[..., 0] - Lx) < tol)
            | (np.abs(p[..., 1]) < tol) | (np.abs(p[..., 1] - Ly) < tol)
            | (np.abs(p[..., 2]) < tol) | (np.abs(p[..., 2] - Lz) < tol)
        )
    return BoundaryLocator(pred)


def affine_dirichlet(A, locator):
    """Component-wise specs prescribing u = A x on located nodes."""
    A = np.asarray(A, dtype=np.float64)

    def value(c):
        return lambda p: (np.atleast_2d(p) @ A.T)[..., c]

    return [DirichletSpec(locator, c, value(c)) for c in range(3)]


def zero_dirichlet(locator, vec=3):
    return [DirichletSpec(locator, c, lambda p: 0.0) for c in range(vec)]


@pytest.fixture
def aluminum():
    return ElasticConstants(E=70e3, nu=0.3, sigma_yield=250.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)

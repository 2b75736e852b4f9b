import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradfem import autodiff as ad
from gradfem.autodiff import (
    Dual,
    KernelEvaluationError,
    absolute,
    det3,
    exp,
    grad_wrt_3x3,
    inv3,
    jacobian_forward,
    log,
    ramp,
    sqrt,
    stack3x3,
    trace3,
    vjp_params,
    where,
)


def central_fd(kernel, x, h=None):
    x = np.asarray(x, dtype=np.float64)
    if h is None:
        h = 1e-6 * (1.0 + np.abs(x))
    cols = []
    for j in range(x.size):
        e = np.zeros(x.size)
        e[j] = h[j] if np.ndim(h) else h
        cols.append((np.asarray(kernel(x + e)) - np.asarray(kernel(x - e))) / (2 * e[j]))
    return np.stack(cols, axis=-1).reshape(-1, x.size)


def test_identity_kernel():
    J = jacobian_forward(lambda x: x, np.array([1.0, 2.0, 3.0]))
    assert np.array_equal(J, np.eye(3))


def test_product_rule():
    J = jacobian_forward(lambda x: x[..., 0] * x[..., 1], np.array([3.0, 4.0]))
    assert np.allclose(J, [[4.0, 3.0]])


def composite_kernel(x):
    a = exp(x[..., 0] * 0.3) + log(x[..., 1] + 2.0)
    b = sqrt(x[..., 2] * x[..., 2] + 1.0)
    F = stack3x3(
        [
            [x[..., 0] + 3.0, x[..., 1] * 0.1, b * 0.0],
            [x[..., 2] * 0.2, x[..., 3] + 2.5, a * 0.05],
            [x[..., 4] * 0.1, b * 0.1, x[..., 0] * x[..., 4] + 4.0],
        ]
    )
    Minv = inv3(F)
    return stack_entries(trace3(Minv), det3(F), a * b)


def stack_entries(*vals):
    if any(isinstance(v, Dual) for v in vals):
        ref = next(v for v in vals if isinstance(v, Dual))
        vv = [v.val if isinstance(v, Dual) else v for v in vals]
        dd = [v.dot if isinstance(v, Dual) else np.zeros_like(ref.dot) for v in vals]
        return Dual(np.stack(vv, axis=-1), np.stack(dd, axis=-1))
    return np.stack(vals, axis=-1)


def test_composite_kernel_matches_fd(rng):
    x = rng.uniform(0.2, 1.5, 5)
    J = jacobian_forward(composite_kernel, x)
    J_fd = central_fd(composite_kernel, x)
    assert np.abs(J - J_fd).max() / np.abs(J_fd).max() < 1e-6


def test_linear_kernel_constant_jacobian(rng):
    M = rng.standard_normal((4, 6))

    def kern(x):
        # matrix-vector product written with the primitive set
        return (M * x[..., None, :]).sum(-1)

    Js = [jacobian_forward(kern, rng.standard_normal(6)) for _ in range(3)]
    assert np.allclose(Js[0], M)
    assert np.array_equal(Js[0], Js[1])
    assert np.array_equal(Js[1], Js[2])


def test_vjp_transpose_consistency(rng):
    def kern(t):
        return stack_entries((t * t).sum(-1), (t * 3.0 + 1.0)[..., 0], exp(t[..., 1] * 0.1))

    theta = rng.standard_normal(4)
    B = jacobian_forward(kern, theta)
    for _ in range(5):
        w = rng.standard_normal(3)
        v = rng.standard_normal(4)
        lhs = w @ (B @ v)
        rhs = vjp_params(kern, theta, w) @ v
        assert np.isclose(lhs, rhs, rtol=1e-12, atol=1e-14)


def test_vjp_zero_covector(rng):
    out = vjp_params(lambda t: t * t, rng.standard_normal(6), np.zeros(6))
    assert np.array_equal(out, np.zeros(6))


def test_vjp_linear_kernel_independent_of_base_point(rng):
    M = rng.standard_normal((5, 5))

    def kern(t):
        return (M * t[..., None, :]).sum(-1)

    w = rng.standard_normal(5)
    a = vjp_params(kern, rng.standard_normal(5), w)
    b = vjp_params(kern, rng.standard_normal(5), w)
    assert np.allclose(a, b, rtol=0, atol=1e-15)
    assert np.allclose(a, M.T @ w)


def test_ramp_subgradient_zero_at_kink():
    x = Dual(np.array([-1.0, 0.0, 2.0]), np.ones((1, 3)))
    r = ramp(x)
    assert np.array_equal(r.val, [0.0, 0.0, 2.0])
    assert np.array_equal(r.dot, [[0.0, 0.0, 1.0]])


def test_absolute_value_branching():
    x = Dual(np.array([-2.0, 0.0, 3.0]), np.ones((1, 3)))
    a = absolute(x)
    assert np.array_equal(a.val, [2.0, 0.0, 3.0])
    assert np.array_equal(a.dot, [[-1.0, 0.0, 1.0]])


def test_where_mixed_operands():
    x = Dual(np.array([1.0, -1.0]), np.full((1, 2), 2.0))
    w = where(x.val > 0, x, 0.0)
    assert np.array_equal(w.val, [1.0, 0.0])
    assert np.array_equal(w.dot, [[2.0, 0.0]])


@settings(max_examples=30, deadline=None)
@given(
    a=arrays(np.float64, (4,), elements=st.floats(-3, 3)),
    b=arrays(np.float64, (4,), elements=st.floats(0.5, 3)),
)
def test_dual_arithmetic_rules(a, b):
    da = Dual(a, np.broadcast_to(np.eye(4)[0], (1, 4)).copy())
    db = Dual(b, np.broadcast_to(np.eye(4)[1], (1, 4)).copy())
    prod = da * db
    assert np.allclose(prod.dot, a * db.dot + b * da.dot)
    quot = da / db
    assert np.allclose(quot.dot, (da.dot * b - a * db.dot) / b**2)
    s = da - 2.0 * db + 1.0
    assert np.allclose(s.dot, da.dot - 2.0 * db.dot)
    p = db**1.7
    assert np.allclose(p.dot, 1.7 * b**0.7 * db.dot)


def test_trace_det_inv_derivatives(rng):
    A = rng.standard_normal((3, 3)) + 3.0 * np.eye(3)

    def as_mat(x):
        return stack3x3([[x[..., 3 * i + j] for j in range(3)] for i in range(3)])

    J_det = jacobian_forward(lambda x: stack_entries(det3(as_mat(x))), A.ravel())
    # d det / dA = det(A) A^-T
    expect = np.linalg.det(A) * np.linalg.inv(A).T
    assert np.allclose(J_det.reshape(3, 3), expect, rtol=1e-12)

    J_inv = jacobian_forward(lambda x: inv3(as_mat(x)), A.ravel())
    J_fd = central_fd(lambda x: np.linalg.inv(x.reshape(3, 3)), A.ravel())
    assert np.abs(J_inv - J_fd).max() / np.abs(J_fd).max() < 1e-6


def test_grad_wrt_3x3_nests_for_second_derivatives(rng):
    # scalar w(F) = det(F); dw/dF = det(F) F^-T; second derivative
    # checked against finite differences of the first.
    F0 = np.eye(3) + 0.1 * rng.standard_normal((3, 3))
    seeds = np.eye(9).reshape(9, 3, 3)
    Fd = Dual(F0, seeds)
    G = grad_wrt_3x3(det3, Fd)
    assert np.allclose(G.val, np.linalg.det(F0) * np.linalg.inv(F0).T, rtol=1e-12)
    H = G.dot.reshape(9, 9).T
    h = 1e-6
    H_fd = np.zeros((9, 9))
    for k in range(9):
        d = h * seeds[k]
        gp = np.linalg.det(F0 + d) * np.linalg.inv(F0 + d).T
        gm = np.linalg.det(F0 - d) * np.linalg.inv(F0 - d).T
        H_fd[:, k] = ((gp - gm) / (2 * h)).ravel()
    assert np.abs(H - H_fd).max() / np.abs(H_fd).max() < 1e-6


def test_nonfinite_raises():
    with np.errstate(invalid="ignore"), pytest.raises(KernelEvaluationError):
        jacobian_forward(lambda x: log(x), np.array([-1.0, 1.0]))


def test_trailing_anchored_indexing_enforced():
    x = Dual(np.zeros((2, 3)), np.zeros((1, 2, 3)))
    with pytest.raises(IndexError):
        x[0]

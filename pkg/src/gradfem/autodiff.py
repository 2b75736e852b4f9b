"""Element-local forward-mode automatic differentiation.

`Dual` carries a value together with its directional derivatives and
propagates them through a fixed primitive set: arithmetic, powers,
exp/log/sqrt, 3x3 trace/determinant/inverse, and value-branching
(`where`, `ramp`, `absolute`). Seeding a batch of directions gives
exact element Jacobians from the residual kernel alone, with no
hand-derived tangent tensors.

Layout conventions the kernels must follow:

* the seed axis, when present, is the LEADING axis of ``dot``; value
  axes broadcast against it from the right,
* structural ops (indexing, axis insertion, reductions) are anchored
  at the trailing axes: ``x[..., i, j]``, ``x.sum(axis=-1)``,
* duals may nest (val/dot may themselves be Dual) for second
  derivatives such as a stress defined as an energy gradient; a kernel
  must never mix duals from different seeding levels in one operation.

Branching primitives pick a side by comparing values only; the ramp
function <x>_+ uses derivative 0 at x = 0 (the closed elastic branch).
"""

import numpy as np


class KernelEvaluationError(RuntimeError):
    """Non-finite intermediate produced by a kernel evaluation."""

    def __init__(self, message, bad_mask=None):
        super().__init__(message)
        self.bad_mask = bad_mask


class Dual:
    """Value plus directional derivatives (forward mode)."""

    __slots__ = ("val", "dot")
    # Make numpy defer binary ops to this class.
    __array_ufunc__ = None

    def __init__(self, val, dot):
        self.val = val
        self.dot = dot

    @property
    def shape(self):
        return np.shape(self.val)

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.dot + other.dot)
        return Dual(self.val + other, self.dot)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.dot)

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.dot - other.dot)
        return Dual(self.val - other, self.dot)

    def __rsub__(self, other):
        return Dual(other - self.val, -self.dot)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val, self.val * other.dot + self.dot * other.val)
        return Dual(self.val * other, self.dot * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            return Dual(self.val * inv, (self.dot - self.val * inv * other.dot) * inv)
        return Dual(self.val / other, self.dot / other)

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        v = other * inv
        return Dual(v, -v * inv * self.dot)

    def __pow__(self, p):
        if isinstance(p, Dual):
            raise TypeError("dual-valued exponents are not supported")
        return Dual(self.val**p, (p * self.val ** (p - 1)) * self.dot)

    # -- value-only comparisons ---------------------------------------
    def __lt__(self, other):
        return self.val < _value_of(other)

    def __le__(self, other):
        return self.val <= _value_of(other)

    def __gt__(self, other):
        return self.val > _value_of(other)

    def __ge__(self, other):
        return self.val >= _value_of(other)

    # -- trailing-anchored structure ops ------------------------------
    def __getitem__(self, key):
        if key is Ellipsis:
            return Dual(self.val[key], self.dot[key])
        if not isinstance(key, tuple) or key[0] is not Ellipsis:
            raise IndexError("Dual indexing must be trailing-anchored: x[..., i, j]")
        return Dual(self.val[key], self.dot[key])

    def sum(self, axis):
        if isinstance(axis, int):
            axis = (axis,)
        if any(a >= 0 for a in axis):
            raise ValueError("Dual.sum requires negative (trailing) axes")
        return Dual(_sum(self.val, axis), _sum(self.dot, axis))

    def swap_last_axes(self):
        return Dual(np.swapaxes(self.val, -1, -2), np.swapaxes(self.dot, -1, -2))

    def __repr__(self):
        return f"Dual(val={self.val!r}, dot={self.dot!r})"


def _sum(x, axis):
    return x.sum(axis) if isinstance(x, Dual) else np.sum(x, axis=axis)


def _value_of(x):
    return x.val if isinstance(x, Dual) else x


def value_of(x):
    """Strip all derivative information, returning the plain value."""
    while isinstance(x, Dual):
        x = x.val
    return x


# -- primitive functions (dispatch on Dual vs array) -------------------


def exp(x):
    if isinstance(x, Dual):
        v = exp(x.val)
        return Dual(v, v * x.dot)
    return np.exp(x)


def log(x):
    if isinstance(x, Dual):
        return Dual(log(x.val), x.dot / x.val)
    return np.log(x)


def sqrt(x):
    if isinstance(x, Dual):
        v = sqrt(x.val)
        return Dual(v, x.dot / (2.0 * v))
    return np.sqrt(x)


def where(cond, a, b):
    """Select by a plain boolean condition; propagates through duals."""
    if isinstance(a, Dual) or isinstance(b, Dual):
        ref = a if isinstance(a, Dual) else b
        av = a.val if isinstance(a, Dual) else a
        bv = b.val if isinstance(b, Dual) else b
        ad = a.dot if isinstance(a, Dual) else 0.0 * ref.dot
        bd = b.dot if isinstance(b, Dual) else 0.0 * ref.dot
        return Dual(where(cond, av, bv), where(cond, ad, bd))
    return np.where(cond, a, b)


def ramp(x):
    """<x>_+ = max(x, 0) with derivative 0 at x = 0."""
    if isinstance(x, Dual):
        return where(value_of(x) > 0.0, x, 0.0 * x)
    return np.maximum(x, 0.0)


def absolute(x):
    """|x| with derivative 0 at x = 0 (value branching)."""
    if isinstance(x, Dual):
        return where(value_of(x) < 0.0, -x, ramp(x))
    return np.abs(x)


def sym3(A):
    """Symmetric part of (..., 3, 3) tensors."""
    if isinstance(A, Dual):
        return (A + A.swap_last_axes()) * 0.5
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def trace3(A):
    return A[..., 0, 0] + A[..., 1, 1] + A[..., 2, 2]


def det3(A):
    a, b, c = A[..., 0, 0], A[..., 0, 1], A[..., 0, 2]
    d, e, f = A[..., 1, 0], A[..., 1, 1], A[..., 1, 2]
    g, h, i = A[..., 2, 0], A[..., 2, 1], A[..., 2, 2]
    return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)


def stack3x3(rows):
    """Assemble a (..., 3, 3) tensor from 9 scalar entries [[..],[..],[..]]."""
    flat = [entry for row in rows for entry in row]
    if any(isinstance(e, Dual) for e in flat):
        vals = [[(e.val if isinstance(e, Dual) else e) for e in row] for row in rows]
        dots = [[(e.dot if isinstance(e, Dual) else 0.0) for e in row] for row in rows]
        return Dual(stack3x3(vals), stack3x3(dots))
    target = np.broadcast(*[np.asarray(e) for e in flat])
    arrs = [np.broadcast_to(np.asarray(e, dtype=np.float64), target.shape) for e in flat]
    return np.stack(arrs, axis=-1).reshape(target.shape + (3, 3))


def inv3(A):
    """Inverse of (..., 3, 3) built from cofactors (AD-transparent)."""
    a, b, c = A[..., 0, 0], A[..., 0, 1], A[..., 0, 2]
    d, e, f = A[..., 1, 0], A[..., 1, 1], A[..., 1, 2]
    g, h, i = A[..., 2, 0], A[..., 2, 1], A[..., 2, 2]
    det = det3(A)
    return stack3x3(
        [
            [(e * i - f * h) / det, (c * h - b * i) / det, (b * f - c * e) / det],
            [(f * g - d * i) / det, (a * i - c * g) / det, (c * d - a * f) / det],
            [(d * h - e * g) / det, (b * g - a * h) / det, (a * e - b * d) / det],
        ]
    )


def einsum_linear(subscripts, x, *arrays):
    """np.einsum through a (possibly dual) first operand.

    The contraction is linear in ``x``, so the derivative rule is the
    same einsum applied to the seed block, with the seed axis carried
    through as a leading batch axis.
    """
    if isinstance(x, Dual):
        ins, out = subscripts.split("->")
        first, _, rest = ins.partition(",")
        sub_dot = "s" + first + ("," + rest if rest else "") + "->s" + out
        dot = np.asarray(x.dot)
        dot = np.broadcast_to(dot, dot.shape[:1] + np.shape(x.val))
        return Dual(
            np.einsum(subscripts, x.val, *arrays),
            np.einsum(sub_dot, dot, *arrays),
        )
    return np.einsum(subscripts, x, *arrays)


# -- seeding and Jacobians ---------------------------------------------


def seed_identity(x):
    """Dual for a flat vector x (D,) with unit seeds per entry."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a flat vector, got shape {x.shape}")
    return Dual(x, np.eye(x.shape[0]))


def jacobian_forward(kernel, x):
    """Exact Jacobian (R, D) of kernel: R^D -> R^R at x, one batched pass."""
    x = np.asarray(x, dtype=np.float64)
    out = kernel(seed_identity(x))
    if not isinstance(out, Dual):  # kernel ignored its input entirely
        return np.zeros((np.size(out), x.shape[0]))
    dot = np.broadcast_to(np.asarray(out.dot), (x.shape[0],) + np.shape(out.val))
    J = dot.reshape(x.shape[0], -1).T.copy()
    if not np.all(np.isfinite(J)) or not np.all(np.isfinite(out.val)):
        raise KernelEvaluationError("non-finite value in forward-mode Jacobian")
    return J


def vjp_params(kernel, theta, w):
    """w^T (d kernel / d theta) for kernel: R^M -> R^N, returned as (M,)."""
    theta = np.asarray(theta, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    out = kernel(seed_identity(theta))
    if not isinstance(out, Dual):
        return np.zeros(theta.shape[0])
    dot = np.broadcast_to(np.asarray(out.dot), (theta.shape[0],) + np.shape(out.val))
    res = dot.reshape(theta.shape[0], -1) @ w.ravel()
    if not np.all(np.isfinite(res)):
        raise KernelEvaluationError("non-finite value in parameter vjp")
    return res


def grad_wrt_3x3(scalar_fn, F):
    """Gradient dW/dF of a scalar kernel W(F) for F of shape (..., 3, 3).

    Seeds the 9 tensor slots one at a time, so it nests: when F is
    itself a Dual the result carries the outer derivatives of the
    gradient (forward-over-forward).
    """
    rows = []
    for i in range(3):
        row = []
        for j in range(3):
            seed = np.zeros((3, 3))
            seed[i, j] = 1.0
            w = scalar_fn(Dual(F, seed))
            row.append(w.dot)
        rows.append(row)
    return stack3x3(rows)

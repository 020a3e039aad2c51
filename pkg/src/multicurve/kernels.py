"""Separable matrix-valued kernels for joint discount-curve estimation.

The maturity dimension is handled by a weighted-Sobolev scalar kernel

    k(x, y) = -(m/a^2) e^{-a m} + (2/a^3)(1 - e^{-a m}) - (m/a^2) e^{-a M},
    m = min(x, y),  M = max(x, y),

whose RKHS consists of twice weakly differentiable functions h with h(0) = 0,
vanishing slope at infinity and finite curvature norm int h''(x)^2 e^{a x} dx.
The cross-class dimension is handled by a task covariance B = Q^{-1}, where Q
is the sum of a diagonal per-class smoothness matrix and the Laplacian of the
spread-penalty graph.  The joint kernel is K(x, y) = B k(x, y).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

__all__ = [
    "ScalarKernelParams",
    "GraphRegularization",
    "TaskMatrices",
    "SeparableKernel",
    "scalar_kernel_eval",
    "scalar_kernel_dx",
    "build_task_matrices",
    "make_kernel",
    "kernel_gram",
    "rkhs_norm_of_span",
    "rkhs_norm_forms",
    "normalize_kernel",
]

# exp(-t) is flushed to exactly 0 beyond this point; just inside the
# double-precision range, so no spurious underflow warnings either.
_EXP_FLUSH = 700.0


def _exp_neg(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return np.where(t > _EXP_FLUSH, 0.0, np.exp(-np.minimum(t, _EXP_FLUSH)))


def _check_maturities(*arrays) -> None:
    for arr in arrays:
        a = np.asarray(arr, dtype=float)
        if not np.all(np.isfinite(a)):
            raise ValueError("maturities must be finite")
        if np.any(a < 0.0):
            raise ValueError("maturities must be nonnegative")


@dataclass(frozen=True)
class ScalarKernelParams:
    """Maturity-weight hyperparameter of the scalar curvature kernel."""

    alpha: float

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0.0):
            raise ValueError(f"alpha must be a positive real, got {self.alpha}")


def scalar_kernel_eval(params: ScalarKernelParams, x, y):
    """Evaluate the scalar kernel k(x, y); broadcasts over array inputs.

    Symmetric in its arguments, and k(0, y) = 0 for every y, which pins the
    hypothesis functions to zero at maturity zero.
    """
    _check_maturities(x, y)
    a = params.alpha
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    mn = np.minimum(x, y)
    mx = np.maximum(x, y)
    e_mn = _exp_neg(a * mn)
    e_mx = _exp_neg(a * mx)
    out = -(mn / a**2) * e_mn + (2.0 / a**3) * (1.0 - e_mn) - (mn / a**2) * e_mx
    if out.ndim == 0:
        return float(out)
    return out


def scalar_kernel_dx(params: ScalarKernelParams, x, y):
    """Derivative of k in its first argument, piecewise in x vs. y.

    For x < y:  e^{-a x} (1/a^2 + x/a) - (1/a^2) e^{-a y}.
    For x > y:  (y/a) e^{-a x}.
    The two branches coincide at x = y (the kernel is C^1 across the
    diagonal; only the second derivative kinks there).
    """
    _check_maturities(x, y)
    a = params.alpha
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    below = _exp_neg(a * x) * (1.0 / a**2 + x / a) - (1.0 / a**2) * _exp_neg(a * y)
    above = (y / a) * _exp_neg(a * x)
    out = np.where(x < y, below, above)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class GraphRegularization:
    """Per-class smoothness weights and pairwise spread-penalty weights.

    ``gammas[a]`` penalizes the curvature norm of class a's own curve;
    ``thetas[a, b]`` penalizes the curvature norm of the spread between
    classes a and b.  ``thetas`` must be symmetric, nonnegative, and zero on
    the diagonal.
    """

    gammas: np.ndarray
    thetas: np.ndarray

    def __post_init__(self):
        gammas = np.atleast_1d(np.asarray(self.gammas, dtype=float))
        thetas = np.asarray(self.thetas, dtype=float)
        if gammas.ndim != 1 or gammas.size < 1:
            raise ValueError("gammas must be a nonempty vector")
        if not np.all(np.isfinite(gammas)) or np.any(gammas <= 0.0):
            raise ValueError("every gamma must be a positive real")
        n = gammas.size
        if thetas.shape != (n, n):
            raise ValueError(f"thetas must be {n}x{n}, got {thetas.shape}")
        if not np.all(np.isfinite(thetas)) or np.any(thetas < 0.0):
            raise ValueError("spread weights must be finite and nonnegative")
        if not np.array_equal(thetas, thetas.T):
            raise ValueError("spread weights must be symmetric")
        if np.any(np.diag(thetas) != 0.0):
            raise ValueError("spread weights must have zero diagonal")
        gammas.setflags(write=False)
        thetas.setflags(write=False)
        object.__setattr__(self, "gammas", gammas)
        object.__setattr__(self, "thetas", thetas)

    @property
    def n_classes(self) -> int:
        return self.gammas.size


@dataclass(frozen=True)
class TaskMatrices:
    """Graph-regularization matrix Q and its inverse, the task covariance B."""

    Q: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        for name in ("Q", "B"):
            m = np.asarray(getattr(self, name), dtype=float)
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @property
    def n_classes(self) -> int:
        return self.Q.shape[0]


def build_task_matrices(reg: GraphRegularization) -> TaskMatrices:
    """Assemble Q = diag(gamma) + graph Laplacian of theta, and B = Q^{-1}.

    Q is strictly diagonally dominant by construction, hence symmetric
    positive definite, so the inverse is computed via a Cholesky solve.
    """
    thetas = reg.thetas
    q = np.diag(reg.gammas + thetas.sum(axis=1)) - thetas
    try:
        cho = scipy.linalg.cho_factor(q, lower=True)
        b = scipy.linalg.cho_solve(cho, np.eye(reg.n_classes))
    except scipy.linalg.LinAlgError as exc:  # unreachable for valid inputs
        raise ValueError(f"graph-regularization matrix is not SPD: {exc}") from exc
    b = 0.5 * (b + b.T)
    return TaskMatrices(Q=q, B=b)


@dataclass(frozen=True)
class SeparableKernel:
    """Matrix-valued kernel K(x, y) = B k(x, y)."""

    params: ScalarKernelParams
    tasks: TaskMatrices

    @property
    def n_classes(self) -> int:
        return self.tasks.n_classes

    @property
    def B(self) -> np.ndarray:
        return self.tasks.B

    def k(self, x, y):
        return scalar_kernel_eval(self.params, x, y)

    def k_dx(self, x, y):
        return scalar_kernel_dx(self.params, x, y)

    def matrix(self, x: float, y: float) -> np.ndarray:
        """Full A x A kernel block at a single pair of maturities."""
        return self.tasks.B * scalar_kernel_eval(self.params, x, y)


def make_kernel(alpha: float, gammas, thetas=None) -> SeparableKernel:
    """Convenience constructor from raw hyperparameters.

    ``thetas`` may be a full symmetric matrix, a single scalar (applied to
    every class pair), or None (no coupling).
    """
    gammas = np.atleast_1d(np.asarray(gammas, dtype=float))
    n = gammas.size
    if thetas is None:
        theta_mat = np.zeros((n, n))
    elif np.isscalar(thetas):
        theta_mat = float(thetas) * (np.ones((n, n)) - np.eye(n))
    else:
        theta_mat = np.asarray(thetas, dtype=float)
    reg = GraphRegularization(gammas=gammas, thetas=theta_mat)
    return SeparableKernel(params=ScalarKernelParams(alpha=float(alpha)),
                           tasks=build_task_matrices(reg))


def scalar_gram(params: ScalarKernelParams, xs, ys=None) -> np.ndarray:
    """Scalar kernel cross-Gram matrix k(xs_i, ys_j)."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = xs if ys is None else np.atleast_1d(np.asarray(ys, dtype=float))
    return scalar_kernel_eval(params, xs[:, None], ys[None, :])


def kernel_gram(kernel: SeparableKernel, xs) -> np.ndarray:
    """AN x AN joint Gram matrix, class-major blocks B[a, b] * k(xs, xs).

    Row/column ordering matches the vectorization convention used by the
    estimator: all maturities of class 1, then class 2, and so on.  Repeated
    maturities are allowed (the matrix stays positive semi-definite).
    """
    kmat = scalar_gram(kernel.params, xs)
    return np.kron(kernel.tasks.B, kmat)


def rkhs_norm_of_span(kernel: SeparableKernel, anchors, coefs) -> float:
    """Squared RKHS norm of h = sum_j K(., y_j) v_j.

    Computed directly from the reproducing property as
    sum_{i,j} v_i^T B v_j k(y_i, y_j).  Use :func:`rkhs_norm_forms` for the
    equivalent component-wise decompositions.
    """
    anchors = np.atleast_1d(np.asarray(anchors, dtype=float))
    coefs = np.atleast_2d(np.asarray(coefs, dtype=float))
    if coefs.shape != (anchors.size, kernel.n_classes):
        raise ValueError("coefs must have one length-A vector per anchor")
    kmat = scalar_gram(kernel.params, anchors)
    quad = coefs @ kernel.tasks.B @ coefs.T
    return float(np.sum(quad * kmat))


@dataclass(frozen=True)
class NormForms:
    """The three equivalent expressions of a span function's squared norm."""

    gram: float
    q_form: float
    spread_form: float
    row_sum_gammas: np.ndarray  # gamma weights used by the spread form


def rkhs_norm_forms(kernel: SeparableKernel, anchors, coefs) -> NormForms:
    """Evaluate the Gram, Q-weighted, and spread decompositions of the norm.

    All three are mathematically identical for h = sum_j K(., y_j) v_j:
    the Gram form pairs coefficients through B, the Q form pairs the scalar
    components h_a through Q, and the spread form rewrites the Q form as
    per-class curvature penalties (with gamma_a equal to the row sums of Q)
    plus pairwise spread penalties.
    """
    anchors = np.atleast_1d(np.asarray(anchors, dtype=float))
    coefs = np.atleast_2d(np.asarray(coefs, dtype=float))
    b = kernel.tasks.B
    q = kernel.tasks.Q
    kmat = scalar_gram(kernel.params, anchors)

    gram = float(np.sum((coefs @ b @ coefs.T) * kmat))

    # h_a = sum_j (B v_j)_a k(., y_j); pairwise scalar-RKHS inner products
    w = coefs @ b  # row j holds B v_j
    inner = w.T @ kmat @ w  # inner[a, b] = <h_a, h_b>
    q_form = float(np.sum(q * inner))

    row_gammas = q.sum(axis=1)
    diag = np.diag(inner)
    spread = float(np.dot(row_gammas, diag))
    n = kernel.n_classes
    for a in range(n):
        for bb in range(a + 1, n):
            spread -= q[a, bb] * (diag[a] - 2.0 * inner[a, bb] + diag[bb])
    return NormForms(gram=gram, q_form=q_form, spread_form=spread,
                     row_sum_gammas=row_gammas)


def normalize_kernel(kernel: SeparableKernel) -> tuple[np.ndarray, Callable]:
    """Split K = B k into a task correlation matrix and a normalized kernel.

    Returns ``(C, rho)`` with C[a, b] = B_aa^{-1/2} B_ab B_bb^{-1/2} (ones on
    the diagonal, zeros wherever a variance vanishes) and rho an evaluable
    scalar kernel with rho(x, x) = 1 and the same zero-variance convention.
    Under the Gaussian-process prior, C[a, b] is the correlation between the
    class-a and class-b curves at any common maturity with k(x, x) > 0.
    """
    b = kernel.tasks.B
    diag = np.diag(b).copy()
    pos = diag > 0.0
    scale = np.zeros_like(diag)
    scale[pos] = 1.0 / np.sqrt(diag[pos])
    c = np.outer(scale, scale) * b
    c[~pos, :] = 0.0
    c[:, ~pos] = 0.0
    np.fill_diagonal(c, 1.0)

    params = kernel.params

    def rho(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        kxx = np.asarray(scalar_kernel_eval(params, x, x), dtype=float)
        kyy = np.asarray(scalar_kernel_eval(params, y, y), dtype=float)
        kxy = np.asarray(scalar_kernel_eval(params, x, y), dtype=float)
        xb, yb = np.broadcast_arrays(x, y)
        kxx, kyy, kxy = np.broadcast_arrays(kxx, kyy, kxy)
        ok = (kxx > 0.0) & (kyy > 0.0)
        val = np.where(ok, kxy / np.sqrt(np.where(ok, kxx * kyy, 1.0)), 0.0)
        out = np.where(xb == yb, 1.0, val)
        if out.ndim == 0:
            return float(out)
        return out

    return c, rho

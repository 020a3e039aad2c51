"""Closed-form vector-valued kernel ridge regression for discount curves.

The fitted curves are g_a(z) = p_a(z) + sum_j [K(z, x_j) beta_j]_a with the
coefficient matrix obtained from the dual M x M system

    vec(beta^T) = C^T (C K C^T + Lambda)^{-1} (P - C vec(p^T(x))),

where Lambda carries the per-instrument ridge terms lambda / omega.  Only the
M x M system is ever factorized; the AN x AN kernel matrix appears explicitly
only in the brute-force reference solver used for testing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import IllConditioned, NonPositiveDiscount
from .instruments import CashFlowMatrix
from .kernels import SeparableKernel, kernel_gram, scalar_gram, scalar_kernel_dx

__all__ = [
    "FlatRatePrior",
    "EstimatorConfig",
    "Diagnostics",
    "CurveSolution",
    "solve",
    "oracle_solve",
    "objective_value",
    "evaluate_curve",
    "curve_derivative",
    "yield_and_forward",
]


@dataclass(frozen=True)
class FlatRatePrior:
    """Exogenous prior curves p_a(z) = exp(-r_a z).

    A scalar rate applies to every class; rate 0 gives the constant-one
    prior.  p_a(0) = 1 always, as the estimator requires.
    """

    rates: float | np.ndarray = 0.0

    def rate(self, class_id: int) -> float:
        if np.isscalar(self.rates):
            return float(self.rates)
        return float(np.asarray(self.rates, dtype=float)[class_id])

    def value(self, class_id: int, zs) -> np.ndarray:
        zs = np.asarray(zs, dtype=float)
        return np.exp(-self.rate(class_id) * zs)

    def deriv(self, class_id: int, zs) -> np.ndarray:
        zs = np.asarray(zs, dtype=float)
        r = self.rate(class_id)
        return -r * np.exp(-r * zs)


@dataclass(frozen=True)
class EstimatorConfig:
    """Kernel, prior, and ridge settings of one estimation run.

    ``lam`` defaults to 1: with graph regularization the per-class and spread
    penalties already carry their own weights, so the overall multiplier is
    left neutral.  ``jitter`` is an optional diagonal boost for near-singular
    real-data systems (order 1e-8 * trace/M at most); default 0.
    """

    kernel: SeparableKernel
    prior: FlatRatePrior = FlatRatePrior()
    lam: float = 1.0
    jitter: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0.0):
            raise ValueError("lam must be a positive real")
        if not (np.isfinite(self.jitter) and self.jitter >= 0.0):
            raise ValueError("jitter must be nonnegative")


@dataclass(frozen=True)
class Diagnostics:
    """Fit quality of one solve: per-instrument residuals in stacked row
    order, the achieved objective, and its ridge component."""

    residuals: np.ndarray
    objective: float
    rkhs_norm_sq: float


@dataclass(frozen=True)
class CurveSolution:
    """Coefficients and context needed to evaluate the fitted curves."""

    beta: np.ndarray  # A x N, rows indexed by class
    grid: np.ndarray
    kernel: SeparableKernel
    prior: FlatRatePrior
    diagnostics: Diagnostics


def _prior_grid_values(cfm: CashFlowMatrix, prior: FlatRatePrior) -> np.ndarray:
    """Class-major stacked prior values vec(p^T(x))."""
    if cfm.n_grid == 0:
        return np.zeros(0)
    return np.concatenate([prior.value(a, cfm.grid) for a in range(cfm.n_classes)])


def _dual_pieces(cfm: CashFlowMatrix, kernel: SeparableKernel,
                 prior: FlatRatePrior):
    """Scalar Gram on the grid, the M x M matrix C K C^T, and residual target r."""
    if kernel.n_classes != cfm.n_classes:
        raise ValueError("kernel and cash-flow matrix disagree on class count")
    kmat = scalar_gram(kernel.params, cfm.grid) if cfm.n_grid else np.zeros((0, 0))
    b = kernel.tasks.B
    m_total = cfm.total_count
    slices = cfm.row_slices()
    wk = [cfm.blocks[a] @ kmat for a in range(cfm.n_classes)]  # C_a k, dense
    ckct = np.zeros((m_total, m_total))
    for a in range(cfm.n_classes):
        for c in range(cfm.n_classes):
            if cfm.counts[a] == 0 or cfm.counts[c] == 0:
                continue
            cross = (cfm.blocks[c] @ wk[a].T).T  # C_a k C_c^T
            ckct[slices[a], slices[c]] = b[a, c] * cross
    r = np.zeros(m_total)
    for a in range(cfm.n_classes):
        if cfm.counts[a]:
            r[slices[a]] = cfm.prices[a] - cfm.blocks[a] @ prior.value(a, cfm.grid)
    return kmat, ckct, r


def _ridge_diagonal(cfm: CashFlowMatrix, lam: float) -> np.ndarray:
    """Diagonal of Lambda: lambda/omega per row, zero for exact-fit rows."""
    diag = lam / cfm.flat_weights if cfm.total_count else np.zeros(0)
    diag[cfm.flat_exact] = 0.0
    return diag


def _factor_spd(mat: np.ndarray, context: str):
    try:
        return scipy.linalg.cho_factor(mat, lower=True)
    except scipy.linalg.LinAlgError:
        pivot = float(np.linalg.eigvalsh(mat).min()) if mat.size else 0.0
        raise IllConditioned(context, smallest_pivot=pivot) from None


def _beta_from_dual(cfm: CashFlowMatrix, y: np.ndarray) -> np.ndarray:
    beta = np.zeros((cfm.n_classes, cfm.n_grid))
    for a, sl in enumerate(cfm.row_slices()):
        if cfm.counts[a]:
            beta[a] = cfm.blocks[a].T @ y[sl]
    return beta


def objective_value(cfm: CashFlowMatrix, cfg: EstimatorConfig,
                    beta: np.ndarray) -> float:
    """Weighted squared pricing error plus lambda times the RKHS norm, for an
    arbitrary coefficient matrix (exact-fit rows are excluded from the error
    sum, mirroring their constraint role)."""
    kmat = scalar_gram(cfg.kernel.params, cfm.grid) if cfm.n_grid else np.zeros((0, 0))
    b = cfg.kernel.tasks.B
    hgrid = b @ beta @ kmat if cfm.n_grid else np.zeros((cfm.n_classes, 0))
    err = 0.0
    for a in range(cfm.n_classes):
        if cfm.counts[a] == 0:
            continue
        fitted = cfm.blocks[a] @ (cfg.prior.value(a, cfm.grid) + hgrid[a])
        res = cfm.prices[a] - fitted
        live = ~cfm.exact[a]
        err += float(np.sum(cfm.weights[a][live] * res[live] ** 2))
    norm_sq = float(np.sum(b * (beta @ kmat @ beta.T))) if cfm.n_grid else 0.0
    return err + cfg.lam * norm_sq


def _diagnostics(cfm: CashFlowMatrix, cfg: EstimatorConfig, beta: np.ndarray,
                 kmat: np.ndarray) -> Diagnostics:
    b = cfg.kernel.tasks.B
    hgrid = b @ beta @ kmat if cfm.n_grid else np.zeros((cfm.n_classes, 0))
    residuals = np.zeros(cfm.total_count)
    err = 0.0
    for a, sl in enumerate(cfm.row_slices()):
        if cfm.counts[a] == 0:
            continue
        fitted = cfm.blocks[a] @ (cfg.prior.value(a, cfm.grid) + hgrid[a])
        res = cfm.prices[a] - fitted
        residuals[sl] = res
        live = ~cfm.exact[a]
        err += float(np.sum(cfm.weights[a][live] * res[live] ** 2))
    norm_sq = float(np.sum(b * (beta @ kmat @ beta.T))) if cfm.n_grid else 0.0
    residuals.setflags(write=False)
    return Diagnostics(residuals=residuals, objective=err + cfg.lam * norm_sq,
                       rkhs_norm_sq=norm_sq)


def solve(cfm: CashFlowMatrix, cfg: EstimatorConfig) -> CurveSolution:
    """Fit the joint curves by the dual closed form.

    With no instruments at all the coefficients are zero and the curves
    reduce to the priors.  Exact-fit rows get a zero ridge entry; their block
    of C K C^T must be invertible, which is checked before the full solve.
    """
    if cfm.total_count == 0:
        kmat = scalar_gram(cfg.kernel.params, cfm.grid) if cfm.n_grid else np.zeros((0, 0))
        beta = np.zeros((cfm.n_classes, cfm.n_grid))
        return CurveSolution(beta=beta, grid=cfm.grid, kernel=cfg.kernel,
                             prior=cfg.prior,
                             diagnostics=_diagnostics(cfm, cfg, beta, kmat))

    kmat, ckct, r = _dual_pieces(cfm, cfg.kernel, cfg.prior)
    ridge = _ridge_diagonal(cfm, cfg.lam)
    exact_rows = np.flatnonzero(cfm.flat_exact)
    if exact_rows.size:
        sub = ckct[np.ix_(exact_rows, exact_rows)]
        _factor_spd(sub, "exact-fit block of C K C^T is not invertible")
    g = ckct + np.diag(ridge + cfg.jitter)
    cho = _factor_spd(g, "pricing system C K C^T + Lambda failed to factor")
    y = scipy.linalg.cho_solve(cho, r)
    beta = _beta_from_dual(cfm, y)
    return CurveSolution(beta=beta, grid=cfm.grid, kernel=cfg.kernel,
                         prior=cfg.prior,
                         diagnostics=_diagnostics(cfm, cfg, beta, kmat))


def oracle_solve(cfm: CashFlowMatrix, cfg: EstimatorConfig) -> CurveSolution:
    """Reference solver: minimize the finite-dimensional objective over
    vec(beta^T) directly.

    Writing the joint Gram as K = L L^T (eigendecomposition), the objective
    sum omega (P - C p - C K u)^2 + lambda u^T K u becomes an ordinary ridge
    problem in v = L^T u, solved as an augmented least-squares system.  Small
    instances only; used to cross-check :func:`solve` in tests.
    """
    a_classes, n = cfm.n_classes, cfm.n_grid
    if a_classes * n > 200:
        raise ValueError("oracle solver is restricted to A*N <= 200")
    if np.any(cfm.flat_exact):
        raise ValueError("oracle solver does not support exact-fit rows")
    kmat = scalar_gram(cfg.kernel.params, cfm.grid) if n else np.zeros((0, 0))
    if cfm.total_count == 0 or n == 0:
        beta = np.zeros((a_classes, n))
        return CurveSolution(beta=beta, grid=cfm.grid, kernel=cfg.kernel,
                             prior=cfg.prior,
                             diagnostics=_diagnostics(cfm, cfg, beta, kmat))

    kbig = kernel_gram(cfg.kernel, cfm.grid)
    c = cfm.stacked().toarray()
    w_half = np.sqrt(cfm.flat_weights)
    r = cfm.flat_prices - c @ _prior_grid_values(cfm, cfg.prior)

    eigvals, eigvecs = np.linalg.eigh(kbig)
    keep = eigvals > max(eigvals.max(), 0.0) * 1e-14
    root = np.sqrt(eigvals[keep])
    factor = eigvecs[:, keep] * root  # K = factor @ factor.T
    design = w_half[:, None] * (c @ factor)
    n_cols = design.shape[1]
    augmented = np.vstack([design, np.sqrt(cfg.lam) * np.eye(n_cols)])
    target = np.concatenate([w_half * r, np.zeros(n_cols)])
    v, *_ = np.linalg.lstsq(augmented, target, rcond=None)
    u = eigvecs[:, keep] @ (v / root)
    beta = u.reshape(a_classes, n)
    return CurveSolution(beta=beta, grid=cfm.grid, kernel=cfg.kernel,
                         prior=cfg.prior,
                         diagnostics=_diagnostics(cfm, cfg, beta, kmat))


def _contract(sol: CurveSolution, scalar_block: np.ndarray,
              class_id: int) -> np.ndarray:
    """Sum_b B_ab sum_j scalar_block[z, j] * beta[b, j]."""
    if sol.grid.size == 0:
        return np.zeros(scalar_block.shape[0])
    return (scalar_block @ sol.beta.T) @ sol.kernel.tasks.B[:, class_id]


def evaluate_curve(sol: CurveSolution, class_id: int, zs) -> np.ndarray | float:
    """Discount factors g_a(z) = p_a(z) + sum_j [K(z, x_j) beta_j]_a.

    Exact 1 at z = 0, since the scalar kernel vanishes there and priors are
    pinned to one.
    """
    scalar = np.isscalar(zs)
    zs_arr = np.atleast_1d(np.asarray(zs, dtype=float))
    if np.any(zs_arr < 0.0):
        raise ValueError("maturities must be nonnegative")
    kz = (scalar_gram(sol.kernel.params, zs_arr, sol.grid)
          if sol.grid.size else np.zeros((zs_arr.size, 0)))
    out = sol.prior.value(class_id, zs_arr) + _contract(sol, kz, class_id)
    return float(out[0]) if scalar else out


def curve_derivative(sol: CurveSolution, class_id: int, zs) -> np.ndarray | float:
    """Analytic derivative g_a'(z), using the closed-form kernel derivative."""
    scalar = np.isscalar(zs)
    zs_arr = np.atleast_1d(np.asarray(zs, dtype=float))
    if sol.grid.size:
        dkz = scalar_kernel_dx(sol.kernel.params, zs_arr[:, None],
                               sol.grid[None, :])
    else:
        dkz = np.zeros((zs_arr.size, 0))
    out = sol.prior.deriv(class_id, zs_arr) + _contract(sol, dkz, class_id)
    return float(out[0]) if scalar else out


def yield_and_forward(sol: CurveSolution, class_id: int, zs):
    """Continuously compounded yields and instantaneous forwards.

    y(z) = -ln g(z) / z with the limit y(0) = f(0); f(z) = -g'(z) / g(z).
    Raises NonPositiveDiscount where the fitted curve is not positive rather
    than clipping.
    """
    scalar = np.isscalar(zs)
    zs_arr = np.atleast_1d(np.asarray(zs, dtype=float))
    g = np.atleast_1d(evaluate_curve(sol, class_id, zs_arr))
    if np.any(g <= 0.0):
        bad = zs_arr[np.asarray(g) <= 0.0]
        raise NonPositiveDiscount(
            f"class {class_id} discount curve nonpositive at maturities {bad}")
    dg = np.atleast_1d(curve_derivative(sol, class_id, zs_arr))
    fwd = -dg / g
    with np.errstate(divide="ignore", invalid="ignore"):
        yld = np.where(zs_arr > 0.0, -np.log(g) / np.where(zs_arr > 0.0, zs_arr, 1.0), fwd)
    if scalar:
        return float(yld[0]), float(fwd[0])
    return yld, fwd

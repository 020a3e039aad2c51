"""Gaussian-process posterior over the jointly estimated curves.

Placing a vector-valued Gaussian prior with mean p and kernel K on the curves
and observing prices with Gaussian noise Sigma yields a Gaussian posterior
whose mean coincides with the ridge-regression curves when Sigma equals the
ridge matrix Lambda.  The posterior kernel

    K_post(y, z) = K(y, z) - K(y, x^T) C^T (C K C^T + Sigma)^{-1} C K(x, z)

quantifies remaining uncertainty; a single multiplicative scale is fitted by
maximum likelihood (the mean is invariant to it) and enters the confidence
bands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ScaleUndefined
from .estimator import (CurveSolution, EstimatorConfig, _beta_from_dual,
                        _diagnostics, _dual_pieces, _factor_spd,
                        _ridge_diagonal, curve_derivative, evaluate_curve)
from .instruments import CashFlowMatrix
from .kernels import normalize_kernel, scalar_gram, scalar_kernel_eval

__all__ = [
    "PosteriorSurface",
    "posterior",
    "posterior_mean",
    "posterior_kernel",
    "posterior_variance",
    "fit_scale",
    "log_likelihood",
    "Bands",
    "confidence_bands",
    "task_correlation",
]


@dataclass(frozen=True)
class PosteriorSurface:
    """Posterior mean, noise model, fitted scale, and cached factorization."""

    solution: CurveSolution
    cfm: CashFlowMatrix
    noise_diag: np.ndarray
    scale: float | None  # None when no instruments were observed
    cho: tuple | None
    half_log_det: float
    residual: np.ndarray

    @property
    def kernel(self):
        return self.solution.kernel

    @property
    def n_classes(self) -> int:
        return self.solution.kernel.n_classes


def _noise_diagonal(cfm: CashFlowMatrix, cfg: EstimatorConfig, sigma) -> np.ndarray:
    if sigma is None:
        return _ridge_diagonal(cfm, cfg.lam)
    if np.isscalar(sigma):
        diag = np.full(cfm.total_count, float(sigma))
    else:
        diag = np.asarray(sigma, dtype=float).copy()
        if diag.shape != (cfm.total_count,):
            raise ValueError(f"noise spec must have length {cfm.total_count}")
    if np.any(diag <= 0.0) or not np.all(np.isfinite(diag)):
        raise ValueError("noise variances must be positive and finite")
    return diag


def posterior(cfm: CashFlowMatrix, cfg: EstimatorConfig,
              sigma=None) -> PosteriorSurface:
    """Condition the Gaussian prior on the observed prices.

    ``sigma`` is the observation noise: None uses the ridge diagonal
    Lambda (so the posterior mean reproduces the ridge solution), a scalar
    gives homoskedastic noise, and a length-M vector gives per-instrument
    variances.  The likelihood scale is fitted on construction.
    """
    noise = _noise_diagonal(cfm, cfg, sigma)
    kmat, ckct, r = _dual_pieces(cfm, cfg.kernel, cfg.prior)
    m_total = cfm.total_count
    if m_total == 0:
        beta = np.zeros((cfm.n_classes, cfm.n_grid))
        sol = CurveSolution(beta=beta, grid=cfm.grid, kernel=cfg.kernel,
                            prior=cfg.prior,
                            diagnostics=_diagnostics(cfm, cfg, beta, kmat))
        return PosteriorSurface(solution=sol, cfm=cfm, noise_diag=noise,
                                scale=None, cho=None, half_log_det=0.0,
                                residual=r)

    exact_rows = np.flatnonzero(noise == 0.0)
    if exact_rows.size:
        _factor_spd(ckct[np.ix_(exact_rows, exact_rows)],
                    "exact-fit block of C K C^T is not invertible")
    g = ckct + np.diag(noise)
    cho = _factor_spd(g, "observation covariance C K C^T + Sigma failed to factor")
    y = scipy.linalg.cho_solve(cho, r)
    beta = _beta_from_dual(cfm, y)
    sol = CurveSolution(beta=beta, grid=cfm.grid, kernel=cfg.kernel,
                        prior=cfg.prior,
                        diagnostics=_diagnostics(cfm, cfg, beta, kmat))
    scale = float(r @ y) / m_total  # 2 q_2 / M
    half_log_det = float(np.sum(np.log(np.diag(cho[0]))))
    return PosteriorSurface(solution=sol, cfm=cfm, noise_diag=noise,
                            scale=scale, cho=cho, half_log_det=half_log_det,
                            residual=r)


def posterior_mean(ps: PosteriorSurface, zs) -> np.ndarray:
    """Posterior mean curves of all classes at the given maturities, shape
    (A, len(zs)).

    Evaluated through the stacked form m(z) + K(z, x^T) vec(beta^T), which
    exercises the joint kernel layout rather than the estimator's per-class
    contraction.
    """
    zs = np.atleast_1d(np.asarray(zs, dtype=float))
    sol = ps.solution
    a_classes = ps.n_classes
    prior_vals = np.vstack([sol.prior.value(a, zs) for a in range(a_classes)])
    if sol.grid.size == 0:
        return prior_vals
    kz = scalar_gram(sol.kernel.params, zs, sol.grid)  # nz x N
    big = np.kron(sol.kernel.tasks.B, kz)  # (A nz) x (A N), class-major
    update = big @ sol.beta.reshape(-1)
    return prior_vals + update.reshape(a_classes, zs.size)


def _cross_rows(ps: PosteriorSurface, zs: np.ndarray) -> np.ndarray:
    """Stacked rows (C k(x, z))_m for every observation row m, shape M x nz."""
    cfm = ps.cfm
    kxz = scalar_gram(ps.kernel.params, cfm.grid, zs) if cfm.n_grid else np.zeros((0, zs.size))
    out = np.zeros((cfm.total_count, zs.size))
    for a, sl in enumerate(cfm.row_slices()):
        if cfm.counts[a]:
            out[sl] = cfm.blocks[a] @ kxz
    return out


def _row_task_weights(ps: PosteriorSurface, class_id: int) -> np.ndarray:
    """B[c(m), class_id] per observation row m."""
    cfm = ps.cfm
    b = ps.kernel.tasks.B
    out = np.zeros(cfm.total_count)
    for a, sl in enumerate(cfm.row_slices()):
        out[sl] = b[a, class_id]
    return out


def posterior_variance(ps: PosteriorSurface, class_id: int, zs) -> np.ndarray:
    """Unscaled posterior variances K_post[a, a](z, z); multiply by the
    fitted scale for likelihood-calibrated uncertainty."""
    zs = np.atleast_1d(np.asarray(zs, dtype=float))
    kdiag = np.asarray([scalar_kernel_eval(ps.kernel.params, z, z) for z in zs])
    prior_var = ps.kernel.tasks.B[class_id, class_id] * kdiag
    if ps.cho is None:
        return prior_var
    u = _row_task_weights(ps, class_id)[:, None] * _cross_rows(ps, zs)
    x = scipy.linalg.cho_solve(ps.cho, u)
    return prior_var - np.sum(u * x, axis=0)


def posterior_kernel(ps: PosteriorSurface, y: float, z: float) -> np.ndarray:
    """Full A x A posterior kernel block K_post(y, z) (unscaled)."""
    b = ps.kernel.tasks.B
    prior_block = b * scalar_kernel_eval(ps.kernel.params, y, z)
    if ps.cho is None:
        return prior_block
    uy = _stacked_cross(ps, float(y))
    uz = _stacked_cross(ps, float(z))
    return prior_block - uy.T @ scipy.linalg.cho_solve(ps.cho, uz)


def _stacked_cross(ps: PosteriorSurface, z: float) -> np.ndarray:
    """M x A matrix with entry (m, a) = [C K(x, z)]_{m, a} = B[c(m), a] (C k(x, z))_m."""
    cfm = ps.cfm
    b = ps.kernel.tasks.B
    base = _cross_rows(ps, np.asarray([z]))[:, 0]
    out = np.zeros((cfm.total_count, ps.n_classes))
    for a, sl in enumerate(cfm.row_slices()):
        out[sl] = base[sl, None] * b[a][None, :]
    return out


def fit_scale(ps: PosteriorSurface) -> float:
    """Maximum-likelihood variance scale 2 q_2 / M (fitted at construction)."""
    if ps.scale is None:
        raise ScaleUndefined("scale is undefined without observed instruments")
    return ps.scale


def log_likelihood(ps: PosteriorSurface, s: float) -> float:
    """Profile log-likelihood of the scale: -q2/s - (M/2) log s - q1."""
    if ps.scale is None:
        raise ScaleUndefined("likelihood is undefined without observed instruments")
    if s <= 0.0:
        raise ValueError("scale must be positive")
    m = ps.cfm.total_count
    q2 = 0.5 * ps.scale * m
    q1 = ps.half_log_det + 0.5 * m * math.log(2.0 * math.pi)
    return -q2 / s - 0.5 * m * math.log(s) - q1


@dataclass(frozen=True)
class Bands:
    """Pointwise confidence bands for one class's discount and yield curves."""

    zs: np.ndarray
    discount_lower: np.ndarray
    discount_mean: np.ndarray
    discount_upper: np.ndarray
    yield_lower: np.ndarray
    yield_mean: np.ndarray
    yield_upper: np.ndarray


def _yield_transform(g: np.ndarray, zs: np.ndarray, at_zero: float) -> np.ndarray:
    """Map discount factors through -ln(g)/z; +inf marks nonpositive g.

    At z = 0 the supplied limit value (the instantaneous forward) is used.
    """
    out = np.full(zs.shape, np.inf)
    pos = g > 0.0
    nz = pos & (zs > 0.0)
    out[nz] = -np.log(g[nz]) / zs[nz]
    out[zs == 0.0] = at_zero
    return out


def confidence_bands(ps: PosteriorSurface, class_id: int, zs,
                     n_sigma: float = 3.0, cap: float | None = None) -> Bands:
    """Symmetric n-sigma bands on the discount curve, mapped to yields.

    The discount-to-yield map is monotone decreasing, so the band order
    flips; a nonpositive lower discount band turns the yield upper band into
    a +inf marker.  ``cap`` optionally truncates the yield bands at mean
    +/- cap (presentation only).
    """
    if n_sigma < 0.0:
        raise ValueError("n_sigma must be nonnegative")
    zs = np.atleast_1d(np.asarray(zs, dtype=float))
    mean = np.atleast_1d(evaluate_curve(ps.solution, class_id, zs))
    s = 1.0 if ps.scale is None else ps.scale
    var = np.maximum(posterior_variance(ps, class_id, zs), 0.0)
    half = n_sigma * np.sqrt(s * var)
    g_lo, g_hi = mean - half, mean + half

    dg0 = np.atleast_1d(curve_derivative(ps.solution, class_id, np.asarray([0.0])))[0]
    f0 = -dg0  # g(0) = 1 exactly
    y_mean = _yield_transform(mean, zs, at_zero=f0)
    y_lo = _yield_transform(g_hi, zs, at_zero=f0)
    y_hi = _yield_transform(g_lo, zs, at_zero=f0)
    if cap is not None:
        finite = np.isfinite(y_mean)
        y_lo[finite] = np.maximum(y_lo[finite], y_mean[finite] - cap)
        y_hi[finite] = np.minimum(y_hi[finite], y_mean[finite] + cap)
    return Bands(zs=zs, discount_lower=g_lo, discount_mean=mean,
                 discount_upper=g_hi, yield_lower=y_lo, yield_mean=y_mean,
                 yield_upper=y_hi)


def task_correlation(ps: PosteriorSurface) -> np.ndarray:
    """Prior cross-class correlation at equal maturities (from the task
    covariance), constant over maturities with positive scalar variance."""
    corr, _ = normalize_kernel(ps.kernel)
    return corr

"""Joint discount-curve estimation across fixed-income product classes.

Curves for several product classes (government bonds, RFR swaps,
cross-currency swaps, ...) are estimated jointly by vector-valued kernel
ridge regression with a separable kernel: a weighted-Sobolev scalar kernel in
maturity times a task covariance built from per-class smoothness weights and
pairwise spread penalties.  A Gaussian-process view supplies confidence
bands, and experiment drivers cover hyperparameter cross-validation and
maturity-masking studies.
"""

from .errors import (ExperimentSkipped, IllConditioned, MulticurveError,
                     NonPositiveDiscount, NoYieldBracket, ScaleUndefined)
from .estimator import (CurveSolution, EstimatorConfig, FlatRatePrior,
                        curve_derivative, evaluate_curve, oracle_solve, solve,
                        yield_and_forward)
from .experiments import (BucketSpec, ExperimentReport, FitRecord,
                          LoocvResult, MaskingConfig, bucket_table,
                          evaluate_fits, loocv, masking_experiment,
                          merge_reports, rmse)
from .gp import (Bands, PosteriorSurface, confidence_bands, fit_scale,
                 log_likelihood, posterior, posterior_kernel, posterior_mean,
                 posterior_variance, task_correlation)
from .instruments import (CashFlowMatrix, Instrument, SwapSpec, assemble,
                          build_bond, build_swap, duration_weight, fx_forward,
                          ytm_solve)
from .kernels import (GraphRegularization, ScalarKernelParams, SeparableKernel,
                      TaskMatrices, build_task_matrices, kernel_gram,
                      make_kernel, normalize_kernel, rkhs_norm_forms,
                      rkhs_norm_of_span, scalar_kernel_dx, scalar_kernel_eval)

__version__ = "0.1.0"

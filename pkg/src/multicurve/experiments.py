"""Fit metrics, hyperparameter cross-validation, and the masking experiment.

All errors are yield-to-maturity errors in basis points: each instrument is
repriced under the fitted curves, the model price is inverted to a model
yield, and the difference to the market-implied yield is recorded.  Results
aggregate by maturity bucket (bucketed on final maturity) and across dates
as means and medians of the per-date RMSE values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (ExperimentSkipped, IllConditioned, NoYieldBracket,
                     NonPositiveDiscount)
from .estimator import CurveSolution, EstimatorConfig, evaluate_curve, solve
from .instruments import CashFlowMatrix, assemble, ytm_solve
from .kernels import make_kernel

__all__ = [
    "BucketSpec",
    "MaskingConfig",
    "FitRecord",
    "ExperimentReport",
    "LoocvResult",
    "OVERALL",
    "DEFAULT_ALPHA_GRID",
    "DEFAULT_GAMMA_GRID",
    "DEFAULT_THETA_GRID",
    "evaluate_fits",
    "rmse",
    "bucket_table",
    "loocv",
    "masking_experiment",
    "merge_reports",
]

OVERALL = "Overall"

DEFAULT_ALPHA_GRID = tuple(round(0.01 * i, 2) for i in range(1, 11))
DEFAULT_GAMMA_GRID = tuple(v * 1e-4 for v in (0.01, 0.05, 0.1, 0.5, 1, 5, 10, 50, 100))
DEFAULT_THETA_GRID = tuple(v * 1e-4 for v in (1, 5, 10, 50, 100, 500, 1000))

DEFAULT_BUCKET_EDGES = (1.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0,
                        45.0, 50.0)


@dataclass(frozen=True)
class BucketSpec:
    """Ascending maturity cutpoints; bucket i is (edge_{i-1}, edge_i]."""

    edges: tuple = DEFAULT_BUCKET_EDGES

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        if not edges or edges[0] <= 0.0 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("bucket edges must be strictly increasing and positive")
        object.__setattr__(self, "edges", edges)

    def labels(self) -> list[str]:
        out = [f"<={self.edges[0]:g}Y"]
        out.extend(f"({a:g}Y,{b:g}Y]" for a, b in zip(self.edges, self.edges[1:]))
        return out

    def label_of(self, maturity: float) -> str | None:
        """Bucket label for a final maturity, None beyond the last edge."""
        if maturity <= self.edges[0]:
            return self.labels()[0]
        for i in range(1, len(self.edges)):
            if self.edges[i - 1] < maturity <= self.edges[i]:
                return self.labels()[i]
        return None


@dataclass(frozen=True)
class MaskingConfig:
    """Design of one masking run: which class is partially hidden and how
    strongly the classes are coupled on refit."""

    horizon: float = 10.0
    masked_class: int = 0
    theta_grid: tuple = DEFAULT_THETA_GRID
    gammas: float | tuple = 1e-4
    alpha: float = 0.05
    lam: float = 1.0

    def __post_init__(self):
        if self.horizon <= 0.0:
            raise ValueError("masking horizon must be positive")
        if any(t < 0.0 for t in self.theta_grid):
            raise ValueError("theta values must be nonnegative")


@dataclass(frozen=True)
class FitRecord:
    """Market vs. model yield of one instrument under one fitted curve set."""

    date: str
    panel: str  # "unmasked" or "masked"
    theta: float
    class_id: int
    instrument_id: str
    maturity: float
    market_ytm: float
    model_ytm: float

    @property
    def error_bp(self) -> float:
        return (self.model_ytm - self.market_ytm) * 1e4


def evaluate_fits(instruments, sol: CurveSolution, *, date: str = "",
                  panel: str = "", theta: float = 0.0) -> list[FitRecord]:
    """Reprice instruments under the fitted curves and invert both prices to
    yields."""
    records = []
    for inst in instruments:
        model_price = float(inst.amounts @ np.atleast_1d(
            evaluate_curve(sol, inst.class_id, inst.dates)))
        market_y = ytm_solve(inst)
        model_y = ytm_solve(replace(inst, price=model_price))
        records.append(FitRecord(date=date, panel=panel, theta=theta,
                                 class_id=inst.class_id, instrument_id=inst.id,
                                 maturity=inst.maturity, market_ytm=market_y,
                                 model_ytm=model_y))
    return records


def rmse(records, bucket: tuple[float, float] | None = None) -> float | None:
    """Root mean squared yield error in basis points; None when no
    instrument falls in the bucket (an absent value, not zero)."""
    if bucket is not None:
        lo, hi = bucket
        records = [r for r in records if lo < r.maturity <= hi]
    if not records:
        return None
    return math.sqrt(sum(r.error_bp ** 2 for r in records) / len(records))


def bucket_table(records, spec: BucketSpec) -> dict[str, float | None]:
    """Per-bucket RMSE plus the pooled Overall value."""
    out: dict[str, float | None] = {}
    edges = (0.0, *spec.edges)
    for label, lo, hi in zip(spec.labels(), edges, edges[1:]):
        out[label] = rmse(records, bucket=(lo, hi))
    out[OVERALL] = rmse(records)
    return out


@dataclass(frozen=True)
class LoocvResult:
    """Cross-validation RMSE surface of one class over the (gamma, alpha) grid."""

    class_id: int
    gammas: tuple
    alphas: tuple
    rmse_bps: np.ndarray  # len(gammas) x len(alphas); NaN marks invalid cells
    best_gamma: float
    best_alpha: float
    best_rmse: float


def loocv(date_data: CashFlowMatrix, grid=None, *, lam: float = 1.0) -> dict[int, LoocvResult]:
    """Daily leave-one-out cross-validation, standalone per class.

    For every (gamma, alpha) cell and every instrument, the class is refit
    without that instrument and the instrument's repricing error in yield
    terms is recorded.  Solver failures mark the cell invalid (NaN).  Ties on
    the minimum resolve to the earliest grid cell, so results are
    reproducible.
    """
    gammas, alphas = grid if grid is not None else (DEFAULT_GAMMA_GRID,
                                                    DEFAULT_ALPHA_GRID)
    gammas = tuple(float(g) for g in gammas)
    alphas = tuple(float(a) for a in alphas)
    if not gammas or not alphas:
        raise ValueError("grids must be nonempty")

    results: dict[int, LoocvResult] = {}
    for class_id in range(date_data.n_classes):
        insts = list(date_data.instruments[class_id])
        if len(insts) < 2:
            raise ValueError(
                f"leave-one-out needs at least 2 instruments in class {class_id}")
        market = [ytm_solve(inst) for inst in insts]
        folds = []
        for i in range(len(insts)):
            rest = [replace(inst, class_id=0) for j, inst in enumerate(insts) if j != i]
            folds.append(assemble(rest, date_data.weight_mode, n_classes=1))

        surface = np.full((len(gammas), len(alphas)), np.nan)
        for gi, gamma in enumerate(gammas):
            for ai, alpha in enumerate(alphas):
                cfg = EstimatorConfig(kernel=make_kernel(alpha, [gamma]), lam=lam)
                errors = []
                try:
                    for i, inst in enumerate(insts):
                        sol = solve(folds[i], cfg)
                        model_price = float(inst.amounts @ np.atleast_1d(
                            evaluate_curve(sol, 0, inst.dates)))
                        model_y = ytm_solve(replace(inst, class_id=0,
                                                    price=model_price))
                        errors.append((model_y - market[i]) * 1e4)
                except (IllConditioned, NoYieldBracket, NonPositiveDiscount):
                    continue
                surface[gi, ai] = math.sqrt(
                    sum(e * e for e in errors) / len(errors))

        if np.all(np.isnan(surface)):
            best_gi, best_ai, best = 0, 0, float("nan")
        else:
            flat = np.where(np.isnan(surface), np.inf, surface)
            best_gi, best_ai = np.unravel_index(int(np.argmin(flat)), surface.shape)
            best = float(surface[best_gi, best_ai])
        surface.setflags(write=False)
        results[class_id] = LoocvResult(class_id=class_id, gammas=gammas,
                                        alphas=alphas, rmse_bps=surface,
                                        best_gamma=gammas[best_gi],
                                        best_alpha=alphas[best_ai],
                                        best_rmse=best)
    return results


@dataclass(frozen=True)
class ExperimentReport:
    """Per-instrument fit records of a masking run plus its design.

    Thetas always include 0 (the standalone fit).  All tables are derived
    from the raw records, so aggregate numbers can be recomputed exactly from
    the emitted per-instrument errors.
    """

    records: tuple
    bucket_spec: BucketSpec
    horizon: float
    masked_class: int
    thetas: tuple

    @property
    def dates(self) -> list[str]:
        return sorted({r.date for r in self.records})

    def select(self, *, panel: str, theta: float, class_id: int | None = None,
               date: str | None = None) -> list[FitRecord]:
        return [r for r in self.records
                if r.panel == panel and r.theta == theta
                and (class_id is None or r.class_id == class_id)
                and (date is None or r.date == date)]

    def _per_date_values(self, panel: str, theta: float, class_id: int,
                         bucket: tuple[float, float] | None) -> list[float]:
        vals = []
        for date in self.dates:
            v = rmse(self.select(panel=panel, theta=theta, class_id=class_id,
                                 date=date), bucket=bucket)
            if v is not None:
                vals.append(v)
        return vals

    def aggregate(self, panel: str, theta: float, class_id: int,
                  bucket: tuple[float, float] | None = None,
                  stat: str = "mean") -> float | None:
        """Time-aggregated RMSE: mean or median of the per-date values."""
        vals = self._per_date_values(panel, theta, class_id, bucket)
        if not vals:
            return None
        if stat == "mean":
            return sum(vals) / len(vals)
        if stat == "median":
            return float(np.median(vals))
        raise ValueError(f"unknown statistic {stat!r}")

    def bucket_rows(self, panel: str, theta: float, class_id: int,
                    stat: str = "mean") -> dict[str, float | None]:
        edges = (0.0, *self.bucket_spec.edges)
        out = {}
        for label, lo, hi in zip(self.bucket_spec.labels(), edges, edges[1:]):
            out[label] = self.aggregate(panel, theta, class_id, bucket=(lo, hi),
                                        stat=stat)
        out[OVERALL] = self.aggregate(panel, theta, class_id, stat=stat)
        return out

    def masked_region_rmse(self, theta: float, panel: str = "masked") -> float | None:
        """Aggregate RMSE of the masked class beyond the masking horizon."""
        return self.aggregate(panel, theta, self.masked_class,
                              bucket=(self.horizon, float("inf")))

    def winner_theta(self) -> float:
        """Coupling value with minimal masked-class overall RMSE in the
        masked panel (ties resolve to the smallest theta)."""
        best_theta, best = self.thetas[0], float("inf")
        for theta in self.thetas:
            v = self.aggregate("masked", theta, self.masked_class)
            if v is not None and v < best:
                best_theta, best = theta, v
        return best_theta


def merge_reports(reports) -> ExperimentReport:
    """Combine per-date reports of one experiment design."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to merge")
    first = reports[0]
    records = tuple(r for rep in reports for r in rep.records)
    return ExperimentReport(records=records, bucket_spec=first.bucket_spec,
                            horizon=first.horizon,
                            masked_class=first.masked_class,
                            thetas=first.thetas)


def masking_experiment(date_data: CashFlowMatrix, cfg: MaskingConfig,
                       date: str = "",
                       bucket_spec: BucketSpec | None = None) -> ExperimentReport:
    """Hide the masked class beyond the horizon, refit across the coupling
    grid, and reprice everything (hidden instruments included).

    For every theta in {0} union the grid, both an unmasked fit (all data)
    and a masked fit are produced; theta = 0 is the standalone benchmark.
    Raises ExperimentSkipped when the masked class has no instruments on one
    side of the horizon, since the experiment would be vacuous.
    """
    bucket_spec = bucket_spec or BucketSpec()
    a_classes = date_data.n_classes
    if not 0 <= cfg.masked_class < a_classes:
        raise ValueError(f"masked class {cfg.masked_class} out of range")
    gammas = (np.full(a_classes, float(cfg.gammas))
              if np.isscalar(cfg.gammas) else np.asarray(cfg.gammas, dtype=float))

    all_insts = date_data.flat_instruments
    masked_insts = [inst for inst in all_insts
                    if not (inst.class_id == cfg.masked_class
                            and inst.maturity > cfg.horizon)]
    n_beyond = sum(1 for inst in all_insts
                   if inst.class_id == cfg.masked_class
                   and inst.maturity > cfg.horizon)
    n_within = sum(1 for inst in all_insts
                   if inst.class_id == cfg.masked_class
                   and inst.maturity <= cfg.horizon)
    if n_beyond == 0 or n_within == 0:
        raise ExperimentSkipped(
            f"masked class {cfg.masked_class} needs instruments on both sides "
            f"of horizon {cfg.horizon} (got {n_within} within, {n_beyond} beyond)")

    thetas = (0.0, *(t for t in cfg.theta_grid if t != 0.0))
    records: list[FitRecord] = []
    for theta in thetas:
        kernel = make_kernel(cfg.alpha, gammas, theta)
        est_cfg = EstimatorConfig(kernel=kernel, lam=cfg.lam)
        for panel, universe in (("unmasked", all_insts), ("masked", masked_insts)):
            cfm = assemble(universe, date_data.weight_mode, n_classes=a_classes)
            sol = solve(cfm, est_cfg)
            records.extend(evaluate_fits(all_insts, sol, date=date,
                                         panel=panel, theta=theta))
    return ExperimentReport(records=tuple(records), bucket_spec=bucket_spec,
                            horizon=cfg.horizon, masked_class=cfg.masked_class,
                            thetas=thetas)

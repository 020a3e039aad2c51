"""Command-line driver: quote files in, curve/band/report files out.

Subcommands
-----------
estimate   fit curves per date and emit (z, class, discount, yield, forward,
           band_lo, band_hi) on an evaluation grid
bands      emit discount and yield confidence bands per date
loocv      leave-one-out RMSE surfaces over the (gamma, alpha) grid per class
mask       maturity-masking experiment over the theta grid, tabular + JSON

Quote files are delimited text with a header row; the configuration is a
single JSON document (schema documented in the README).  Machine outputs
carry full 17-significant-digit precision; dates are processed independently
and may be parallelized with --threads without changing any output byte.
Exit codes: 0 success, 2 input error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ExperimentSkipped, MulticurveError
from .estimator import EstimatorConfig, FlatRatePrior, curve_derivative
from .experiments import (DEFAULT_ALPHA_GRID, DEFAULT_GAMMA_GRID,
                          DEFAULT_THETA_GRID, OVERALL, BucketSpec,
                          MaskingConfig, loocv, masking_experiment,
                          merge_reports)
from .gp import confidence_bands, posterior
from .instruments import Instrument, SwapSpec, assemble, build_bond, build_swap
from .kernels import make_kernel

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

_QUOTE_BASE_COLUMNS = ("date", "class_id", "instrument_type", "id", "price_or_rate")


class QuoteParseError(Exception):
    """Malformed quote file; message carries the offending line number."""


class ConfigError(Exception):
    """Malformed or inconsistent run configuration."""


def _fmt(x) -> str:
    return f"{float(x):.17g}"


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; see README for the JSON schema."""

    class_labels: tuple
    alpha: float
    gammas: tuple
    theta: tuple  # row-major A x A matrix
    lam: float
    prior: FlatRatePrior
    weight_mode: str
    bucket_spec: BucketSpec
    grid_start: float
    grid_stop: float | None  # None: max(50, longest maturity) per date
    grid_step: float
    n_sigma: float
    band_cap: float | None
    loocv_gammas: tuple
    loocv_alphas: tuple
    mask_horizon: float
    mask_class: int
    mask_thetas: tuple

    @property
    def n_classes(self) -> int:
        return len(self.class_labels)

    def kernel(self):
        return make_kernel(self.alpha, self.gammas,
                           np.asarray(self.theta, dtype=float))

    def estimator_config(self) -> EstimatorConfig:
        return EstimatorConfig(kernel=self.kernel(), prior=self.prior,
                               lam=self.lam)


def _positive_floats(values, name) -> tuple:
    try:
        out = tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a list of numbers") from None
    if not out or any(not np.isfinite(v) or v <= 0.0 for v in out):
        raise ConfigError(f"{name} must be a nonempty list of positive numbers")
    return out


def load_config(path: str | Path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc

    labels = raw.get("classes")
    if not isinstance(labels, list) or not labels or \
            any(not isinstance(lbl, str) for lbl in labels):
        raise ConfigError("config must list class labels under 'classes'")
    if len(set(labels)) != len(labels):
        raise ConfigError("class labels must be unique")
    n = len(labels)

    alpha = float(raw.get("kernel", {}).get("alpha", 0.05))
    if alpha <= 0.0:
        raise ConfigError("kernel.alpha must be positive")

    gamma_raw = raw.get("gamma", 1e-4)
    if isinstance(gamma_raw, dict):
        try:
            gammas = tuple(float(gamma_raw[lbl]) for lbl in labels)
        except KeyError as exc:
            raise ConfigError(f"gamma missing for class {exc.args[0]!r}") from None
    elif isinstance(gamma_raw, list):
        if len(gamma_raw) != n:
            raise ConfigError(f"gamma list must have {n} entries")
        gammas = tuple(float(g) for g in gamma_raw)
    else:
        gammas = (float(gamma_raw),) * n
    if any(g <= 0.0 for g in gammas):
        raise ConfigError("every gamma must be positive")

    theta_raw = raw.get("theta", 0.0)
    if isinstance(theta_raw, list):
        theta = np.asarray(theta_raw, dtype=float)
        if theta.shape != (n, n):
            raise ConfigError(f"theta matrix must be {n}x{n}")
    else:
        theta = float(theta_raw) * (np.ones((n, n)) - np.eye(n))
    if np.any(theta < 0.0) or not np.array_equal(theta, theta.T) or \
            np.any(np.diag(theta) != 0.0):
        raise ConfigError("theta must be symmetric, nonnegative, zero-diagonal")

    lam = float(raw.get("lambda", 1.0))
    if lam <= 0.0:
        raise ConfigError("lambda must be positive")

    prior_raw = raw.get("prior", {"type": "constant"})
    ptype = prior_raw.get("type", "constant")
    if ptype == "constant":
        prior = FlatRatePrior(0.0)
    elif ptype == "flat_rate":
        prior = FlatRatePrior(float(prior_raw.get("rate", 0.0)))
    else:
        raise ConfigError(f"unknown prior type {ptype!r}")

    weight_mode = raw.get("weight_mode", "duration")
    if weight_mode not in ("duration", "unit"):
        raise ConfigError(f"unknown weight_mode {weight_mode!r}")

    try:
        bucket_spec = BucketSpec(tuple(raw.get("buckets",
                                                BucketSpec().edges)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    grid_raw = raw.get("eval_grid", {})
    grid_start = float(grid_raw.get("start", 0.0))
    grid_stop = grid_raw.get("stop")
    grid_stop = None if grid_stop is None else float(grid_stop)
    grid_step = float(grid_raw.get("step", 0.25))
    if grid_start < 0.0 or grid_step <= 0.0:
        raise ConfigError("eval_grid start must be >= 0 and step > 0")

    bands_raw = raw.get("bands", {})
    n_sigma = float(bands_raw.get("n_sigma", 3.0))
    cap = bands_raw.get("cap")
    cap = None if cap is None else float(cap)
    if n_sigma < 0.0:
        raise ConfigError("bands.n_sigma must be nonnegative")

    exp_raw = raw.get("experiments", {})
    loocv_raw = exp_raw.get("loocv", {})
    loocv_gammas = _positive_floats(loocv_raw.get("gammas", DEFAULT_GAMMA_GRID),
                                    "experiments.loocv.gammas")
    loocv_alphas = _positive_floats(loocv_raw.get("alphas", DEFAULT_ALPHA_GRID),
                                    "experiments.loocv.alphas")

    mask_raw = exp_raw.get("masking", {})
    mask_horizon = float(mask_raw.get("horizon", 10.0))
    if mask_horizon <= 0.0:
        raise ConfigError("experiments.masking.horizon must be positive")
    mask_label = mask_raw.get("masked_class", labels[0])
    if mask_label not in labels:
        raise ConfigError(f"masked_class {mask_label!r} is not a configured class")
    thetas_raw = mask_raw.get("thetas", DEFAULT_THETA_GRID)
    try:
        mask_thetas = tuple(float(t) for t in thetas_raw)
    except (TypeError, ValueError):
        raise ConfigError("experiments.masking.thetas must be a list of numbers") from None
    if not mask_thetas or any(t < 0.0 or not np.isfinite(t) for t in mask_thetas):
        raise ConfigError("experiments.masking.thetas must be nonnegative numbers")

    return RunConfig(class_labels=tuple(labels), alpha=alpha, gammas=gammas,
                     theta=tuple(map(tuple, theta.tolist())), lam=lam,
                     prior=prior, weight_mode=weight_mode,
                     bucket_spec=bucket_spec, grid_start=grid_start,
                     grid_stop=grid_stop, grid_step=grid_step,
                     n_sigma=n_sigma, band_cap=cap,
                     loocv_gammas=loocv_gammas, loocv_alphas=loocv_alphas,
                     mask_horizon=mask_horizon,
                     mask_class=labels.index(mask_label),
                     mask_thetas=mask_thetas)


# ---------------------------------------------------------------------------
# quote files


def _row_float(row: dict, key: str, line: int) -> float:
    raw = (row.get(key) or "").strip()
    if not raw:
        raise QuoteParseError(f"line {line}: missing value for {key!r}")
    try:
        return float(raw)
    except ValueError:
        raise QuoteParseError(
            f"line {line}: cannot parse {key}={raw!r} as a number") from None


def parse_quotes(path: str | Path, class_labels) -> dict[str, list[Instrument]]:
    """Parse a quote file into per-date instrument lists.

    One row per instrument-date; rows with unknown class labels or
    instrument types are rejected with their line number.
    """
    label_index = {lbl: i for i, lbl in enumerate(class_labels)}
    by_date: dict[str, list[Instrument]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise QuoteParseError("line 1: empty quote file (no header)")
        missing = [c for c in _QUOTE_BASE_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise QuoteParseError(f"line 1: missing required columns {missing}")
        for line, row in enumerate(reader, start=2):
            date = (row.get("date") or "").strip()
            if not date:
                raise QuoteParseError(f"line {line}: missing date")
            label = (row.get("class_id") or "").strip()
            if label not in label_index:
                raise QuoteParseError(
                    f"line {line}: unknown class label {label!r}")
            class_id = label_index[label]
            itype = (row.get("instrument_type") or "").strip()
            inst_id = (row.get("id") or "").strip() or f"row{line}"
            price_or_rate = _row_float(row, "price_or_rate", line)
            try:
                if itype == "bond":
                    inst = build_bond(class_id,
                                      coupon_rate=_row_float(row, "coupon", line),
                                      frequency=int(_row_float(row, "frequency", line)),
                                      maturity=_row_float(row, "maturity_years", line),
                                      dirty_price=price_or_rate, id=inst_id)
                elif itype in ("swap", "xccy"):
                    spread = 0.0
                    if itype == "xccy" or (row.get("basis_spread") or "").strip():
                        spread = _row_float(row, "basis_spread", line)
                    spec = SwapSpec(start=_row_float(row, "start_years", line),
                                    maturity=_row_float(row, "maturity_years", line),
                                    fixed_rate=price_or_rate,
                                    fixed_accrual=_row_float(row, "fixed_accrual", line),
                                    float_accrual=_row_float(row, "float_accrual", line),
                                    basis_spread=spread)
                    inst = build_swap(class_id, spec, id=inst_id)
                else:
                    raise QuoteParseError(
                        f"line {line}: unknown instrument_type {itype!r}")
            except ValueError as exc:
                raise QuoteParseError(f"line {line}: {exc}") from None
            by_date.setdefault(date, []).append(inst)
    return by_date


def _filter_dates(by_date: dict, spec: str | None) -> list[str]:
    dates = sorted(by_date)
    if not spec:
        return dates
    if ":" in spec:
        lo, hi = spec.split(":", 1)
        return [d for d in dates if (not lo or d >= lo) and (not hi or d <= hi)]
    # an explicitly requested single date is always processed, even with no
    # quotes on it (curves then reduce to the priors)
    return [spec]


# ---------------------------------------------------------------------------
# subcommands


def _eval_grid(cfg: RunConfig, instruments) -> np.ndarray:
    stop = cfg.grid_stop
    if stop is None:
        longest = max((inst.maturity for inst in instruments), default=0.0)
        stop = max(50.0, longest)
    return np.arange(cfg.grid_start, stop + 0.5 * cfg.grid_step, cfg.grid_step)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _curve_file_rows(cfg: RunConfig, instruments, with_forward: bool):
    cfm = assemble(instruments, cfg.weight_mode, n_classes=cfg.n_classes)
    ps = posterior(cfm, cfg.estimator_config())
    zs = _eval_grid(cfg, instruments)
    rows = []
    for a, label in enumerate(cfg.class_labels):
        bands = confidence_bands(ps, a, zs, n_sigma=cfg.n_sigma, cap=cfg.band_cap)
        g = bands.discount_mean
        if with_forward:
            dg = np.atleast_1d(curve_derivative(ps.solution, a, zs))
            fwd = np.where(g > 0.0, -dg / np.where(g > 0.0, g, 1.0), np.nan)
            for i, z in enumerate(zs):
                rows.append((_fmt(z), label, _fmt(g[i]), _fmt(bands.yield_mean[i]),
                             _fmt(fwd[i]), _fmt(bands.yield_lower[i]),
                             _fmt(bands.yield_upper[i])))
        else:
            for i, z in enumerate(zs):
                rows.append((_fmt(z), label, _fmt(bands.discount_lower[i]),
                             _fmt(g[i]), _fmt(bands.discount_upper[i]),
                             _fmt(bands.yield_lower[i]), _fmt(bands.yield_mean[i]),
                             _fmt(bands.yield_upper[i])))
    return rows


def cmd_estimate(cfg: RunConfig, by_date: dict, dates, out_dir: Path,
                 threads: int) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(date: str) -> Path:
        rows = _curve_file_rows(cfg, by_date.get(date, []), with_forward=True)
        path = out_dir / f"curves_{date}.csv"
        _write_rows(path, ("z", "class", "discount", "yield", "forward",
                           "band_lo", "band_hi"), rows)
        return path

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, dates))


def cmd_bands(cfg: RunConfig, by_date: dict, dates, out_dir: Path,
              threads: int) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(date: str) -> Path:
        rows = _curve_file_rows(cfg, by_date.get(date, []), with_forward=False)
        path = out_dir / f"bands_{date}.csv"
        _write_rows(path, ("z", "class", "discount_lo", "discount",
                           "discount_hi", "yield_lo", "yield", "yield_hi"), rows)
        return path

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, dates))


def cmd_loocv(cfg: RunConfig, by_date: dict, dates, out_dir: Path,
              threads: int) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = (cfg.loocv_gammas, cfg.loocv_alphas)

    def one(date: str):
        cfm = assemble(by_date.get(date, []), cfg.weight_mode,
                       n_classes=cfg.n_classes)
        results = loocv(cfm, grid, lam=cfg.lam)
        path = out_dir / f"loocv_{date}.csv"
        rows = []
        for a, label in enumerate(cfg.class_labels):
            res = results[a]
            for gi, gamma in enumerate(res.gammas):
                for ai, alpha in enumerate(res.alphas):
                    best = (gamma == res.best_gamma and alpha == res.best_alpha)
                    rows.append((label, _fmt(gamma), _fmt(alpha),
                                 _fmt(res.rmse_bps[gi, ai]),
                                 "1" if best else "0"))
        _write_rows(path, ("class", "gamma", "alpha", "rmse_bps", "is_best"), rows)
        return path, results

    with ThreadPoolExecutor(max_workers=threads) as pool:
        outcomes = dict(zip(dates, pool.map(one, dates)))

    paths = [outcomes[d][0] for d in dates]
    summary = out_dir / "loocv_summary.csv"
    rows = []
    for a, label in enumerate(cfg.class_labels):
        cells = np.stack([outcomes[d][1][a].rmse_bps for d in dates])
        counts = np.sum(~np.isnan(cells), axis=0)
        sums = np.where(np.isnan(cells), 0.0, cells).sum(axis=0)
        avg = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        flat = np.where(np.isnan(avg), np.inf, avg)
        best_flat = int(np.argmin(flat))
        for gi, gamma in enumerate(cfg.loocv_gammas):
            for ai, alpha in enumerate(cfg.loocv_alphas):
                idx = gi * len(cfg.loocv_alphas) + ai
                rows.append((label, _fmt(gamma), _fmt(alpha), _fmt(avg[gi, ai]),
                             str(int(counts[gi, ai])),
                             "1" if idx == best_flat else "0"))
    _write_rows(summary, ("class", "gamma", "alpha", "avg_rmse_bps",
                          "n_dates", "is_best"), rows)
    paths.append(summary)
    return paths


def cmd_mask(cfg: RunConfig, by_date: dict, dates, out_dir: Path,
             threads: int) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    mask_cfg = MaskingConfig(horizon=cfg.mask_horizon,
                             masked_class=cfg.mask_class,
                             theta_grid=cfg.mask_thetas, gammas=cfg.gammas,
                             alpha=cfg.alpha, lam=cfg.lam)

    def one(date: str):
        cfm = assemble(by_date.get(date, []), cfg.weight_mode,
                       n_classes=cfg.n_classes)
        try:
            return masking_experiment(cfm, mask_cfg, date=date,
                                      bucket_spec=cfg.bucket_spec)
        except ExperimentSkipped as exc:
            return str(exc)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        outcomes = dict(zip(dates, pool.map(one, dates)))

    reports = [outcomes[d] for d in dates if not isinstance(outcomes[d], str)]
    skipped = {d: outcomes[d] for d in dates if isinstance(outcomes[d], str)}
    if not reports:
        raise ExperimentSkipped("every requested date was skipped: "
                                + "; ".join(skipped.values()))
    merged = merge_reports(reports)
    winner = merged.winner_theta()

    report_path = out_dir / "mask_report.csv"
    rows = []
    bucket_labels = [*cfg.bucket_spec.labels(), OVERALL]
    for panel in ("unmasked", "masked"):
        for theta in merged.thetas:
            mode = "SA" if theta == 0.0 else "TL"
            for a, label in enumerate(cfg.class_labels):
                avg_row = merged.bucket_rows(panel, theta, a, stat="mean")
                med_row = merged.bucket_rows(panel, theta, a, stat="median")
                is_winner = (panel == "masked" and a == merged.masked_class
                             and theta == winner)
                for bucket in bucket_labels:
                    avg, med = avg_row[bucket], med_row[bucket]
                    if avg is None:
                        continue
                    rows.append((panel, _fmt(theta), mode, label, bucket,
                                 _fmt(avg), _fmt(med), "1" if is_winner else "0"))
    _write_rows(report_path, ("panel", "theta", "mode", "class", "bucket",
                              "avg_rmse_bps", "median_rmse_bps", "winner"), rows)

    errors_path = out_dir / "mask_errors.csv"
    err_rows = [(r.date, r.panel, _fmt(r.theta), cfg.class_labels[r.class_id],
                 r.instrument_id, _fmt(r.maturity), _fmt(r.market_ytm),
                 _fmt(r.model_ytm), _fmt(r.error_bp))
                for r in merged.records]
    _write_rows(errors_path, ("date", "panel", "theta", "class", "instrument",
                              "maturity", "market_ytm", "model_ytm",
                              "error_bp"), err_rows)

    json_path = out_dir / "mask_report.json"
    tables: dict = {}
    for panel in ("unmasked", "masked"):
        tables[panel] = {}
        for theta in merged.thetas:
            per_class = {}
            for a, label in enumerate(cfg.class_labels):
                avg_row = merged.bucket_rows(panel, theta, a, stat="mean")
                med_row = merged.bucket_rows(panel, theta, a, stat="median")
                per_class[label] = {bucket: {"avg": avg_row[bucket],
                                             "median": med_row[bucket]}
                                    for bucket in bucket_labels
                                    if avg_row[bucket] is not None}
            tables[panel][_fmt(theta)] = per_class
    payload = {
        "horizon": cfg.mask_horizon,
        "masked_class": cfg.class_labels[merged.masked_class],
        "thetas": list(merged.thetas),
        "dates": merged.dates,
        "skipped": skipped,
        "winner_theta": winner,
        "tables": tables,
    }
    with open(json_path, "w", newline="\n", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [report_path, errors_path, json_path]


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multicurve",
        description="Joint discount-curve estimation across product classes")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("estimate", "fit curves and emit curve files"),
                           ("bands", "emit confidence-band files"),
                           ("loocv", "leave-one-out hyperparameter surfaces"),
                           ("mask", "maturity-masking experiment")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--quotes", required=True, help="quote file (CSV)")
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--dates", default=None,
                       help="date filter FROM:TO (inclusive) or a single date")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads across dates")
    return parser


_COMMANDS = {"estimate": cmd_estimate, "bands": cmd_bands,
             "loocv": cmd_loocv, "mask": cmd_mask}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        by_date = parse_quotes(args.quotes, cfg.class_labels)
        dates = _filter_dates(by_date, args.dates)
        if not dates:
            raise QuoteParseError("no quotes match the requested dates")
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (QuoteParseError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    try:
        paths = _COMMANDS[args.command](cfg, by_date, dates,
                                        Path(args.out), args.threads)
    except ValueError as exc:  # insufficient or inconsistent data for the command
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except MulticurveError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for path in paths:
        print(f"wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Fixed-income instruments as dated cash-flow rows.

Every instrument is reduced to the same primitive: an observed price plus a
sparse list of (date, amount) cash flows, so that pricing under a discount
curve g is always  price = sum_j amount_j * g(date_j).  Builders are provided
for coupon bonds, spot/forward-starting fixed-vs-RFR swaps, and cross-currency
swaps (a fixed-rate swap with per-period basis-spread flows on the float
dates).  A cross-section of instruments is assembled into per-class cash-flow
blocks over the shared grid of all cash-flow dates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse
from scipy.optimize import brentq

from .errors import NoYieldBracket, NonPositiveDiscount

__all__ = [
    "Instrument",
    "SwapSpec",
    "CashFlowMatrix",
    "build_bond",
    "build_swap",
    "ytm_price",
    "ytm_price_derivative",
    "ytm_solve",
    "duration_weight",
    "fx_forward",
    "assemble",
]

# Cash-flow dates closer than this (in years) land on the same grid column;
# far below one calendar day.
GRID_TOL = 1e-9

_YTM_TOL = 1e-12
_BRACKET = (-1.0, 2.0)
_BRACKET_EXPANSIONS = 8


@dataclass(frozen=True)
class Instrument:
    """One quoted instrument: a price and its dated cash flows.

    ``price`` is the dirty price for bonds, 1 for spot-starting swaps and 0
    for forward-starting swaps.  ``exact`` requests exact repricing (the
    infinite-weight limit) from the estimator.
    """

    class_id: int
    id: str
    price: float
    dates: np.ndarray
    amounts: np.ndarray
    exact: bool = False

    def __post_init__(self):
        dates = np.atleast_1d(np.asarray(self.dates, dtype=float))
        amounts = np.atleast_1d(np.asarray(self.amounts, dtype=float))
        if dates.size == 0:
            raise ValueError(f"instrument {self.id!r} has no cash flows")
        if dates.shape != amounts.shape:
            raise ValueError("dates and amounts must have equal length")
        if not np.all(np.isfinite(dates)) or np.any(dates <= 0.0):
            raise ValueError("cash-flow dates must be positive and finite")
        if np.any(np.diff(dates) <= 0.0):
            raise ValueError("cash-flow dates must be strictly increasing")
        if not np.all(np.isfinite(amounts)):
            raise ValueError("cash-flow amounts must be finite")
        if not np.isfinite(self.price):
            raise ValueError("price must be finite")
        if self.class_id < 0:
            raise ValueError("class_id must be nonnegative")
        dates.setflags(write=False)
        amounts.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "amounts", amounts)

    @property
    def cashflows(self) -> list[tuple[float, float]]:
        return list(zip(self.dates.tolist(), self.amounts.tolist()))

    @property
    def maturity(self) -> float:
        return float(self.dates[-1])


@dataclass(frozen=True)
class SwapSpec:
    """Market conventions of a fixed-vs-RFR swap leg pair.

    Spot-starting when ``start`` is 0, forward-starting otherwise.  The tenor
    must be an integer number of accrual periods on both legs.  A nonzero
    ``basis_spread`` adds per-period spread flows on the float dates (the
    cross-currency case).
    """

    start: float
    maturity: float
    fixed_rate: float
    fixed_accrual: float
    float_accrual: float
    basis_spread: float = 0.0

    def __post_init__(self):
        if self.start < 0.0:
            raise ValueError("start must be nonnegative")
        if self.maturity <= self.start:
            raise ValueError("maturity must exceed start")
        _periods(self.maturity - self.start, self.fixed_accrual, "fixed")
        if self.basis_spread != 0.0:
            _periods(self.maturity - self.start, self.float_accrual, "float")


def _periods(tenor: float, accrual: float, leg: str) -> int:
    if accrual <= 0.0:
        raise ValueError(f"{leg} accrual must be positive")
    n = tenor / accrual
    n_round = round(n)
    if n_round < 1 or abs(n - n_round) > 1e-8 * max(1.0, abs(n)):
        raise ValueError(
            f"tenor {tenor} is not an integer number of {leg} accrual periods {accrual}")
    return n_round


def _merge_flows(pairs: Iterable[tuple[float, float]]) -> tuple[np.ndarray, np.ndarray]:
    """Sort (date, amount) pairs and merge dates that coincide within GRID_TOL."""
    items = sorted(pairs)
    dates: list[float] = []
    amounts: list[float] = []
    for d, a in items:
        if dates and d - dates[-1] <= GRID_TOL:
            amounts[-1] += a
        else:
            dates.append(d)
            amounts.append(a)
    return np.asarray(dates), np.asarray(amounts)


def build_bond(class_id: int, coupon_rate: float, frequency: int,
               maturity: float, dirty_price: float,
               id: str | None = None, exact: bool = False) -> Instrument:
    """Coupon bond with unit notional, coupons stepping back from maturity.

    A maturity shorter than one coupon period yields a single final flow.
    """
    if maturity <= 0.0:
        raise ValueError("maturity must be positive")
    if frequency not in (1, 2, 4, 12):
        raise ValueError("frequency must be one of 1, 2, 4, 12 payments/year")
    if coupon_rate < 0.0:
        raise ValueError("coupon rate must be nonnegative")
    step = 1.0 / frequency
    n_back = int(math.floor((maturity - GRID_TOL) / step))
    dates = maturity - step * np.arange(n_back, -1, -1)
    coupon = coupon_rate / frequency
    amounts = np.full(dates.size, coupon)
    amounts[-1] += 1.0
    return Instrument(class_id=class_id,
                      id=id or f"bond_{maturity:g}y_{coupon_rate:g}",
                      price=dirty_price, dates=dates, amounts=amounts,
                      exact=exact)


def build_swap(class_id: int, spec: SwapSpec,
               id: str | None = None, exact: bool = False) -> Instrument:
    """Cash-flow row of a par swap quote.

    Spot start: price 1, fixed flows Delta*R with the notional returned at
    maturity.  Forward start: price 0 and an extra -1 flow at the start date.
    A nonzero basis spread adds delta*s at every float date.
    """
    n = _periods(spec.maturity - spec.start, spec.fixed_accrual, "fixed")
    flows = [(spec.start + i * spec.fixed_accrual, spec.fixed_accrual * spec.fixed_rate)
             for i in range(1, n + 1)]
    flows.append((spec.maturity, 1.0))
    if spec.basis_spread != 0.0:
        m = _periods(spec.maturity - spec.start, spec.float_accrual, "float")
        flows.extend((spec.start + j * spec.float_accrual,
                      spec.float_accrual * spec.basis_spread)
                     for j in range(1, m + 1))
    if spec.start > 0.0:
        flows.append((spec.start, -1.0))
        price = 0.0
    else:
        price = 1.0
    dates, amounts = _merge_flows(flows)
    return Instrument(class_id=class_id,
                      id=id or f"swap_{spec.start:g}_{spec.maturity:g}y",
                      price=price, dates=dates, amounts=amounts, exact=exact)


def ytm_price(inst: Instrument, y: float) -> float:
    """Price of the instrument's flows under exponential discounting at yield y."""
    return float(np.exp(-y * inst.dates) @ inst.amounts)


def ytm_price_derivative(inst: Instrument, y: float) -> float:
    return float(-(inst.dates * inst.amounts) @ np.exp(-y * inst.dates))


def ytm_solve(inst: Instrument, tol: float = _YTM_TOL) -> float:
    """Yield y with |price(y) - market price| <= tol.

    Bracketed root find on [-1, 2], doubling the bracket on failure; a few
    Newton polish steps pin the residual below the requested tolerance.
    """

    def f(y: float) -> float:
        return ytm_price(inst, y) - inst.price

    lo, hi = _BRACKET
    for _ in range(_BRACKET_EXPANSIONS + 1):
        flo, fhi = f(lo), f(hi)
        if flo == 0.0:
            return lo
        if fhi == 0.0:
            return hi
        if flo * fhi < 0.0:
            break
        lo, hi = 2.0 * lo, 2.0 * hi
    else:
        raise NoYieldBracket(
            f"no sign change for {inst.id!r} in yield bracket [{lo}, {hi}]")

    y = brentq(f, lo, hi, xtol=1e-15, rtol=4.0 * np.finfo(float).eps)
    fy = f(y)
    for _ in range(8):
        if abs(fy) <= tol:
            break
        dpi = ytm_price_derivative(inst, y)
        if dpi == 0.0:
            break
        y -= fy / dpi
        fy = f(y)
    if abs(fy) > tol:
        raise NoYieldBracket(
            f"yield solve for {inst.id!r} stalled at residual {fy:.3e}")
    return float(y)


def duration_weight(inst: Instrument, total_count: int) -> float:
    """Duration-based pricing-error weight 1 / (M * price'(Y)^2).

    Evaluated at the market-implied yield, this makes squared price errors
    approximately comparable to squared yield errors across maturities.
    """
    y = ytm_solve(inst)
    dpi = ytm_price_derivative(inst, y)
    if dpi == 0.0:
        raise ValueError(f"flat yield-price profile for {inst.id!r}")
    return 1.0 / (total_count * dpi * dpi)


def fx_forward(x: float, spot: float, g_ab_at_x: float, g_b_at_x: float) -> float:
    """Forward exchange rate consistent with the cross-currency discount curve.

    F(x) = spot * g_{a:b}(x) / g_b(x); when the basis vanishes this is the
    textbook covered-interest-parity forward.
    """
    if g_b_at_x <= 0.0:
        raise NonPositiveDiscount(
            f"quote-currency discount factor {g_b_at_x} at maturity {x}")
    return spot * g_ab_at_x / g_b_at_x


@dataclass(frozen=True)
class CashFlowMatrix:
    """Per-class cash-flow blocks over the shared maturity grid.

    ``blocks[a]`` is the sparse M_a x N cash-flow matrix of class a, with each
    flow landing on exactly one grid column.  Immutable after assembly; use
    :func:`assemble` to construct.
    """

    grid: np.ndarray
    blocks: tuple
    prices: tuple
    weights: tuple
    exact: tuple
    instruments: tuple
    weight_mode: str

    @property
    def n_classes(self) -> int:
        return len(self.blocks)

    @property
    def n_grid(self) -> int:
        return self.grid.size

    @property
    def counts(self) -> list[int]:
        return [b.shape[0] for b in self.blocks]

    @property
    def total_count(self) -> int:
        return sum(self.counts)

    def row_slices(self) -> list[slice]:
        """Row ranges of each class in the stacked M-vector ordering."""
        out, start = [], 0
        for m in self.counts:
            out.append(slice(start, start + m))
            start += m
        return out

    @property
    def flat_prices(self) -> np.ndarray:
        if self.total_count == 0:
            return np.zeros(0)
        return np.concatenate([np.asarray(p) for p in self.prices])

    @property
    def flat_weights(self) -> np.ndarray:
        if self.total_count == 0:
            return np.zeros(0)
        return np.concatenate([np.asarray(w) for w in self.weights])

    @property
    def flat_exact(self) -> np.ndarray:
        if self.total_count == 0:
            return np.zeros(0, dtype=bool)
        return np.concatenate([np.asarray(e) for e in self.exact])

    @property
    def flat_instruments(self) -> list[Instrument]:
        return [inst for group in self.instruments for inst in group]

    def stacked(self) -> scipy.sparse.csr_matrix:
        """Block-diagonal M x (A*N) stacking of the class blocks."""
        return scipy.sparse.block_diag(self.blocks, format="csr")


def _dedup_grid(dates: np.ndarray) -> np.ndarray:
    """Sorted unique dates, merging values within GRID_TOL of a predecessor."""
    if dates.size == 0:
        return np.zeros(0)
    sorted_dates = np.sort(dates)
    keep = [sorted_dates[0]]
    for d in sorted_dates[1:]:
        if d - keep[-1] > GRID_TOL:
            keep.append(d)
    return np.asarray(keep)


def _grid_column(grid: np.ndarray, date: float) -> int:
    j = int(np.searchsorted(grid, date))
    for cand in (j - 1, j):
        if 0 <= cand < grid.size and abs(grid[cand] - date) <= GRID_TOL:
            return cand
    raise AssertionError(f"cash-flow date {date} missing from grid")


def assemble(instruments: Sequence[Instrument], weight_mode: str = "duration",
             n_classes: int | None = None) -> CashFlowMatrix:
    """Stack instruments into per-class cash-flow blocks on the union grid.

    Classes without instruments get zero-row blocks (the estimator then
    infers their curve entirely from the priors and the coupling).  The
    empty cross-section is allowed and yields M = 0.
    """
    if weight_mode not in ("duration", "unit"):
        raise ValueError(f"unknown weight mode {weight_mode!r}")
    instruments = list(instruments)
    if n_classes is None:
        n_classes = max((inst.class_id for inst in instruments), default=0) + 1
    for inst in instruments:
        if inst.class_id >= n_classes:
            raise ValueError(
                f"instrument {inst.id!r} has class {inst.class_id} >= {n_classes}")

    all_dates = (np.concatenate([inst.dates for inst in instruments])
                 if instruments else np.zeros(0))
    grid = _dedup_grid(all_dates)
    n = grid.size
    total = len(instruments)

    by_class: list[list[Instrument]] = [[] for _ in range(n_classes)]
    for inst in instruments:
        by_class[inst.class_id].append(inst)

    blocks, prices, weights, exact, groups = [], [], [], [], []
    for group in by_class:
        rows, cols, vals = [], [], []
        for i, inst in enumerate(group):
            for d, a in zip(inst.dates, inst.amounts):
                rows.append(i)
                cols.append(_grid_column(grid, d))
                vals.append(a)
        block = scipy.sparse.coo_matrix(
            (vals, (rows, cols)), shape=(len(group), n)).tocsr()
        if weight_mode == "duration":
            w = np.asarray([duration_weight(inst, total) for inst in group])
        else:
            w = np.ones(len(group))
        blocks.append(block)
        prices.append(np.asarray([inst.price for inst in group]))
        weights.append(w)
        exact.append(np.asarray([inst.exact for inst in group], dtype=bool))
        groups.append(tuple(group))

    grid.setflags(write=False)
    for arr in (*prices, *weights, *exact):
        arr.setflags(write=False)
    return CashFlowMatrix(grid=grid, blocks=tuple(blocks), prices=tuple(prices),
                          weights=tuple(weights), exact=tuple(exact),
                          instruments=tuple(groups), weight_mode=weight_mode)

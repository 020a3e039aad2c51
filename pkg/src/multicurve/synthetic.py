"""Synthetic two-class market cross-sections with known ground truth.

Test scaffolding: smooth factor-model yield curves (level / slope / hump)
with a smooth, nonzero spread between the two classes.  Bonds are sampled on
maturities to 30 years, swaps on a tenor menu to 50 years, and prices can
carry i.i.d. Gaussian noise.  Real market data enters the package only
through the CLI quote files; nothing here is calibrated to any dataset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .instruments import Instrument, SwapSpec, build_bond, build_swap

__all__ = ["SmoothYieldCurve", "SpreadYieldCurve", "SyntheticUniverse",
           "two_class_universe", "BOND_CLASS", "SWAP_CLASS"]

BOND_CLASS = 0
SWAP_CLASS = 1

DEFAULT_BOND_MATURITIES = (0.5, *range(1, 31))
DEFAULT_SWAP_TENORS = (0.25, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0,
                       9.0, 10.0, 12.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0,
                       45.0, 50.0)


@dataclass(frozen=True)
class SmoothYieldCurve:
    """Three-factor smooth zero-yield curve.

    y(x) = level + slope * d(x) + hump * (d(x) - e^{-x/tau}), where
    d(x) = (1 - e^{-x/tau}) / (x/tau) decays from 1 to 0.
    """

    level: float = 0.035
    slope: float = -0.015
    hump: float = 0.010
    tau: float = 3.0

    def yield_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = x / self.tau
        with np.errstate(divide="ignore", invalid="ignore"):
            decay = np.where(u > 0.0, (1.0 - np.exp(-u)) / np.where(u > 0.0, u, 1.0), 1.0)
        return self.level + self.slope * decay + self.hump * (decay - np.exp(-u))

    def discount(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.exp(-self.yield_at(x) * x)


@dataclass(frozen=True)
class SpreadYieldCurve:
    """A base curve shifted by a smooth maturity-dependent yield spread.

    spread(x) = short + (long - short) * (1 - e^{-x/tau_spread}); negative
    values make this class richer (lower yields) than the base.
    """

    base: SmoothYieldCurve
    short: float = -0.0015
    long: float = -0.0025
    tau_spread: float = 15.0

    def yield_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        spread = self.short + (self.long - self.short) * (1.0 - np.exp(-x / self.tau_spread))
        return self.base.yield_at(x) + spread

    def discount(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.exp(-self.yield_at(x) * x)


def _round_coupon(rate: float) -> float:
    """Round to eighth-of-a-percent coupon steps, floored at zero."""
    return max(0.0, round(rate / 0.00125) * 0.00125)


def _par_swap_rate(curve, maturity: float, accrual: float) -> float:
    n = round(maturity / accrual)
    dates = accrual * np.arange(1, n + 1)
    annuity = accrual * float(np.sum(curve.discount(dates)))
    return (1.0 - float(curve.discount(maturity))) / annuity


def _accrual_for(tenor: float) -> float:
    """Largest standard accrual period dividing the tenor evenly."""
    for accrual in (1.0, 0.5, 0.25):
        n = tenor / accrual
        if n >= 1.0 and abs(n - round(n)) < 1e-9:
            return accrual
    return tenor


@dataclass(frozen=True)
class SyntheticUniverse:
    """Instruments plus the curves that generated them."""

    instruments: tuple
    bond_curve: SpreadYieldCurve
    swap_curve: SmoothYieldCurve
    noise_bp: float
    seed: int

    def true_discount(self, class_id: int, x):
        curve = self.bond_curve if class_id == BOND_CLASS else self.swap_curve
        return curve.discount(x)

    def true_yield(self, class_id: int, x):
        curve = self.bond_curve if class_id == BOND_CLASS else self.swap_curve
        return curve.yield_at(x)


def two_class_universe(seed: int = 0, noise_bp: float = 1.0,
                       bond_maturities=DEFAULT_BOND_MATURITIES,
                       swap_tenors=DEFAULT_SWAP_TENORS,
                       swap_curve: SmoothYieldCurve | None = None,
                       spread: tuple[float, float, float] | None = None) -> SyntheticUniverse:
    """Generate a bond class and a swap class priced off smoothly related curves.

    Bonds pay semiannual coupons rounded to realistic steps; swaps are
    spot-starting at their true par rates (annual fixed legs, single-period
    legs below one year).  ``noise_bp`` is the standard deviation of i.i.d.
    additive price noise in basis points of notional.
    """
    rng = np.random.default_rng(seed)
    swap_curve = swap_curve or SmoothYieldCurve()
    if spread is None:
        bond_curve = SpreadYieldCurve(base=swap_curve)
    else:
        short, long, tau_spread = spread
        bond_curve = SpreadYieldCurve(base=swap_curve, short=short, long=long,
                                      tau_spread=tau_spread)
    noise_scale = noise_bp * 1e-4

    instruments = []
    for maturity in bond_maturities:
        maturity = float(maturity)
        coupon = _round_coupon(float(bond_curve.yield_at(maturity)))
        clean = build_bond(BOND_CLASS, coupon, 2, maturity, dirty_price=0.0,
                           id=f"bond_{maturity:g}y")
        price = float(clean.amounts @ bond_curve.discount(clean.dates))
        if noise_scale > 0.0:
            price += noise_scale * rng.standard_normal()
        instruments.append(build_bond(BOND_CLASS, coupon, 2, maturity,
                                      dirty_price=price, id=f"bond_{maturity:g}y"))

    for tenor in swap_tenors:
        tenor = float(tenor)
        accrual = _accrual_for(tenor)
        rate = _par_swap_rate(swap_curve, tenor, accrual)
        spec = SwapSpec(start=0.0, maturity=tenor, fixed_rate=rate,
                        fixed_accrual=accrual, float_accrual=accrual)
        swap = build_swap(SWAP_CLASS, spec, id=f"swap_{tenor:g}y")
        if noise_scale > 0.0:
            noisy_price = swap.price + noise_scale * rng.standard_normal()
            swap = Instrument(class_id=swap.class_id, id=swap.id,
                              price=noisy_price, dates=swap.dates,
                              amounts=swap.amounts)
        instruments.append(swap)

    return SyntheticUniverse(instruments=tuple(instruments),
                             bond_curve=bond_curve, swap_curve=swap_curve,
                             noise_bp=noise_bp, seed=seed)

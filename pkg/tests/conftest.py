"""Shared helpers: random well-scaled estimation instances for cross-checks."""

import dataclasses

import numpy as np

import multicurve as mc


def random_kernel(rng, n_classes=None, *, alpha_range=(0.05, 1.0),
                  gamma_range=(0.05, 3.0), theta_range=(0.0, 2.0)):
    """Random separable kernel with moderate scales (keeps both solver routes
    well conditioned, so agreement checks measure algebra, not roundoff)."""
    a = n_classes if n_classes is not None else int(rng.integers(1, 4))
    gammas = rng.uniform(*gamma_range, size=a)
    thetas = np.zeros((a, a))
    for i in range(a):
        for j in range(i + 1, a):
            if rng.random() < 0.7:
                thetas[i, j] = thetas[j, i] = rng.uniform(*theta_range)
    alpha = rng.uniform(*alpha_range)
    return mc.make_kernel(alpha, gammas, thetas)


def random_instruments(rng, n_classes, n_instruments, *, max_maturity=8.0):
    """Bonds with prices generated from a random flat yield plus small noise."""
    insts = []
    for i in range(n_instruments):
        class_id = int(rng.integers(0, n_classes))
        maturity = float(rng.uniform(0.5, max_maturity))
        coupon = float(rng.uniform(0.0, 0.06))
        freq = int(rng.choice([1, 2]))
        bond = mc.build_bond(class_id, coupon, freq, maturity, 0.0, id=f"inst{i}")
        y = rng.uniform(0.0, 0.06)
        price = float(bond.amounts @ np.exp(-y * bond.dates))
        price *= 1.0 + 2e-4 * rng.standard_normal()
        insts.append(dataclasses.replace(bond, price=price))
    return insts


def random_instance(rng, *, n_classes=None, max_instruments=8,
                    weight_modes=("unit", "duration")):
    """A (CashFlowMatrix, EstimatorConfig) pair for solver cross-checks."""
    kernel = random_kernel(rng, n_classes)
    a = kernel.n_classes
    m = int(rng.integers(1, max_instruments + 1))
    insts = random_instruments(rng, a, m)
    mode = str(rng.choice(list(weight_modes)))
    cfm = mc.assemble(insts, mode, n_classes=a)
    cfg = mc.EstimatorConfig(kernel=kernel, lam=float(rng.uniform(0.3, 3.0)))
    return cfm, cfg

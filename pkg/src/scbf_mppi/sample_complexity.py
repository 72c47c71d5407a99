"""Sample-size bounds for the path-integral estimators.

``n1_bound`` is the Hoeffding count for the weight mean ``E[exp(-S/lambda)]``;
``n2_bound`` is the Chebyshev count for the weighted control update, driven
by the variance of the sampled perturbations.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .sde_dynamics import Array


class AssumptionViolated(ValueError):
    """The weight-mean estimate does not exceed the first error bound."""


@dataclass(frozen=True)
class ComplexityInputs:
    eps1: float = 0.05
    eps2: float = 0.1
    rho1: float = 0.05
    rho2: float = 0.1
    temperature: float = 1.0

    def __post_init__(self):
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise ValueError("error bounds must be positive")
        if not (0 < self.rho1 <= 2 and 0 < self.rho2 <= 1):
            raise ValueError("risk probabilities out of range")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class EmpiricalStats:
    e1_hat: float
    var_du: tuple[float, ...]
    n_used: int


@dataclass(frozen=True)
class ComplexityReport:
    n1: int
    n2: int
    inputs: ComplexityInputs
    stats: EmpiricalStats
    n2_per_dim: tuple[int, ...] = ()
    # optimistic companion using (e1_hat + eps1); diagnostic only
    n2_optimistic: Optional[int] = None
    n: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "n", max(self.n1, self.n2))

    def to_dict(self) -> dict:
        return asdict(self)


def n1_bound(eps1: float, rho1: float) -> int:
    """``ceil(-log(rho1 / 2) / eps1^2)``, floored at zero."""
    if eps1 <= 0 or not 0 < rho1 <= 2:
        raise ValueError("need eps1 > 0 and 0 < rho1 <= 2")
    return max(0, math.ceil(-math.log(rho1 / 2.0) / eps1**2))


def n2_bound(eps1: float, eps2: float, rho2: float, var_du, e1_hat: float) -> int:
    """``ceil(4 Var[du] / (rho2 eps2^2) / (e1_hat - eps1)^2)``.

    A vector ``var_du`` is summed: for a random vector the Chebyshev bound
    on ``|du - E du|`` uses ``E|du - E du|^2 = tr Cov[du]``.
    """
    if e1_hat - eps1 <= 0:
        raise AssumptionViolated(f"e1_hat={e1_hat:.4g} must exceed eps1={eps1:.4g}")
    var = np.atleast_1d(np.asarray(var_du, dtype=float))
    if np.any(var < 0):
        raise ValueError("variance must be nonnegative")
    return _n2(eps1, eps2, rho2, float(var.sum()), e1_hat)


def _n2(eps1, eps2, rho2, var, e1_hat) -> int:
    if var < 0:
        raise ValueError("variance must be nonnegative")
    value = 4.0 * var / (rho2 * eps2**2) / (e1_hat - eps1) ** 2
    # guard against 19754.000000000004-style round-up
    return math.ceil(round(value, 9))


def estimate_e1(costs: Array, temperature: float) -> float:
    """Sample mean of ``exp(-S / lambda)``."""
    costs = np.asarray(costs, dtype=float)
    if costs.size == 0:
        raise ValueError("need at least one cost")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return float(np.mean(np.exp(-costs / temperature)))


def estimate_var_du(perturbations: Array) -> Array:
    """Unbiased per-dimension variance of ``(..., m)`` perturbation draws."""
    flat = np.asarray(perturbations, dtype=float)
    flat = flat.reshape(-1, flat.shape[-1]) if flat.ndim > 1 else flat[:, None]
    if len(flat) < 2:
        raise ValueError("need at least two draws")
    return flat.var(axis=0, ddof=1)


def complexity_report(costs: Array, perturbations: Array, inputs: ComplexityInputs) -> ComplexityReport:
    e1 = estimate_e1(costs, inputs.temperature)
    var = estimate_var_du(perturbations)
    stats = EmpiricalStats(e1, tuple(float(v) for v in var), int(np.size(costs)))
    per_dim = tuple(n2_bound(inputs.eps1, inputs.eps2, inputs.rho2, v, e1) for v in var)
    optimistic = _n2(-inputs.eps1, inputs.eps2, inputs.rho2, float(var.sum()), e1)
    return ComplexityReport(
        n1=n1_bound(inputs.eps1, inputs.rho1),
        n2=n2_bound(inputs.eps1, inputs.eps2, inputs.rho2, var, e1),
        inputs=inputs,
        stats=stats,
        n2_per_dim=per_dim,
        n2_optimistic=optimistic,
    )


def _var_with_se(z: Array):
    z = np.asarray(z, dtype=float)
    n = len(z)
    var = z.var(ddof=1)
    c = z - z.mean()
    mu4 = np.mean(c**4)
    se = math.sqrt(max(mu4 - var**2, 0.0) / n)
    return var, se


def product_variance_sides(x: Array, y: Array):
    """Empirical ``Var[XY]``, its standard error, and the product-variance bound."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("need paired 1-d samples")
    lhs, se = _var_with_se(x * y)
    vx, vy = x.var(ddof=1), y.var(ddof=1)
    rhs = 2 * vx * vy + 2 * vy * x.mean() ** 2
    return lhs, se, rhs


def lemma1_check(x: Array, y: Array, sigmas: float = 3.0) -> bool:
    """``Var[XY] <= 2 Var[X] Var[Y] + 2 Var[Y] E[X]^2`` up to Monte Carlo slack."""
    lhs, se, rhs = product_variance_sides(x, y)
    return bool(lhs <= rhs + sigmas * se)


def product_variance_second_moment_check(x: Array, y: Array, sigmas: float = 3.0) -> bool:
    """Same check with ``E[Y^2]`` in place of ``Var[Y]`` in the first term.

    This is the bound ``Var[XY] <= 2 Var[X] E[Y^2] + 2 Var[Y] E[X]^2``, which
    holds for independent pairs; the plain form additionally needs
    ``Var[X] E[Y]^2 <= Var[X] Var[Y] + Var[Y] E[X]^2``.
    """
    lhs, se, _ = product_variance_sides(x, y)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rhs = 2 * x.var(ddof=1) * np.mean(y * y) + 2 * y.var(ddof=1) * x.mean() ** 2
    return bool(lhs <= rhs + sigmas * se)

"""Barrier functions, stochastic CBF terms and linear chance-constraint data.

For a barrier ``h`` and dynamics ``dx = (f + g u) dt + sigma dW`` the
stochastic CBF condition is affine in ``u``::

    A u >= b,   A = dh/dx g,   b = -h - dh/dx f - 1/2 tr(sigma' H sigma)

Barrier closures are batch-aware: ``h`` maps ``(..., n) -> (...)``, ``grad``
maps to ``(..., n)`` and ``hess`` to ``(..., n, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import sympy as sp
from scipy.stats import norm

from .sde_dynamics import Array, DynamicsModel

MAX_LIFT_ORDER = 2


class UnsupportedOrderError(ValueError):
    """Requested lift order needs derivatives that are not available."""


@dataclass(frozen=True)
class BarrierFunction:
    h: Callable[[Array], Array]
    grad: Callable[[Array], Array]
    hess: Callable[[Array], Array]
    name: str = "h"
    expr: Optional[sp.Expr] = field(default=None, compare=False)


@dataclass(frozen=True)
class ConstraintCoeffs:
    A: Array
    b: float

    def __post_init__(self):
        A = np.atleast_1d(np.asarray(self.A, dtype=float))
        if not (np.all(np.isfinite(A)) and np.isfinite(self.b)):
            raise ValueError("constraint coefficients must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", float(self.b))


@dataclass(frozen=True)
class SafetyParams:
    """Chance-constraint settings.

    ``alpha`` defaults to the one-sided standard-normal quantile of
    ``1 - delta``.  ``alpha_form="variance"`` multiplies it by ``A Sigma A'``;
    ``"std"`` multiplies it by ``sqrt(A Sigma A')``.
    """

    delta: float = 0.003
    alpha: Optional[float] = None
    alpha_form: str = "variance"

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.alpha_form not in ("variance", "std"):
            raise ValueError(f"alpha_form must be 'variance' or 'std', got {self.alpha_form!r}")
        if self.alpha is None:
            object.__setattr__(self, "alpha", float(norm.ppf(1.0 - self.delta)))
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")


@dataclass(frozen=True)
class HighOrderChain:
    levels: tuple[BarrierFunction, ...]

    @property
    def top(self) -> BarrierFunction:
        return self.levels[-1]

    @property
    def order(self) -> int:
        return len(self.levels) - 1


def _array_fn(exprs: Sequence[sp.Expr], states: Sequence[sp.Symbol], shape: tuple[int, ...]):
    """Lambdify a flat list of expressions into a broadcasting array function."""
    fns = [sp.lambdify(states, e, modules="numpy") for e in exprs]

    def fn(x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        args = [x[..., i] for i in range(x.shape[-1])]
        batch = x.shape[:-1]
        out = np.empty(batch + (len(fns),))
        for k, f in enumerate(fns):
            out[..., k] = np.broadcast_to(np.asarray(f(*args), dtype=float), batch)
        return out.reshape(batch + shape)

    return fn


def barrier_from_expr(expr: sp.Expr, states: Sequence[sp.Symbol], name: str = "h") -> BarrierFunction:
    """Barrier with exact derivatives generated from a sympy expression."""
    n = len(states)
    grad = [sp.diff(expr, s) for s in states]
    hess = [sp.diff(g, s) for g in grad for s in states]
    h_fn = _array_fn([expr], states, ())
    return BarrierFunction(h_fn, _array_fn(grad, states, (n,)), _array_fn(hess, states, (n, n)), name, expr)


def narrow_passage_barriers(width: float = 1.0, frequency: float = 1.0) -> list[BarrierFunction]:
    """Lower and upper walls ``y >= sin(k x)`` and ``y <= sin(k x) + width``."""
    k = float(frequency)
    px, py, th = sp.symbols("x y theta", real=True)

    def h_lower(x):
        x = np.asarray(x, dtype=float)
        return x[..., 1] - np.sin(k * x[..., 0])

    def grad_lower(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        out[..., 0] = -k * np.cos(k * x[..., 0])
        out[..., 1] = 1.0
        return out

    def hess_lower(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (3,))
        out[..., 0, 0] = k * k * np.sin(k * x[..., 0])
        return out

    def h_upper(x):
        return width - h_lower(x)

    def grad_upper(x):
        return -grad_lower(x)

    def hess_upper(x):
        return -hess_lower(x)

    wall = sp.sin(sp.nsimplify(k) * px)
    return [
        BarrierFunction(h_lower, grad_lower, hess_lower, "h1", py - wall),
        BarrierFunction(h_upper, grad_upper, hess_upper, "h2", wall + sp.nsimplify(width) - py),
    ]


def double_integrator_barrier(limit: float = 1.0) -> BarrierFunction:
    """Position limit ``x <= limit`` for the double integrator."""
    px, pv = sp.symbols("x v", real=True)
    return barrier_from_expr(sp.nsimplify(limit) - px, (px, pv), name="position_limit")


def barrier_set(name: str, **params) -> list[BarrierFunction]:
    if name == "narrow_passage":
        return narrow_passage_barriers(**params)
    if name == "double_integrator_demo":
        return [double_integrator_barrier(**params)]
    raise KeyError(f"unknown barrier set {name!r}")


def is_safe(x: Array, barriers: Sequence[BarrierFunction]):
    """True where every barrier is nonnegative (the boundary counts as safe)."""
    x = np.asarray(x, dtype=float)
    safe = np.ones(x.shape[:-1], dtype=bool)
    for bf in barriers:
        safe &= bf.h(x) >= 0
    return safe if safe.shape else bool(safe)


def _ito_terms(model: DynamicsModel, bf: BarrierFunction, x: Array):
    grad = bf.grad(x)
    sigma = model.diffusion(x)
    trace = np.einsum("...ki,...kl,...li->...", sigma, bf.hess(x), sigma)
    lf = np.einsum("...i,...i->...", grad, model.drift(x))
    lg = np.einsum("...i,...ij->...j", grad, model.input_map(x))
    return lf, lg, 0.5 * trace


def scbf_margin(model: DynamicsModel, bf: BarrierFunction, x: Array, u: Array):
    """``L_f h + L_g h u + tr(sigma' H sigma)/2 + h``; nonnegative iff the SCBF holds."""
    x = model.check_state(x)
    u = model.check_control(u)
    lf, lg, ito = _ito_terms(model, bf, x)
    return lf + np.einsum("...j,...j->...", lg, u) + ito + bf.h(x)


def constraint_arrays(model: DynamicsModel, barriers: Sequence[BarrierFunction], x: Array):
    """Batched ``(A, b)``: shapes ``(..., J, m)`` and ``(..., J)``."""
    x = model.check_state(x)
    A, b = [], []
    for bf in barriers:
        lf, lg, ito = _ito_terms(model, bf, x)
        A.append(lg)
        b.append(-bf.h(x) - lf - ito)
    return np.stack(A, axis=-2), np.stack(b, axis=-1)


def constraint_coeffs(model: DynamicsModel, bf: BarrierFunction, x: Array) -> ConstraintCoeffs:
    A, b = constraint_arrays(model, [bf], np.asarray(x, dtype=float))
    return ConstraintCoeffs(A[0], float(b[0]))


def high_order_lift(model: DynamicsModel, bf: BarrierFunction, r: int) -> HighOrderChain:
    """Chain ``h^0 .. h^r`` with ``h^{k+1} = dh^k/dx f + tr(sigma' H^k sigma)/2 + h^k``."""
    if r < 0:
        raise ValueError("order must be nonnegative")
    if r == 0:
        return HighOrderChain((bf,))
    if r > MAX_LIFT_ORDER:
        raise UnsupportedOrderError(f"lifting is supported up to order {MAX_LIFT_ORDER}, got {r}")
    if bf.expr is None or model.symbolic is None:
        raise UnsupportedOrderError("lifting needs symbolic forms of the barrier and the dynamics")
    sym = model.symbolic
    states = sym.states
    levels = [bf]
    expr = bf.expr
    for k in range(r):
        grad = sp.Matrix([[sp.diff(expr, s) for s in states]])
        hess = sp.hessian(expr, states)
        expr = sp.simplify((grad * sym.drift)[0, 0] + sp.Rational(1, 2) * (sym.diffusion.T * hess * sym.diffusion).trace() + expr)
        levels.append(barrier_from_expr(expr, states, name=f"{bf.name}^{k + 1}"))
    return HighOrderChain(tuple(levels))


def high_order_coeffs(model: DynamicsModel, chain: HighOrderChain, x: Array) -> ConstraintCoeffs:
    """Chance-constraint data of the top level of ``chain``."""
    if not chain.levels:
        raise ValueError("empty chain")
    return constraint_coeffs(model, chain.top, x)


def lift_condition_holds(model: DynamicsModel, chain: HighOrderChain, x: Array) -> bool:
    """Diagnostic: ``dh^k/dx g(x) >= 0`` for every level below the top.

    The lifted guarantee assumes this along the trajectory; it is reported,
    never enforced.
    """
    x = model.check_state(x)
    for level in chain.levels[:-1]:
        lg = level.grad(x) @ model.input_map(x)
        if np.any(lg < 0):
            return False
    return True


def fd_gradient(h: Callable[[Array], Array], x: Array, eps: float = 1e-6) -> Array:
    """Central-difference gradient; for validation only."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = eps
        out[i] = (h(x + e) - h(x - e)) / (2 * eps)
    return out


def fd_hessian(grad: Callable[[Array], Array], x: Array, eps: float = 1e-5) -> Array:
    """Central differences of an analytic gradient; for validation only."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    out = np.empty((n, n))
    for i in range(n):
        e = np.zeros_like(x)
        e[i] = eps
        out[:, i] = (grad(x + e) - grad(x - e)) / (2 * eps)
    return 0.5 * (out + out.T)

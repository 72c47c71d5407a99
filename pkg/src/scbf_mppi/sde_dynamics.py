"""Control-affine SDE models and Euler-Maruyama rollouts.

Every model closure is batch-aware: it accepts states shaped ``(..., n)`` and
returns ``(..., n)`` for the drift, ``(..., n, m)`` for the input map and
``(..., n, n)`` for the diffusion.  The controller relies on this to roll out
all samples of a batch in one vectorized pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import sympy as sp
from numpy.typing import NDArray

Array = NDArray[np.float64]

DEFAULT_DT = 0.05


class DimensionError(ValueError):
    """Input dimensions disagree with the model."""


class NumericOverflowError(FloatingPointError):
    """An integration step produced a non-finite state."""


@dataclass(frozen=True)
class SymbolicDynamics:
    """Sympy form of ``f``, ``g`` and ``sigma``; needed for barrier lifting."""

    states: tuple[sp.Symbol, ...]
    drift: sp.Matrix
    input_map: sp.Matrix
    diffusion: sp.Matrix


@dataclass(frozen=True)
class DynamicsModel:
    n: int
    m: int
    drift: Callable[[Array], Array]
    input_map: Callable[[Array], Array]
    diffusion: Callable[[Array], Array]
    name: str = "custom"
    symbolic: Optional[SymbolicDynamics] = field(default=None, compare=False)

    def check_state(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.n,):
            raise DimensionError(f"{self.name}: state has shape {x.shape}, expected (..., {self.n})")
        return x

    def check_control(self, u: Array) -> Array:
        u = np.asarray(u, dtype=float)
        if u.shape[-1:] != (self.m,):
            raise DimensionError(f"{self.name}: control has shape {u.shape}, expected (..., {self.m})")
        return u


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed rollout record.

    ``states`` has one more row than ``controls``; ``perturbations`` holds the
    sampled control variations that were added to ``controls``.
    """

    states: Array
    controls: Array
    perturbations: Array
    dt: float

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if len(self.states) != len(self.controls) + 1:
            raise ValueError("states must have exactly one more entry than controls")
        if len(self.perturbations) != len(self.controls):
            raise ValueError("perturbations and controls must have equal length")

    @property
    def horizon(self) -> int:
        return len(self.controls)


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``, e.g. (master, trial, step)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def drift_eval(model: DynamicsModel, x: Array, u: Array) -> Array:
    """Deterministic vector field ``f(x) + g(x) u``."""
    x = model.check_state(x)
    u = model.check_control(u)
    return model.drift(x) + np.einsum("...ij,...j->...i", model.input_map(x), u)


def em_step(model: DynamicsModel, x: Array, u: Array, dt: float, noise: Array) -> Array:
    """One Euler-Maruyama step driven by a standard-normal ``noise`` draw."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = model.check_state(x)
    noise = np.asarray(noise, dtype=float)
    if noise.shape[-1:] != (model.n,):
        raise DimensionError(f"noise has shape {noise.shape}, expected (..., {model.n})")
    x_next = (
        x
        + drift_eval(model, x, u) * dt
        + np.einsum("...ij,...j->...i", model.diffusion(x), noise) * np.sqrt(dt)
    )
    if not np.all(np.isfinite(x_next)):
        raise NumericOverflowError(f"non-finite state after step from {x!r}")
    return x_next


def rollout(
    model: DynamicsModel,
    x0: Array,
    controls: Array,
    perturbations: Array,
    dt: float,
    rng: np.random.Generator,
) -> Trajectory:
    """Integrate ``T`` steps with effective input ``controls + perturbations``.

    The process noise for all steps is drawn from ``rng`` up front as a
    ``(T, n)`` block, so the result depends only on the generator state.
    """
    controls = np.atleast_2d(model.check_control(controls))
    perturbations = np.atleast_2d(model.check_control(perturbations))
    if len(controls) != len(perturbations) or len(controls) < 1:
        raise ValueError("controls and perturbations must have equal length T >= 1")
    horizon = len(controls)
    noise = rng.standard_normal((horizon, model.n))
    states = np.empty((horizon + 1, model.n))
    states[0] = model.check_state(x0)
    for t in range(horizon):
        states[t + 1] = em_step(model, states[t], controls[t] + perturbations[t], dt, noise[t])
    return Trajectory(states=states, controls=controls.copy(), perturbations=perturbations.copy(), dt=dt)


def _unicycle_g(x: Array) -> Array:
    theta = x[..., 2]
    g = np.zeros(x.shape[:-1] + (3, 2))
    g[..., 0, 0] = np.cos(theta)
    g[..., 1, 0] = np.sin(theta)
    g[..., 2, 1] = 1.0
    return g


def unicycle_model(
    sigma_scale: float = 1.0,
    noise: str = "isotropic",
    temperature: float = 1.0,
    control_weight: Optional[Array] = None,
) -> DynamicsModel:
    """Planar unicycle with state (x, y, theta) and input (v, omega).

    ``noise="isotropic"`` uses ``sigma = sigma_scale * I``.  With
    ``noise="control_channel"`` the Wiener increments get the path-integral
    covariance ``lambda * g R^-1 g^T``, i.e. the effective diffusion is
    ``sigma_scale * sqrt(lambda) * g(x) R^{-1/2}`` padded to a square matrix.
    """
    if noise not in ("isotropic", "control_channel"):
        raise ValueError(f"unknown noise model {noise!r}")
    R = np.eye(2) if control_weight is None else np.asarray(control_weight, dtype=float)
    # R^{-1/2} via eigendecomposition; R is symmetric positive definite
    evals, evecs = np.linalg.eigh(R)
    r_inv_half = evecs @ np.diag(evals**-0.5) @ evecs.T
    channel = sigma_scale * np.sqrt(temperature) * r_inv_half

    def drift(x: Array) -> Array:
        return np.zeros_like(x)

    if noise == "isotropic":

        def diffusion(x: Array) -> Array:
            return np.broadcast_to(sigma_scale * np.eye(3), x.shape[:-1] + (3, 3)).copy()

    else:

        def diffusion(x: Array) -> Array:
            out = np.zeros(x.shape[:-1] + (3, 3))
            out[..., :, :2] = _unicycle_g(x) @ channel
            return out

    px, py, th = sp.symbols("x y theta", real=True)
    g_sym = sp.Matrix([[sp.cos(th), 0], [sp.sin(th), 0], [0, 1]])
    if noise == "isotropic":
        sigma_sym = sp.eye(3) * sp.nsimplify(sigma_scale)
    else:
        sigma_sym = (g_sym * sp.Matrix(channel)).row_join(sp.zeros(3, 1))
    symbolic = SymbolicDynamics((px, py, th), sp.zeros(3, 1), g_sym, sigma_sym)
    return DynamicsModel(3, 2, drift, _unicycle_g, diffusion, name=f"unicycle[{noise}]", symbolic=symbolic)


def double_integrator_model(sigma_scale: float = 0.0) -> DynamicsModel:
    """``x' = v, v' = u`` with optional isotropic diffusion."""

    def drift(x: Array) -> Array:
        out = np.zeros_like(x)
        out[..., 0] = x[..., 1]
        return out

    def input_map(x: Array) -> Array:
        g = np.zeros(x.shape[:-1] + (2, 1))
        g[..., 1, 0] = 1.0
        return g

    def diffusion(x: Array) -> Array:
        return np.broadcast_to(sigma_scale * np.eye(2), x.shape[:-1] + (2, 2)).copy()

    px, pv = sp.symbols("x v", real=True)
    symbolic = SymbolicDynamics(
        (px, pv),
        sp.Matrix([pv, 0]),
        sp.Matrix([0, 1]),
        sp.eye(2) * sp.nsimplify(sigma_scale),
    )
    return DynamicsModel(2, 1, drift, input_map, diffusion, name="double_integrator", symbolic=symbolic)

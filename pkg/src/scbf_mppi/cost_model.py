"""State, running and trajectory costs for path-integral sampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .sde_dynamics import Array, Trajectory


def zero_terminal(x: Array) -> Array:
    return np.zeros(np.shape(x)[:-1])


@dataclass(frozen=True)
class CostSpec:
    """Quadratic goal cost plus indicator penalty, and the control-cost terms.

    ``variance_ratio`` is the ratio between the covariance of the injected
    sampling noise and the covariance of the system noise.
    """

    goal: Array = field(default_factory=lambda: np.array([4.0, 0.5]))
    state_weight: float = 1.0
    obstacle_penalty: float = 1000.0
    control_weight: Array = field(default_factory=lambda: np.eye(2))
    temperature: float = 1.0
    variance_ratio: float = 1.0
    terminal: Callable[[Array], Array] = zero_terminal

    def __post_init__(self):
        R = np.asarray(self.control_weight, dtype=float)
        if not np.allclose(R, R.T):
            raise ValueError("control_weight must be symmetric")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("control_weight must be positive definite")
        if self.temperature <= 0 or self.variance_ratio <= 0:
            raise ValueError("temperature and variance_ratio must be positive")
        if self.state_weight < 0 or self.obstacle_penalty < 0:
            raise ValueError("cost weights must be nonnegative")
        object.__setattr__(self, "control_weight", R)
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float))


def state_cost(spec: CostSpec, x: Array, safe) -> Array:
    """``state_weight * |(x, y) - goal|^2 + penalty * [not safe]``; batch-aware."""
    x = np.asarray(x, dtype=float)
    dist2 = np.sum((x[..., :2] - spec.goal) ** 2, axis=-1)
    return spec.state_weight * dist2 + spec.obstacle_penalty * (1.0 - np.asarray(safe, dtype=float))


def control_cost(spec: CostSpec, v: Array, eps: Array) -> Array:
    v = np.asarray(v, dtype=float)
    eps = np.asarray(eps, dtype=float)
    R = spec.control_weight
    Reps = eps @ R  # R symmetric, so eps R == (R eps)^T
    quad_eps = np.sum(Reps * eps, axis=-1)
    cross = np.sum(Reps * v, axis=-1)
    quad_v = np.sum((v @ R) * v, axis=-1)
    return 0.5 * (1.0 - 1.0 / spec.variance_ratio) * quad_eps + cross + 0.5 * quad_v


def running_cost(spec: CostSpec, x: Array, safe, v: Array, eps: Array) -> Array:
    """Stage cost ``q(x) + (1 - 1/nu)/2 e'Re + v'Re + v'Rv/2``."""
    return state_cost(spec, x, safe) + control_cost(spec, v, eps)


def trajectory_cost(spec: CostSpec, traj: Trajectory, safeness) -> float:
    """Terminal cost plus the sum of stage costs.

    Stage ``t`` is charged at the post-step state ``states[t + 1]`` with
    nominal input ``controls[t]`` and perturbation ``perturbations[t]``, so
    ``safeness[0]`` (the start state) never contributes.
    """
    safeness = np.asarray(safeness, dtype=bool)
    if len(safeness) != len(traj.states):
        raise ValueError("safeness must have one flag per state")
    total = float(spec.terminal(traj.states[-1]))
    if traj.horizon:
        stages = running_cost(spec, traj.states[1:], safeness[1:], traj.controls, traj.perturbations)
        for c in stages:  # fixed-order summation
            total += float(c)
    return total

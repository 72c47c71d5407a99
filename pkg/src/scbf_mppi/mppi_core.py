"""Model predictive path integral control, plain and SCBF-shaped.

One control step rolls out ``K`` perturbed trajectories over a horizon of
``T`` steps, weights them by ``exp(-(S - min S) / lambda)``, adds the
weighted perturbations to the schedule, emits the first input and shifts
the schedule.  In ``scbf`` mode every (sample, timestep) perturbation is
drawn from the distribution returned by the chance-constrained shaper at
that sample's current state.

Randomness: each control step draws one ``(K, T, m)`` block of control
noise and one ``(K, T, n)`` block of process noise from a generator keyed by
``(seed, stream, step)``.  Row ``i`` of each block belongs to trajectory
``i``, so splitting the batch can never change a trajectory's draws.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .barrier import BarrierFunction, ConstraintCoeffs, SafetyParams, constraint_arrays, is_safe
from .cost_model import CostSpec, running_cost
from .dist_shaper import GaussianDist, ShaperProblem, ShapeStatus, shape, shape_batch
from .sde_dynamics import Array, DynamicsModel, Trajectory, em_step, substream

log = logging.getLogger(__name__)

MODES = ("plain", "scbf")


@dataclass(frozen=True)
class MppiConfig:
    samples: int = 500
    horizon: int = 20
    dt: float = 0.05
    temperature: float = 1.0
    nominal_sigma: tuple[float, ...] = (1.0, 1.0)
    mode: str = "plain"
    seed: int = 0
    shaper_tolerance: float = 1e-8
    # one shaping solve per timestep at the unperturbed nominal state
    shared_shaping: bool = False
    # reweight shaped samples by N(0, S0) / N(mu_s, S_s); off reproduces the plain update law
    importance_ratio: bool = False
    rollout_noise: bool = True
    u_init: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.samples < 1 or self.horizon < 1:
            raise ValueError("samples and horizon must be at least 1")
        if self.dt <= 0 or self.temperature <= 0:
            raise ValueError("dt and temperature must be positive")
        if any(s < 0 for s in self.nominal_sigma):
            raise ValueError("nominal_sigma entries must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def sigma0(self) -> Array:
        return np.asarray(self.nominal_sigma, dtype=float)


@dataclass
class RolloutBatch:
    controls: Array          # (T, m) nominal schedule used for the batch
    states: Array            # (K, T+1, n)
    perturbations: Array     # (K, T, m)
    costs: Array             # (K,)
    shaped: Array            # (K, T) bool
    infeasible: Array        # (K, T) bool
    dt: float

    @property
    def size(self) -> int:
        return len(self.costs)

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(self.states[i], self.controls, self.perturbations[i], self.dt)


def sample_perturbation(
    mode: str,
    nominal: GaussianDist,
    constraints: Sequence[ConstraintCoeffs],
    params: SafetyParams,
    rng: np.random.Generator,
    tolerance: float = 1e-8,
):
    """Draw one control variation; returns ``(du, distribution used)``.

    ``constraints`` must already be expressed in terms of the perturbation,
    i.e. with ``A u_nominal`` moved into ``b``.  Infeasible shaping keeps the
    nominal distribution.
    """
    xi = rng.standard_normal(nominal.dim)
    dist = nominal
    if mode == "scbf" and constraints:
        sol = shape(ShaperProblem(nominal, tuple(constraints), params, tolerance=tolerance))
        if sol.status is ShapeStatus.SHAPED:
            dist = sol.shaped
    elif mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    return dist.mean + dist.factor @ xi, dist


def _log_ratio(du: Array, mu: Array, p: Array, sigma0: Array) -> Array:
    """``log N(du; 0, S0) - log N(du; mu, S_s)`` over nondegenerate dims."""
    ok = (p > 1e-12) & (sigma0 > 1e-12)
    s0 = np.where(ok, sigma0, 1.0)
    ps = np.where(ok, p, 1.0)
    lp0 = -0.5 * (du / s0) ** 2 - np.log(s0)
    lps = -0.5 * ((du - mu) / ps) ** 2 - np.log(ps)
    return np.sum(np.where(ok, lp0 - lps, 0.0), axis=-1)


def evaluate_batch(
    model: DynamicsModel,
    cost: CostSpec,
    barriers: Sequence[BarrierFunction],
    schedule: Array,
    config: MppiConfig,
    x0: Array,
    rng: np.random.Generator,
    safety: Optional[SafetyParams] = None,
) -> RolloutBatch:
    """Roll out ``K`` perturbed copies of ``schedule`` from ``x0`` and score them."""
    schedule = np.asarray(schedule, dtype=float)
    K, T, m, n = config.samples, config.horizon, model.m, model.n
    if schedule.shape != (T, m):
        raise ValueError(f"schedule has shape {schedule.shape}, expected {(T, m)}")
    safety = safety or SafetyParams()
    sigma0 = config.sigma0
    xi = rng.standard_normal((K, T, m))
    eta = rng.standard_normal((K, T, n))
    if not config.rollout_noise:
        eta[:] = 0.0
    scbf = config.mode == "scbf" and len(barriers) > 0

    states = np.empty((K, T + 1, n))
    states[:, 0] = model.check_state(x0)
    perturbations = np.empty((K, T, m))
    shaped = np.zeros((K, T), dtype=bool)
    infeasible = np.zeros((K, T), dtype=bool)
    costs = np.zeros(K)

    nominal_states = None
    if scbf and config.shared_shaping:
        nominal_states = np.empty((T, n))
        nominal_states[0] = x0
        for t in range(T - 1):
            nominal_states[t + 1] = em_step(model, nominal_states[t], schedule[t], config.dt, np.zeros(n))

    zero_mean = np.zeros(m)
    for t in range(T):
        X = states[:, t]
        u_t = schedule[t]
        if scbf:
            where = X if nominal_states is None else nominal_states[t][None]
            A, b = constraint_arrays(model, barriers, where)
            b = b - A @ u_t  # constraint on the perturbation of the total input
            mu, p, status = shape_batch(zero_mean, sigma0, A, b, safety, config.shaper_tolerance)
            if nominal_states is not None:
                mu = np.broadcast_to(mu, (K, m))
                p = np.broadcast_to(p, (K, m))
                status = np.broadcast_to(status, (K,))
            du = mu + p * xi[:, t]
            shaped[:, t] = status == ShapeStatus.SHAPED
            infeasible[:, t] = status == ShapeStatus.INFEASIBLE
            if config.importance_ratio:
                costs -= config.temperature * _log_ratio(du, mu, p, sigma0)
        else:
            du = sigma0 * xi[:, t]
        perturbations[:, t] = du
        X_next = em_step(model, X, u_t + du, config.dt, eta[:, t])
        states[:, t + 1] = X_next
        costs += running_cost(cost, X_next, is_safe(X_next, barriers), u_t, du)
    costs += cost.terminal(states[:, -1])
    return RolloutBatch(schedule.copy(), states, perturbations, costs, shaped, infeasible, config.dt)


def compute_weights(costs: Array, temperature: float) -> Array:
    """Normalized ``exp(-(S - min S) / lambda)``."""
    costs = np.asarray(costs, dtype=float)
    if costs.ndim != 1 or len(costs) < 1:
        raise ValueError("costs must be a nonempty vector")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    w = np.exp(-(costs - costs.min()) / temperature)
    return w / w.sum()


def update_schedule(schedule: Array, perturbations: Array, weights: Array) -> Array:
    """``u_t + sum_i w_i du_{i,t}`` for every timestep."""
    return np.asarray(schedule, dtype=float) + np.einsum("k,ktm->tm", weights, perturbations)


def shift_horizon(schedule: Array, u_init: Array) -> Array:
    schedule = np.asarray(schedule, dtype=float)
    out = np.empty_like(schedule)
    out[:-1] = schedule[1:]
    out[-1] = u_init
    return out


def weight_entropy(weights: Array) -> float:
    w = weights[weights > 0]
    return float(-np.sum(w * np.log(w)))


def unbiased_var(draws: Array) -> Array:
    """Per-dimension unbiased variance of ``(..., m)`` draws."""
    flat = np.asarray(draws, dtype=float).reshape(-1, np.shape(draws)[-1])
    if len(flat) < 2:
        raise ValueError("need at least two draws")
    return flat.var(axis=0, ddof=1)


@dataclass
class MppiController:
    """Receding-horizon MPPI controller holding the warm-started schedule."""

    model: DynamicsModel
    cost: CostSpec
    barriers: Sequence[BarrierFunction]
    config: MppiConfig
    safety: SafetyParams = field(default_factory=SafetyParams)
    stream: int = 0
    schedule: Array = None
    steps_taken: int = 0
    last_batch: Optional[RolloutBatch] = field(default=None, repr=False)

    def __post_init__(self):
        if self.schedule is None:
            self.schedule = np.tile(self.u_init, (self.config.horizon, 1))

    @property
    def u_init(self) -> Array:
        if self.config.u_init is None:
            return np.zeros(self.model.m)
        return np.asarray(self.config.u_init, dtype=float)

    def step(self, x: Array):
        """Plan from ``x``; returns ``(u0, diagnostics)`` and shifts the schedule."""
        rng = substream(self.config.seed, self.stream, self.steps_taken)
        u, diag, updated = control_step(
            self.model, self.cost, self.barriers, self.schedule, self.config, x, rng, self.safety
        )
        self.last_batch = diag.pop("batch")
        diag["step"] = self.steps_taken
        self.schedule = shift_horizon(updated, self.u_init)
        self.steps_taken += 1
        return u, diag


def control_step(
    model: DynamicsModel,
    cost: CostSpec,
    barriers: Sequence[BarrierFunction],
    schedule: Array,
    config: MppiConfig,
    x: Array,
    rng: np.random.Generator,
    safety: Optional[SafetyParams] = None,
):
    """One MPPI iteration; returns ``(u0, diagnostics, updated schedule)``."""
    batch = evaluate_batch(model, cost, barriers, schedule, config, x, rng, safety)
    weights = compute_weights(batch.costs, config.temperature)
    updated = update_schedule(schedule, batch.perturbations, weights)
    diag = {
        "beta": float(batch.costs.min()),
        "weight_entropy": weight_entropy(weights),
        "shaped_count": int(batch.shaped.sum()),
        "infeasible_count": int(batch.infeasible.sum()),
        "var_du": unbiased_var(batch.perturbations).tolist() if batch.size * config.horizon > 1 else [0.0] * model.m,
        "batch": batch,
    }
    if diag["infeasible_count"]:
        log.debug("%d shaping problems infeasible; nominal kept", diag["infeasible_count"])
    return updated[0].copy(), diag, updated

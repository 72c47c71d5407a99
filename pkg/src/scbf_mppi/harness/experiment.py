"""Closed-loop trials, benchmark tables and sample-size measurements."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..barrier import is_safe
from ..mppi_core import MppiController
from ..sample_complexity import ComplexityReport, complexity_report
from ..sde_dynamics import Array, Trajectory, em_step, substream
from .config import ExperimentConfig

log = logging.getLogger(__name__)

# substream key separating plant noise from controller noise
PLANT_STREAM = 1 << 20


@dataclass
class TrialRecord:
    trajectory: Trajectory
    ttf: Optional[int]
    collisions: int
    safe: Array
    mode: str
    samples: int
    trial: int
    diagnostics: list[dict] = field(default_factory=list, repr=False)

    @property
    def steps(self) -> int:
        return len(self.trajectory.states)


@dataclass(frozen=True)
class BenchmarkRow:
    algorithm: str
    samples: int
    collision_rate: float
    mean_ttf: Optional[float]
    trials: int
    did_not_finish: int
    total_collisions: int


@dataclass
class BenchmarkTable:
    rows: list[BenchmarkRow]
    records: list[TrialRecord] = field(default_factory=list, repr=False)

    def row(self, algorithm: str, samples: int) -> BenchmarkRow:
        for r in self.rows:
            if r.algorithm == algorithm and r.samples == samples:
                return r
        raise KeyError((algorithm, samples))


def _reached(x: Array, goal: Array, radius: float) -> bool:
    return bool(np.linalg.norm(np.asarray(x)[:2] - goal) <= radius)


def run_trial(
    config: ExperimentConfig,
    trial: int,
    mode: Optional[str] = None,
    samples: Optional[int] = None,
    stop_at_goal: bool = True,
    max_steps: Optional[int] = None,
) -> TrialRecord:
    """Run one closed-loop episode.

    The controller plans from the current state, its first input is applied
    through one Euler-Maruyama step of the plant, and the loop stops on the
    first entry into the goal circle or after ``max_steps`` steps.  A trial
    never aborts on collision.
    """
    env = config.environment
    model = config.model()
    barriers = config.barriers()
    mppi = config.mppi_config(mode, samples)
    ctl = MppiController(model, config.cost_spec(), barriers, mppi, config.safety_params(), stream=trial)
    goal = np.asarray(env.goal, dtype=float)
    budget = env.max_steps if max_steps is None else max_steps

    x = np.asarray(env.start, dtype=float)
    states = [x]
    controls = []
    diagnostics = []
    ttf = None
    for k in range(budget + 1):
        if ttf is None and _reached(x, goal, env.vicinity_radius):
            ttf = k
            if stop_at_goal:
                break
        if k == budget:
            break
        u, diag = ctl.step(x)
        diagnostics.append(diag)
        noise = substream(config.seed, PLANT_STREAM + trial, k).standard_normal(model.n)
        x = em_step(model, x, u, mppi.dt, noise)
        states.append(x)
        controls.append(u)

    states = np.array(states)
    controls = np.array(controls).reshape(-1, model.m)
    traj = Trajectory(states, controls, np.zeros_like(controls), mppi.dt)
    safe = np.asarray(is_safe(states, barriers), dtype=bool).reshape(-1)
    return TrialRecord(traj, ttf, int((~safe).sum()), safe, mppi.mode, mppi.samples, trial, diagnostics)


def collision_rate(record: TrialRecord) -> float:
    """Unsafe fraction of the visited closed-loop states."""
    if record.steps == 0:
        raise ValueError("empty trajectory")
    return record.collisions / record.steps


def time_to_finish(record: TrialRecord, goal: Array, radius: float) -> Optional[int]:
    """First step index inside the goal circle, or None."""
    d = np.linalg.norm(record.trajectory.states[:, :2] - np.asarray(goal, dtype=float), axis=1)
    hits = np.nonzero(d <= radius)[0]
    return int(hits[0]) if len(hits) else None


def parse_grid(spec: str) -> list[tuple[str, int]]:
    """``"plain:200,scbf:500"`` -> ``[("plain", 200), ("scbf", 500)]``."""
    cells = []
    for item in spec.split(","):
        mode, _, k = item.strip().partition(":")
        if mode not in ("plain", "scbf") or not k.isdigit():
            raise ValueError(f"bad grid cell {item!r}; expected mode:samples")
        cells.append((mode, int(k)))
    return cells


def _trial_job(args):
    config, trial, mode, samples = args
    return run_trial(config, trial, mode, samples)


def summarize(records: Sequence[TrialRecord], algorithm: str, samples: int) -> BenchmarkRow:
    rates = [collision_rate(r) for r in records]
    ttfs = [r.ttf for r in records if r.ttf is not None]
    return BenchmarkRow(
        algorithm=algorithm,
        samples=samples,
        collision_rate=float(np.mean(rates)) if rates else 0.0,
        mean_ttf=float(np.mean(ttfs)) if ttfs else None,
        trials=len(records),
        did_not_finish=len(records) - len(ttfs),
        total_collisions=int(sum(r.collisions for r in records)),
    )


def run_benchmark(
    config: ExperimentConfig,
    grid: Sequence[tuple[str, int]],
    trials: Optional[int] = None,
    workers: int = 1,
) -> BenchmarkTable:
    """Run ``trials`` episodes per (algorithm, K) cell.

    Trial ``i`` of every cell uses the same derived seeds, so cells differ
    only by algorithm and sample count.  Rows and records come back in grid
    order regardless of ``workers``.
    """
    trials = trials or config.trials
    jobs = [(config, i, mode, k) for mode, k in grid for i in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_trial_job, jobs))
    else:
        records = [_trial_job(j) for j in jobs]
    rows = []
    for c, (mode, k) in enumerate(grid):
        cell = records[c * trials:(c + 1) * trials]
        rows.append(summarize(cell, mode, k))
        log.info("%s K=%d: %s", mode, k, rows[-1])
    return BenchmarkTable(rows, records)


def measure_batch(config: ExperimentConfig, mode: str, step: int, trial: int = 0):
    """Run the closed loop up to ``step`` and return the planning batch at that step."""
    env = config.environment
    model = config.model()
    mppi = config.mppi_config(mode)
    ctl = MppiController(model, config.cost_spec(), config.barriers(), mppi, config.safety_params(), stream=trial)
    x = np.asarray(env.start, dtype=float)
    for k in range(step + 1):
        u, _ = ctl.step(x)
        if k == step:
            return ctl.last_batch, x
        noise = substream(config.seed, PLANT_STREAM + trial, k).standard_normal(model.n)
        x = em_step(model, x, u, mppi.dt, noise)


def run_samplesize(config: ExperimentConfig, step: Optional[int] = None) -> dict[str, ComplexityReport]:
    """N1/N2 from the batch planned at closed-loop ``step``, for both modes."""
    step = config.complexity.step if step is None else step
    inputs = config.complexity_inputs()
    out = {}
    for mode in ("plain", "scbf"):
        batch, _ = measure_batch(config, mode, step)
        out[mode] = complexity_report(batch.costs, batch.perturbations, inputs)
    return out

"""JSON experiment configuration.

Sections: ``environment``, ``controller``, ``cost``, ``safety``,
``complexity``, plus top-level ``trials`` and ``seed``.  Unknown keys are
rejected at every level.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..barrier import BarrierFunction, SafetyParams, barrier_set, is_safe
from ..cost_model import CostSpec
from ..mppi_core import MppiConfig
from ..sample_complexity import ComplexityInputs
from ..sde_dynamics import DynamicsModel, double_integrator_model, unicycle_model


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EnvironmentSection(_Section):
    barriers: Literal["narrow_passage", "double_integrator_demo"] = Field(
        "narrow_passage", description="built-in barrier set"
    )
    passage_width: float = Field(1.0, gt=0, description="vertical width of the passage")
    passage_frequency: float = Field(
        math.pi / 2, gt=0, description="wall shape sin(k x); pi/2 keeps start and goal inside the passage"
    )
    start: list[float] = Field([0.0, 0.5, 0.0], description="initial state (x, y, theta)")
    goal: list[float] = Field([4.0, 0.5], description="goal position (x, y)")
    vicinity_radius: float = Field(0.15, gt=0, description="goal circle radius [m]")
    max_steps: int = Field(250, ge=1, description="closed-loop step budget (12.5 s at dt=0.05)")
    sigma_scale: float = Field(0.1, ge=0, description="diffusion magnitude multiplier")
    noise_model: Literal["isotropic", "control_channel"] = Field(
        "control_channel", description="Wiener covariance: identity, or lambda g R^-1 g' through the inputs"
    )


class ControllerSection(_Section):
    samples: int = Field(500, ge=1, description="K, sampled trajectories per step")
    horizon: int = Field(20, ge=1, description="T, planning steps")
    dt: float = Field(0.05, gt=0, description="integration step [s]")
    temperature: float = Field(1.0, gt=0, description="lambda")
    nominal_sigma: list[float] = Field([2.0, 2.0], description="per-input std of the nominal perturbation")
    mode: Literal["plain", "scbf"] = "scbf"
    shaper_tolerance: float = Field(1e-8, gt=0)
    shared_shaping: bool = Field(False, description="one shaping solve per timestep instead of per sample")
    importance_ratio: bool = Field(True, description="likelihood-ratio correction for shaped samples")
    rollout_noise: bool = Field(True, description="include process diffusion in planning rollouts")
    u_init: list[float] = Field([0.0, 0.0], description="input appended after each horizon shift")


class CostSection(_Section):
    state_weight: float = Field(1.0, ge=0)
    obstacle_penalty: float = Field(1000.0, ge=0)
    control_weight: list[list[float]] = Field([[1.0, 0.0], [0.0, 1.0]], description="R")
    variance_ratio: float = Field(1.0, gt=0, description="nu")
    terminal_weight: float = Field(0.0, ge=0, description="phi = terminal_weight * |(x,y) - goal|^2")


class SafetySection(_Section):
    delta: float = Field(0.003, gt=0, lt=1, description="allowed violation probability")
    alpha: Optional[float] = Field(None, ge=0, description="confidence multiplier; null = normal quantile of 1 - delta")
    alpha_form: Literal["variance", "std"] = "variance"


class ComplexitySection(_Section):
    step: int = Field(50, ge=0, description="closed-loop step at which the batch is measured")
    eps1: float = Field(0.05, gt=0)
    eps2: float = Field(0.1, gt=0)
    rho1: float = Field(0.05, gt=0, le=2)
    rho2: float = Field(0.1, gt=0, le=1)


class ExperimentConfig(_Section):
    environment: EnvironmentSection = EnvironmentSection()
    controller: ControllerSection = ControllerSection()
    cost: CostSection = CostSection()
    safety: SafetySection = SafetySection()
    complexity: ComplexitySection = ComplexitySection()
    trials: int = Field(10, ge=1)
    seed: int = Field(0, ge=0)

    @field_validator("seed")
    @classmethod
    def _seed_64bit(cls, v):
        if v >= 2**64:
            raise ValueError("seed must fit in 64 bits")
        return v

    @model_validator(mode="after")
    def _start_is_safe(self):
        if self.environment.barriers == "narrow_passage":
            x0 = np.asarray(self.environment.start, dtype=float)
            if not is_safe(x0, self.barriers()):
                raise ValueError(f"start state {self.environment.start} is outside the safe set")
        return self

    # runtime objects -----------------------------------------------------

    def model(self) -> DynamicsModel:
        env = self.environment
        if env.barriers == "double_integrator_demo":
            return double_integrator_model(env.sigma_scale)
        return unicycle_model(
            env.sigma_scale,
            env.noise_model,
            temperature=self.controller.temperature,
            control_weight=np.asarray(self.cost.control_weight),
        )

    def barriers(self) -> list[BarrierFunction]:
        env = self.environment
        if env.barriers == "narrow_passage":
            return barrier_set("narrow_passage", width=env.passage_width, frequency=env.passage_frequency)
        return barrier_set("double_integrator_demo")

    def cost_spec(self) -> CostSpec:
        goal = np.asarray(self.environment.goal, dtype=float)
        w = self.cost.terminal_weight

        def terminal(x):
            return w * np.sum((np.asarray(x)[..., :2] - goal) ** 2, axis=-1)

        return CostSpec(
            goal=goal,
            state_weight=self.cost.state_weight,
            obstacle_penalty=self.cost.obstacle_penalty,
            control_weight=np.asarray(self.cost.control_weight, dtype=float),
            temperature=self.controller.temperature,
            variance_ratio=self.cost.variance_ratio,
            terminal=terminal,
        )

    def safety_params(self) -> SafetyParams:
        s = self.safety
        return SafetyParams(delta=s.delta, alpha=s.alpha, alpha_form=s.alpha_form)

    def mppi_config(self, mode: Optional[str] = None, samples: Optional[int] = None) -> MppiConfig:
        c = self.controller
        return MppiConfig(
            samples=samples or c.samples,
            horizon=c.horizon,
            dt=c.dt,
            temperature=c.temperature,
            nominal_sigma=tuple(c.nominal_sigma),
            mode=mode or c.mode,
            seed=self.seed,
            shaper_tolerance=c.shaper_tolerance,
            shared_shaping=c.shared_shaping,
            importance_ratio=c.importance_ratio,
            rollout_noise=c.rollout_noise,
            u_init=tuple(c.u_init),
        )

    def complexity_inputs(self) -> ComplexityInputs:
        c = self.complexity
        return ComplexityInputs(c.eps1, c.eps2, c.rho1, c.rho2, self.controller.temperature)


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    data.pop("_doc", None)  # emitted by --print-default-config
    return ExperimentConfig.model_validate(data)


def default_config_json() -> str:
    """Default configuration with per-field descriptions as a JSON document."""
    cfg = ExperimentConfig()
    doc = {"_doc": _field_docs(ExperimentConfig), **cfg.model_dump()}
    return json.dumps(doc, indent=2)


def _field_docs(model: type[BaseModel], prefix: str = "") -> dict:
    docs = {}
    for name, info in model.model_fields.items():
        ann = info.annotation
        if isinstance(ann, type) and issubclass(ann, BaseModel):
            docs.update(_field_docs(ann, f"{prefix}{name}."))
        elif info.description:
            docs[f"{prefix}{name}"] = info.description
    return docs

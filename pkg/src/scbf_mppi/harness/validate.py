"""Config-free self checks behind the ``validate`` subcommand.

Each check returns ``(name, passed, detail)``; sizes are kept small so the
whole suite finishes in a few seconds.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from ..barrier import (
    ConstraintCoeffs,
    SafetyParams,
    fd_gradient,
    fd_hessian,
    narrow_passage_barriers,
)
from ..dist_shaper import GaussianDist, constraint_satisfied, lmi_feasible, shape_batch
from ..mppi_core import compute_weights
from ..sample_complexity import n1_bound
from ..sde_dynamics import em_step, substream, unicycle_model

Check = tuple[str, bool, str]


def check_n1() -> Check:
    got = (n1_bound(0.05, 0.05), n1_bound(0.1, 0.05))
    return "hoeffding count", got == (1476, 369), f"N1={got}"


def check_schur(n: int = 2000, seed: int = 1) -> Check:
    rng = substream(seed, 0)
    bad = 0
    for _ in range(n):
        m = int(rng.integers(1, 5))
        dist = GaussianDist(rng.normal(size=m), rng.normal(size=(m, m)))
        c = ConstraintCoeffs(rng.normal(size=m), float(rng.normal()))
        params = SafetyParams(alpha=float(rng.uniform(0, 4)))
        bad += lmi_feasible(dist, c, params) != constraint_satisfied(dist, c, params)
    return "schur equivalence", bad == 0, f"{bad} disagreements in {n}"


def check_shaper_analytic() -> Check:
    params = SafetyParams()
    mu, p, _ = shape_batch(np.zeros((1, 2)), np.ones((1, 2)), np.array([[[1.0, 0.0]]]), np.zeros((1, 1)), params)
    cost = abs(mu[0, 0]) + abs(p[0, 0] - 1.0)
    target = 1 - 1 / (4 * params.alpha)
    return "shaper closed form", abs(cost - target) < 1e-6, f"cost={cost:.6f} target={target:.6f}"


def check_weight_shift(seed: int = 2) -> Check:
    s = substream(seed, 0).uniform(0, 50, 100)
    err = float(np.max(np.abs(compute_weights(s, 1.0) - compute_weights(s + 123.4, 1.0))))
    return "weight shift invariance", err <= 1e-12, f"max diff {err:.1e}"


def check_barrier_fd(seed: int = 3) -> Check:
    rng = substream(seed, 0)
    worst = 0.0
    for bf in narrow_passage_barriers(1.0, math.pi / 2):
        for x in rng.uniform(-2, 2, (20, 3)):
            worst = max(worst, float(np.max(np.abs(fd_gradient(bf.h, x) - bf.grad(x)))))
            worst = max(worst, float(np.max(np.abs(fd_hessian(bf.grad, x) - bf.hess(x)))))
    return "barrier derivatives", worst < 1e-4, f"max abs err {worst:.1e}"


def check_em_moments(n: int = 20000, seed: int = 4) -> Check:
    model = unicycle_model(1.0)
    dt = 0.05
    noise = substream(seed, 0).standard_normal((n, 3))
    x = em_step(model, np.zeros((n, 3)), np.zeros((n, 2)), dt, noise)
    ratio = x.var(axis=0) / dt
    return "euler-maruyama variance", bool(np.all(np.abs(ratio - 1) < 0.05)), f"var/dt={np.round(ratio, 3)}"


CHECKS: list[Callable[[], Check]] = [
    check_n1,
    check_schur,
    check_shaper_analytic,
    check_weight_shift,
    check_barrier_fd,
    check_em_moments,
]


def run_checks() -> list[Check]:
    return [fn() for fn in CHECKS]

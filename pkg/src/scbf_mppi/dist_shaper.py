"""Chance-constrained shaping of the Gaussian sampling distribution.

Given a nominal ``N(mu0, P0 P0')`` and linear constraints ``A u >= b`` that
must hold with probability ``1 - delta``, find the nearest ``(mu, P)`` (in
``|mu - mu0|_1 + |P - P0|_F``) satisfying the deterministic surrogate::

    A mu - alpha * A P P' A' >= b          (variance form)
    A mu - alpha * sqrt(A P P' A') >= b    (std form)

``P`` is restricted to nonnegative diagonals.  When every constraint row of a
problem touches a single control coordinate the problem collapses to one
scalar variable and is solved exactly by enumerating breakpoints; other
problems are handed to a conic solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import cvxpy as cp
import numpy as np

from .barrier import ConstraintCoeffs, SafetyParams
from .sde_dynamics import Array

LMI_EIG_TOL = 1e-9
_ZERO = 1e-14


class ShapeStatus(IntEnum):
    UNCHANGED = 0
    SHAPED = 1
    INFEASIBLE = 2


@dataclass(frozen=True)
class GaussianDist:
    mean: Array
    factor: Array

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        factor = np.atleast_2d(np.asarray(self.factor, dtype=float))
        if factor.shape != (len(mean), len(mean)):
            raise ValueError(f"factor shape {factor.shape} does not match mean length {len(mean)}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(factor))):
            raise ValueError("distribution parameters must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "factor", factor)

    @classmethod
    def diagonal(cls, mean, std) -> "GaussianDist":
        return cls(np.asarray(mean, dtype=float), np.diag(np.asarray(std, dtype=float)))

    @property
    def cov(self) -> Array:
        return self.factor @ self.factor.T

    @property
    def dim(self) -> int:
        return len(self.mean)

    def is_diagonal(self) -> bool:
        return bool(np.all(self.factor == np.diag(np.diag(self.factor))))

    def sample(self, n: int, rng: np.random.Generator) -> Array:
        return self.mean + rng.standard_normal((n, self.dim)) @ self.factor.T


@dataclass(frozen=True)
class ShaperProblem:
    nominal: GaussianDist
    constraints: tuple[ConstraintCoeffs, ...]
    params: SafetyParams = SafetyParams()
    norm_p: str = "frobenius"
    tolerance: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if not self.constraints:
            raise ValueError("a shaping problem needs at least one constraint")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.norm_p != "frobenius":
            raise ValueError("only the Frobenius norm is supported for the factor term")


@dataclass(frozen=True)
class ShaperSolution:
    shaped: GaussianDist
    objective: float
    status: ShapeStatus


def _spread(A: Array, cov: Array, form: str) -> Array:
    q = np.einsum("...i,...ij,...j->...", A, cov, A)
    return np.sqrt(np.maximum(q, 0.0)) if form == "std" else q


def constraint_margin(dist: GaussianDist, c: ConstraintCoeffs, params: SafetyParams) -> float:
    """``A mu - alpha * spread - b``; nonnegative iff the surrogate holds."""
    return float(c.A @ dist.mean - params.alpha * _spread(c.A, dist.cov, params.alpha_form) - c.b)


def constraint_satisfied(dist: GaussianDist, c: ConstraintCoeffs, params: SafetyParams) -> bool:
    return constraint_margin(dist, c, params) >= 0.0


def lmi_feasible(dist: GaussianDist, c: ConstraintCoeffs, params: SafetyParams) -> bool:
    """Schur-complement form of the variance constraint.

    The block ``[[I, sqrt(a) P'A'], [sqrt(a) A P, A mu - b]]`` is PSD exactly
    when ``A mu - b - a A P P' A' >= 0``.
    """
    m = dist.dim
    col = np.sqrt(params.alpha) * (dist.factor.T @ c.A)
    block = np.empty((m + 1, m + 1))
    block[:m, :m] = np.eye(m)
    block[:m, m] = col
    block[m, :m] = col
    block[m, m] = c.A @ dist.mean - c.b
    return bool(np.linalg.eigvalsh(block)[0] >= -LMI_EIG_TOL)


def variance_cap(c: ConstraintCoeffs, mean: Array, params: SafetyParams):
    """Largest admissible ``A Sigma A'`` for the given mean, or None if the mean alone fails."""
    if params.alpha <= 0:
        raise ValueError("variance cap needs alpha > 0")
    slack = float(c.A @ np.asarray(mean, dtype=float) - c.b)
    if slack < 0:
        return None
    return slack / params.alpha


def chance_violation_rate(dist: GaussianDist, c: ConstraintCoeffs, n: int, rng: np.random.Generator) -> float:
    """Monte Carlo estimate of ``Pr(A u < b)`` for ``u ~ dist``."""
    if n < 1:
        raise ValueError("need at least one draw")
    u = dist.sample(n, rng)
    return float(np.mean(u @ c.A < c.b))


def _margins(mu: Array, p: Array, A: Array, b: Array, params: SafetyParams) -> Array:
    """Surrogate margins for diagonal factors; ``mu, p: (K, m)``, ``A: (K, J, m)``."""
    q = np.einsum("kjm,km->kj", A * A, p * p)
    spread = np.sqrt(q) if params.alpha_form == "std" else q
    return np.einsum("kjm,km->kj", A, mu) - params.alpha * spread - b


def _shape_single_support(mu0k, p0k, e, b, params: SafetyParams, tol: float):
    """Exact solve when every constraint only touches one coordinate.

    Per row the constraints read ``e_j mu - kappa_j phi(p) >= b_j`` with
    ``phi(p) = p^2`` (variance) or ``p`` (std).  Dividing by ``e_j`` gives
    lower bounds (``e_j > 0``) and upper bounds (``e_j < 0``) on ``mu`` that
    tighten affinely in ``phi``.  The objective restricted to the best ``mu``
    is convex in ``p`` and piecewise simple, so its minimum sits on one of
    the enumerated breakpoints or stationary points.

    Arrays: ``mu0k, p0k: (R,)``, ``e, b: (R, J)`` with inactive entries set to 0.
    Returns ``(mu, p, feasible)``.
    """
    var_form = params.alpha_form == "variance"
    alpha = params.alpha
    active = np.abs(e) > _ZERO
    safe_e = np.where(active, e, 1.0)
    beta = b / safe_e
    kappa = alpha * np.abs(e) if var_form else np.full_like(e, alpha)
    lower = active & (e > 0)
    upper = active & (e < 0)
    beta_lo = np.where(lower, beta, -np.inf)
    beta_hi = np.where(upper, beta, np.inf)
    kap_lo = np.where(lower, kappa, 0.0)
    kap_hi = np.where(upper, kappa, 0.0)

    def bounds(phi):
        # phi: (R, C) -> L, U: (R, C)
        L = np.max(beta_lo[:, None, :] + kap_lo[:, None, :] * phi[..., None], axis=-1)
        U = np.min(beta_hi[:, None, :] - kap_hi[:, None, :] * phi[..., None], axis=-1)
        return L, U

    zero = np.zeros((len(mu0k), 1))
    L0, U0 = bounds(zero)
    feasible = (L0 <= U0 + tol)[:, 0]

    # largest phi keeping L <= U: pairwise lower/upper crossings
    with np.errstate(invalid="ignore", divide="ignore"):
        cross = (beta_hi[:, None, :] - beta_lo[:, :, None]) / (kap_lo[:, :, None] + kap_hi[:, None, :])
    cross = np.where(lower[:, :, None] & upper[:, None, :] & ~np.isnan(cross), cross, np.inf)
    phi_max = np.maximum(np.min(cross.reshape(len(mu0k), -1), axis=1), 0.0)
    p_max = np.sqrt(phi_max) if var_form else phi_max
    p_hi = np.minimum(p0k, p_max)

    with np.errstate(invalid="ignore", divide="ignore"):
        m0 = mu0k[:, None]
        cands_phi = [
            np.where(lower, (m0 - beta_lo) / kap_lo, np.nan),
            np.where(upper, (beta_hi - m0) / kap_hi, np.nan),
        ]
        J = e.shape[1]
        for j in range(J):
            for jj in range(j + 1, J):
                lo_pair = lower[:, j] & lower[:, jj]
                hi_pair = upper[:, j] & upper[:, jj]
                cands_phi.append(
                    np.where(lo_pair, (beta_lo[:, jj] - beta_lo[:, j]) / (kap_lo[:, j] - kap_lo[:, jj]), np.nan)[:, None]
                )
                cands_phi.append(
                    np.where(hi_pair, (beta_hi[:, j] - beta_hi[:, jj]) / (kap_hi[:, j] - kap_hi[:, jj]), np.nan)[:, None]
                )
        phi_c = np.concatenate(cands_phi, axis=1)
        p_c = np.sqrt(np.where(phi_c >= 0, phi_c, np.nan)) if var_form else phi_c
        extra = [np.zeros_like(p0k)[:, None], p_hi[:, None]]
        if var_form:
            extra.append(np.where(active, 0.5 / kappa, np.nan))
        p_c = np.concatenate([p_c] + extra, axis=1)
    p_c = np.where(np.isfinite(p_c), p_c, 0.0)
    p_c = np.clip(p_c, 0.0, p_hi[:, None])

    phi_eval = p_c * p_c if var_form else p_c
    L, U = bounds(phi_eval)
    shift = np.maximum(np.maximum(L - m0, m0 - U), 0.0)
    cost = shift + (p0k[:, None] - p_c)
    # near-ties go to the smaller factor: shrink exploration before biasing the mean
    best_cost = np.min(cost, axis=1, keepdims=True)
    near = cost <= best_cost + 1e-12 * (1.0 + np.abs(best_cost))
    pick = np.argmin(np.where(near, p_c, np.inf), axis=1)
    rows = np.arange(len(mu0k))
    p_star = p_c[rows, pick]
    mu_star = np.clip(mu0k, L[rows, pick], U[rows, pick])

    # round-off can leave the clipped mean a few ulps outside its bound;
    # step it inward so the returned margins are nonnegative
    spread_scale = alpha * (np.abs(e) * p_star[:, None]) if not var_form else alpha * (e * p_star[:, None]) ** 2
    for _ in range(4):
        marg = np.where(active, e * mu_star[:, None] - spread_scale - b, np.inf)
        worst = np.argmin(marg, axis=1)
        short = marg[rows, worst]
        fix = feasible & (short < 0)
        if not np.any(fix):
            break
        ew = e[rows, worst]
        step = (-short / np.abs(np.where(fix, ew, 1.0))) * (1 + 1e-12) + 4 * np.spacing(np.abs(mu_star) + 1.0)
        mu_star = np.where(fix, mu_star + np.sign(ew) * step, mu_star)
    return mu_star, p_star, feasible


def _shape_general(mu0: Array, p0: Array, A: Array, b: Array, params: SafetyParams, tol: float):
    """Conic solve for rows whose constraints touch several coordinates."""
    m = len(mu0)
    mu = cp.Variable(m)
    p = cp.Variable(m, nonneg=True)
    cons = []
    for Aj, bj in zip(A, b):
        if params.alpha_form == "variance":
            cons.append(Aj @ mu - params.alpha * cp.sum_squares(cp.multiply(Aj, p)) >= bj)
        else:
            cons.append(Aj @ mu - params.alpha * cp.norm(cp.multiply(Aj, p), 2) >= bj)
    prob = cp.Problem(cp.Minimize(cp.norm1(mu - mu0) + cp.norm(p - p0, 2)), cons)
    try:
        prob.solve(solver=cp.CLARABEL)
    except cp.SolverError:
        return None
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or mu.value is None:
        return None
    mu_v = np.asarray(mu.value, dtype=float)
    p_v = np.clip(np.asarray(p.value, dtype=float), 0.0, np.maximum(p0, 0.0))
    # polish solver round-off: push the mean along each violated row
    for _ in range(len(b) * 4):
        marg = _margins(mu_v[None], p_v[None], A[None], b[None], params)[0]
        worst = int(np.argmin(marg))
        if marg[worst] >= 0:
            break
        Aj = A[worst]
        mu_v = mu_v + (-marg[worst] * (1 + 1e-9) + 1e-15) * Aj / (Aj @ Aj)
    return mu_v, p_v


def shape_batch(mu0: Array, p0: Array, A: Array, b: Array, params: SafetyParams, tolerance: float = 1e-8):
    """Shape one diagonal nominal against ``K`` independent constraint sets.

    Args:
        mu0, p0: nominal mean and diagonal factor, shape ``(m,)``.
        A: constraint rows, shape ``(K, J, m)``.
        b: right-hand sides, shape ``(K, J)``.

    Returns:
        ``(mu, p, status)`` with shapes ``(K, m)``, ``(K, m)``, ``(K,)``.
        Infeasible rows keep the nominal.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    K, J, m = A.shape
    mu0 = np.broadcast_to(np.asarray(mu0, dtype=float), (K, m))
    p0 = np.abs(np.broadcast_to(np.asarray(p0, dtype=float), (K, m)))
    mu = mu0.copy()
    p = p0.copy()
    status = np.full(K, ShapeStatus.UNCHANGED, dtype=np.int8)

    margins = _margins(mu0, p0, A, b, params)
    todo = np.any(margins < -tolerance, axis=1)
    if not np.any(todo):
        return mu, p, status

    zero_row = np.all(np.abs(A) <= _ZERO, axis=2)
    impossible = np.any(zero_row & (b > tolerance), axis=1)
    live = ~zero_row
    support = np.any(np.abs(A) > _ZERO, axis=1) & np.any(live, axis=1)[:, None]
    n_support = support.sum(axis=1)

    bad = todo & impossible
    status[bad] = ShapeStatus.INFEASIBLE
    todo &= ~impossible

    single = todo & (n_support == 1)
    if np.any(single):
        idx = np.nonzero(single)[0]
        k = np.argmax(support[idx], axis=1)
        e = np.where(live[idx], A[idx, :, k], 0.0)
        bb = np.where(live[idx], b[idx], 0.0)
        mu_k, p_k, ok = _shape_single_support(mu0[idx, k], p0[idx, k], e, bb, params, tolerance)
        good = idx[ok]
        mu[good, k[ok]] = mu_k[ok]
        p[good, k[ok]] = p_k[ok]
        status[good] = ShapeStatus.SHAPED
        status[idx[~ok]] = ShapeStatus.INFEASIBLE

    for r in np.nonzero(todo & (n_support > 1))[0]:
        keep = live[r]
        out = _shape_general(mu0[r], p0[r], A[r][keep], b[r][keep], params, tolerance)
        if out is None:
            status[r] = ShapeStatus.INFEASIBLE
        else:
            mu[r], p[r] = out
            status[r] = ShapeStatus.SHAPED
    return mu, p, status


def shape(problem: ShaperProblem) -> ShaperSolution:
    """Nearest chance-feasible Gaussian to the nominal (diagonal factors)."""
    nominal = problem.nominal
    if not nominal.is_diagonal():
        raise ValueError("the nominal factor must be diagonal")
    A = np.stack([c.A for c in problem.constraints])
    b = np.array([c.b for c in problem.constraints])
    if A.shape[1] != nominal.dim:
        raise ValueError("constraint rows do not match the distribution dimension")
    p0 = np.abs(np.diag(nominal.factor))
    mu, p, status = shape_batch(nominal.mean, p0, A[None], b[None], problem.params, problem.tolerance)
    st = ShapeStatus(int(status[0]))
    if st is not ShapeStatus.SHAPED:
        return ShaperSolution(GaussianDist.diagonal(nominal.mean, p0), 0.0, st)
    shaped = GaussianDist.diagonal(mu[0], p[0])
    objective = float(np.sum(np.abs(mu[0] - nominal.mean)) + np.linalg.norm(p[0] - p0))
    return ShaperSolution(shaped, objective, st)


def shaping_objective(dist: GaussianDist, nominal: GaussianDist) -> float:
    return float(np.sum(np.abs(dist.mean - nominal.mean)) + np.linalg.norm(dist.factor - nominal.factor))


def constraints_hold(dist: GaussianDist, constraints: Sequence[ConstraintCoeffs], params: SafetyParams, tol: float = 0.0) -> bool:
    return all(constraint_margin(dist, c, params) >= -tol for c in constraints)

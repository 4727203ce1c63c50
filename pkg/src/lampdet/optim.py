"""Dense Levenberg-Marquardt least squares with per-parameter masking.

Every nonlinear solve in the pipeline (planar PnP polish, the constrained
re-minimization, circle pose, chamfer refinement) goes through
``lm_minimize``.  Problems are tiny (<= 7 parameters), so the normal
equations are solved directly; derivatives are always numeric central
differences so cost functions stay pluggable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .errors import NonFiniteResidual


@dataclass(frozen=True)
class ResidualProblem:
    """Wraps a residual callback with its dimensions.

    ``evaluate`` maps a parameter vector of length ``n_params`` to a residual
    vector of length ``n_residuals`` and must be deterministic.
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    n_params: int
    n_residuals: int


class Termination(Enum):
    GRADIENT = "gradient_tolerance"
    STEP = "step_tolerance"
    COST = "cost_tolerance"
    MAX_ITERATIONS = "max_iterations"
    SINGULAR = "singular_normal_equations"


@dataclass(frozen=True)
class LMOptions:
    max_iterations: int = 100
    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1
    gradient_tol: float = 1e-10
    step_tol: float = 1e-12
    cost_tol: float = 1e-15  # relative per-iteration improvement floor
    fd_step: float = 1e-6

    def __post_init__(self):
        for name in ("max_iterations", "damping_init", "damping_up",
                     "damping_down", "gradient_tol", "step_tol", "cost_tol",
                     "fd_step"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class LMResult:
    x_opt: np.ndarray
    final_cost: float
    iterations: int
    converged: bool
    termination_reason: Termination
    n_free: int
    tag: str = ""
    accepted_costs: tuple = field(default_factory=tuple)


def _residuals(problem: ResidualProblem, x: np.ndarray) -> np.ndarray:
    r = np.asarray(problem.evaluate(x), dtype=float).ravel()
    if not np.all(np.isfinite(r)):
        raise NonFiniteResidual("residual evaluation returned non-finite values")
    return r


def numeric_jacobian(problem: ResidualProblem, x, h: float = 1e-6,
                     free_mask=None) -> np.ndarray:
    """Central-difference Jacobian, step max(h, h*|x_i|) per column.

    Columns for masked-out parameters are zero (the parameter never moves).
    """
    x = np.asarray(x, dtype=float).copy()
    if free_mask is None:
        free_mask = np.ones(x.size, dtype=bool)
    J = np.zeros((problem.n_residuals, x.size))
    for i in range(x.size):
        if not free_mask[i]:
            continue
        step = max(h, h * abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        J[:, i] = (_residuals(problem, xp) - _residuals(problem, xm)) / (2.0 * step)
    return J


def lm_minimize(problem: ResidualProblem, x0, free_mask=None,
                opts: LMOptions = LMOptions(), tag: str = "") -> LMResult:
    """Minimize sum of squared residuals over the unmasked parameters.

    Masked entries of ``x0`` are returned bit-identical.  Damping follows the
    classic multiplicative rule: x10 on a rejected step, x0.1 on acceptance
    (acceptance keeps shrinking the damping while the same-Jacobian re-solve
    still improves the cost, so affine problems finish in one iteration).
    ``tag`` labels the solve for instrumentation.
    """
    x = np.asarray(x0, dtype=float).copy()
    if x.size != problem.n_params:
        raise ValueError("x0 length does not match problem.n_params")
    mask = (np.ones(x.size, dtype=bool) if free_mask is None
            else np.asarray(free_mask, dtype=bool).copy())
    if mask.size != x.size:
        raise ValueError("free_mask length does not match x0")
    n_free = int(mask.sum())
    if n_free == 0:
        raise ValueError("at least one parameter must be free")
    free_idx = np.flatnonzero(mask)

    r = _residuals(problem, x)
    cost = float(r @ r)
    accepted = [cost]
    lam = opts.damping_init
    reason = Termination.MAX_ITERATIONS
    converged = False
    iterations = 0

    for iterations in range(1, opts.max_iterations + 1):
        cost_before = cost
        J = numeric_jacobian(problem, x, opts.fd_step, mask)[:, free_idx]
        g = J.T @ r
        if float(np.abs(g).max()) < opts.gradient_tol:
            reason = Termination.GRADIENT
            converged = True
            iterations -= 1
            break

        JtJ = J.T @ J
        diag = np.diag(JtJ).copy()
        diag[diag < 1e-12] = 1e-12
        accepted_this_iter = False
        rejects = 0
        while True:
            try:
                step = np.linalg.solve(JtJ + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)):
                x_try = x.copy()
                x_try[free_idx] += step
                try:
                    r_try = _residuals(problem, x_try)
                    cost_try = float(r_try @ r_try)
                except NonFiniteResidual:
                    cost_try = np.inf
                if cost_try < cost:
                    x, r, cost = x_try, r_try, cost_try
                    accepted.append(cost)
                    step_norm = float(np.linalg.norm(step))
                    lam = max(lam * opts.damping_down, 1e-15)
                    accepted_this_iter = True
                    # same-Jacobian re-solve with smaller damping while it helps
                    improved = True
                    while improved and lam > 1e-15:
                        improved = False
                        try:
                            step2 = np.linalg.solve(JtJ + lam * np.diag(diag), -(J.T @ r))
                        except np.linalg.LinAlgError:
                            break
                        if not np.all(np.isfinite(step2)):
                            break
                        x2 = x.copy()
                        x2[free_idx] += step2
                        try:
                            r2 = _residuals(problem, x2)
                            cost2 = float(r2 @ r2)
                        except NonFiniteResidual:
                            break
                        if cost2 < cost:
                            x, r, cost = x2, r2, cost2
                            accepted.append(cost)
                            step_norm = float(np.linalg.norm(step2))
                            lam = max(lam * opts.damping_down, 1e-15)
                            improved = True
                    if step_norm < opts.step_tol * (float(np.linalg.norm(x[free_idx])) + opts.step_tol):
                        reason = Termination.STEP
                        converged = True
                    break
            # rejected: escalate damping
            lam *= opts.damping_up
            rejects += 1
            if lam > 1e12 or rejects > 60:
                reason = Termination.SINGULAR if step is None else Termination.STEP
                converged = step is not None
                break
        if not accepted_this_iter or reason in (Termination.STEP, Termination.SINGULAR):
            break
        if cost_before - cost <= opts.cost_tol * max(cost, 1e-300):
            reason = Termination.COST
            converged = True
            break

    result_x = np.asarray(x0, dtype=float).copy()
    result_x[free_idx] = x[free_idx]
    return LMResult(
        x_opt=result_x,
        final_cost=cost,
        iterations=iterations,
        converged=converged,
        termination_reason=reason,
        n_free=n_free,
        tag=tag,
        accepted_costs=tuple(accepted),
    )

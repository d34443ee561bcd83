"""Constrained NLP layer: problem container, solver, FD gradient oracle.

Problems carry analytical gradients/Jacobians.  The default backend is
scipy's trust-region interior-point solver (method="trust-constr"); an
augmented-Lagrangian fallback (method="auglag") with L-BFGS-B inner solves
is available for robustness.  Both are deterministic given (problem, x0,
options).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import optimize as sopt

from hdlo.errors import DimensionMismatch

Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]
Constraint = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]


@dataclass
class NlpProblem:
    """min f(x) s.t. c_eq(x) = 0, c_in(x) <= 0, lower <= x <= upper.

    Every evaluator returns the value(s) and the analytical gradient or
    Jacobian in one call.
    """

    n: int
    objective: Objective
    n_eq: int = 0
    n_ineq: int = 0
    equality: Optional[Constraint] = None
    inequality: Optional[Constraint] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.n_eq > 0) != (self.equality is not None):
            raise DimensionMismatch("n_eq and equality evaluator must agree")
        if (self.n_ineq > 0) != (self.inequality is not None):
            raise DimensionMismatch("n_ineq and inequality evaluator must agree")

    def bounds_arrays(self):
        lo = np.full(self.n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        hi = np.full(self.n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        return lo, hi

    def max_violation(self, x: np.ndarray) -> float:
        v = 0.0
        if self.equality is not None:
            c, _ = self.equality(x)
            if len(c):
                v = max(v, float(np.abs(c).max()))
        if self.inequality is not None:
            c, _ = self.inequality(x)
            if len(c):
                v = max(v, float(np.maximum(c, 0.0).max()))
        lo, hi = self.bounds_arrays()
        v = max(v, float(np.maximum(lo - x, 0.0).max(initial=0.0)))
        v = max(v, float(np.maximum(x - hi, 0.0).max(initial=0.0)))
        return v


@dataclass
class SolveOptions:
    method: str = "trust-constr"  # "trust-constr" | "auglag"
    max_iter: int = 1000
    tol_stationarity: float = 1e-6
    tol_feasibility: float = 1e-8
    # interior-point termination details; tighten xtol/barrier_tol (and relax
    # tol_stationarity) to squeeze accuracy out of active bounds
    xtol: float = 1e-12
    barrier_tol: float = 1e-10
    verbose: int = 0


@dataclass
class SolverReport:
    status: str  # converged | max_iter | infeasible | numeric_failure
    iterations: int
    objective: float
    max_violation: float
    wall_time: float
    message: str = ""


class _Memo:
    """Evaluate each problem callback once per distinct x."""

    def __init__(self, fn):
        self.fn = fn
        self.x = None
        self.out = None

    def __call__(self, x):
        if self.x is None or not np.array_equal(x, self.x):
            self.x = np.array(x, copy=True)
            self.out = self.fn(self.x)
        return self.out


def _project_to_bounds(problem: NlpProblem, x0: np.ndarray) -> np.ndarray:
    lo, hi = problem.bounds_arrays()
    return np.clip(np.asarray(x0, dtype=float), lo, hi)


def solve(problem: NlpProblem, x0, options: Optional[SolveOptions] = None):
    """Solve to a first-order KKT point; never raises on non-convergence."""
    options = options or SolveOptions()
    x0 = _project_to_bounds(problem, x0)
    t0 = time.perf_counter()
    try:
        if options.method == "auglag":
            x, its, msg = _solve_auglag(problem, x0, options)
        elif options.method == "trust-constr":
            x, its, msg = _solve_trust_constr(problem, x0, options)
        else:
            raise ValueError(f"unknown NLP method {options.method!r}")
    except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        return x0, SolverReport(
            status="numeric_failure",
            iterations=0,
            objective=float("nan"),
            max_violation=float("nan"),
            wall_time=time.perf_counter() - t0,
            message=f"{type(exc).__name__}: {exc}",
        )
    f, _ = problem.objective(x)
    viol = problem.max_violation(x)
    if viol <= options.tol_feasibility:
        status = "converged" if its < options.max_iter else "max_iter"
    else:
        status = "infeasible" if its >= options.max_iter else "max_iter"
        # a solver that stopped early but infeasible is still infeasible
        if its < options.max_iter and viol > options.tol_feasibility:
            status = "infeasible"
    report = SolverReport(
        status=status,
        iterations=its,
        objective=float(f),
        max_violation=viol,
        wall_time=time.perf_counter() - t0,
        message=msg,
    )
    return x, report


def _solve_trust_constr(problem: NlpProblem, x0, options: SolveOptions):
    obj = _Memo(problem.objective)
    constraints = []
    if problem.equality is not None:
        eq = _Memo(problem.equality)
        constraints.append(
            sopt.NonlinearConstraint(
                lambda x: eq(x)[0], 0.0, 0.0, jac=lambda x: eq(x)[1]
            )
        )
    if problem.inequality is not None:
        ineq = _Memo(problem.inequality)
        constraints.append(
            sopt.NonlinearConstraint(
                lambda x: ineq(x)[0], -np.inf, 0.0, jac=lambda x: ineq(x)[1]
            )
        )
    lo, hi = problem.bounds_arrays()
    bounds = None
    if np.isfinite(lo).any() or np.isfinite(hi).any():
        bounds = sopt.Bounds(lo, hi)
    res = sopt.minimize(
        lambda x: obj(x)[0],
        x0,
        jac=lambda x: obj(x)[1],
        method="trust-constr",
        constraints=constraints,
        bounds=bounds,
        options={
            "maxiter": options.max_iter,
            "gtol": options.tol_stationarity,
            "xtol": options.xtol,
            "barrier_tol": options.barrier_tol,
            "verbose": options.verbose,
        },
    )
    return np.asarray(res.x, dtype=float), int(res.niter), str(res.message)


def _solve_auglag(problem: NlpProblem, x0, options: SolveOptions):
    """Augmented Lagrangian with L-BFGS-B inner solves (bound-safe)."""
    lo, hi = problem.bounds_arrays()
    x = x0.copy()
    lam = np.zeros(problem.n_eq)
    mu = np.zeros(problem.n_ineq)
    rho = 10.0
    msg = "auglag"
    inner_total = 0
    for outer in range(30):
        def merit(x):
            f, g = problem.objective(x)
            grad = g.copy()
            if problem.equality is not None:
                c, J = problem.equality(x)
                w = lam + rho * c
                f += float(lam @ c) + 0.5 * rho * float(c @ c)
                grad += J.T @ w
            if problem.inequality is not None:
                c, J = problem.inequality(x)
                w = np.maximum(0.0, mu + rho * c)
                f += float((w**2 - mu**2).sum()) / (2.0 * rho)
                grad += J.T @ w
            return f, grad

        res = sopt.minimize(
            merit,
            x,
            jac=True,
            method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
            options={"maxiter": 2000, "ftol": 1e-16, "gtol": 1e-12},
        )
        x = np.asarray(res.x, dtype=float)
        inner_total += int(res.nit)
        _, g = problem.objective(x)
        g = g.copy()
        if problem.equality is not None:
            c, J = problem.equality(x)
            lam = lam + rho * c
            g += J.T @ lam
        if problem.inequality is not None:
            c, J = problem.inequality(x)
            mu = np.maximum(0.0, mu + rho * c)
            g += J.T @ mu
        viol = problem.max_violation(x)
        # KKT stationarity with the freshly updated multipliers, projected
        # onto the bound-feasible directions and scaled by the objective
        # gradient magnitude
        g[(x <= lo + 1e-12) & (g > 0)] = 0.0
        g[(x >= hi - 1e-12) & (g < 0)] = 0.0
        scale = max(1.0, float(np.abs(problem.objective(x)[1]).max(initial=0.0)))
        if viol <= options.tol_feasibility and np.abs(g).max(initial=0.0) <= options.tol_stationarity * scale:
            return x, outer + 1, msg
        rho = min(rho * 10.0, 1e10)
    return x, options.max_iter, "auglag: outer loop budget exhausted"


@dataclass
class GradientCheckReport:
    objective_rel_err: float
    equality_rel_err: float
    inequality_rel_err: float
    worst: Tuple[str, int, int] = ("objective", 0, 0)  # (block, row, col)

    @property
    def max_rel_err(self) -> float:
        return max(self.objective_rel_err, self.equality_rel_err, self.inequality_rel_err)


def gradient_check(problem: NlpProblem, x, step: float = 1e-6) -> GradientCheckReport:
    """Central-difference verification of all analytical derivative blocks.

    Relative error is measured per block against max(1, |FD block|_inf),
    with the step scaled per variable by max(1, |x_i|).
    """
    x = np.asarray(x, dtype=float)

    def block_err(fn, n_rows):
        vals, J = fn(x)
        if hasattr(J, "toarray"):
            J = J.toarray()
        J = np.atleast_2d(np.asarray(J, dtype=float))
        Jfd = np.zeros_like(J)
        for i in range(problem.n):
            h = step * max(1.0, abs(x[i]))
            dx = np.zeros(problem.n)
            dx[i] = h
            vp = np.atleast_1d(fn(x + dx)[0])
            vm = np.atleast_1d(fn(x - dx)[0])
            Jfd[:, i] = (vp - vm) / (2.0 * h)
        denom = max(1.0, float(np.abs(Jfd).max(initial=0.0)))
        diff = np.abs(J - Jfd)
        if diff.size == 0:
            return 0.0, (0, 0)
        idx = np.unravel_index(int(np.argmax(diff)), diff.shape)
        return float(diff.max()) / denom, idx

    def obj_as_block(xq):
        f, g = problem.objective(xq)
        return np.atleast_1d(f), np.atleast_2d(g)

    e_obj, i_obj = block_err(obj_as_block, 1)
    e_eq, i_eq = (0.0, (0, 0))
    e_in, i_in = (0.0, (0, 0))
    if problem.equality is not None:
        e_eq, i_eq = block_err(problem.equality, problem.n_eq)
    if problem.inequality is not None:
        e_in, i_in = block_err(problem.inequality, problem.n_ineq)
    worst = max(
        [("objective", e_obj, i_obj), ("equality", e_eq, i_eq), ("inequality", e_in, i_in)],
        key=lambda t: t[1],
    )
    return GradientCheckReport(
        objective_rel_err=e_obj,
        equality_rel_err=e_eq,
        inequality_rel_err=e_in,
        worst=(worst[0],) + tuple(worst[2]),
    )

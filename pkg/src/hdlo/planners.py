"""Planning procedures: inverse kinetostatics, warm-started trajectory
optimization through apertures, and a bidirectional-RRT baseline.

All three work on the same feasible set: static equilibrium + loop closure
+ aperture constraints.  Inverse kinetostatics (IKS) finds one constrained
equilibrium minimizing the log-distance to a goal pose; trajectory
optimization transcribes N keyframes with a smoothness cost and a terminal
goal constraint, warm-started by linear interpolation between the initial
state and the IKS solution; the RRT plans in actuated-joint space with
equilibrium projection at every node.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from hdlo import assembly as am
from hdlo import envcon as ec
from hdlo import liegroup as lg
from hdlo import nlp
from hdlo import statics as st
from hdlo.backend import lie
from hdlo.errors import (
    AngleNearPi,
    DimensionMismatch,
    GoalUnreachable,
    NoConvergence,
)


# ---------------------------------------------------------------------------
# goals


@dataclass(frozen=True)
class Goal:
    """End-effector regulation target: a world position or a full pose."""

    kind: str  # "position" | "full_pose"
    target: Union[np.ndarray, lg.Pose]

    def __post_init__(self):
        if self.kind == "position":
            t = np.asarray(self.target, dtype=float)
            if t.shape != (3,):
                raise DimensionMismatch("position goal needs a 3-vector")
            object.__setattr__(self, "target", t)
        elif self.kind == "full_pose":
            if not isinstance(self.target, lg.Pose):
                raise DimensionMismatch("full_pose goal needs a Pose")
        else:
            raise ValueError(f"unknown goal kind {self.kind!r}")


def goal_error(asm: am.Assembly, cache: am.KinematicsCache, goal: Goal):
    """(error vector, d error/dq).

    full_pose: eps = log(g_d^-1 g_EE) with d eps/dq = T(eps)^-1 Ad_exp(eps) J_EE.
    position: e = r_EE - r_d with de/dq = R_EE J_EE^v.
    """
    g = am.end_effector_pose(asm, cache)
    J = am.end_effector_jacobian(asm, cache)
    if goal.kind == "position":
        e = g.translation - goal.target
        de = g.rotation @ J[3:]
        return e, de
    eps = lg.log_se3(goal.target.inverse() @ g)
    ad = lie.adjoint(*lie.exp_se3(eps))
    de = lg.tangent_T_inverse(eps) @ (ad @ J)
    return eps, de


def goal_objective(asm: am.Assembly, cache: am.KinematicsCache, goal: Goal):
    """(0.5 |e|^2, gradient over q) for the IKS objective."""
    e, de = goal_error(asm, cache, goal)
    return 0.5 * float(e @ e), de.T @ e


def goal_distance(asm: am.Assembly, cache: am.KinematicsCache, goal: Goal) -> float:
    e, _ = goal_error(asm, cache, goal)
    return float(np.linalg.norm(e))


# ---------------------------------------------------------------------------
# shared constraint machinery (one feasibility block = one keyframe)


class _FeasibilityBlock:
    """Equilibrium + closure + aperture constraints of one state vector.

    State layout: [q (n_d), u (n_a), lambda_bar (n_c), x_dagger (n_ap)].
    Equality rows: scaled force balance (n_d), closure error (n_c),
    aperture plane crossings c_e (n_ap).  Inequality rows: c_in (n_ap).
    """

    def __init__(self, asm: am.Assembly, apertures: Sequence[ec.Aperture]):
        self.asm = asm
        self.apertures = list(apertures)
        self.n_ap = len(self.apertures)
        self.dim = asm.n_d + asm.n_a + asm.n_c + self.n_ap
        self.n_eq = asm.n_d + asm.n_c + self.n_ap
        self.n_ineq = self.n_ap
        self.scale_f = st.residual_scale(asm)[: asm.n_d]

    def split(self, x: np.ndarray):
        a = self.asm
        q = x[: a.n_d]
        u = x[a.n_d : a.n_d + a.n_a]
        lam = x[a.n_d + a.n_a : a.n_d + a.n_a + a.n_c]
        xd = x[a.n_d + a.n_a + a.n_c :]
        return q, u, lam, xd

    def state(self, x: np.ndarray) -> st.EquilibriumState:
        q, u, lam, _ = self.split(x)
        return st.EquilibriumState(q.copy(), u.copy(), lam.copy())

    def bounds(self):
        a = self.asm
        lo = np.concatenate(
            [a.q_lower, np.full(a.n_a, -np.inf), np.full(a.n_c, -np.inf), np.zeros(self.n_ap)]
        )
        hi = np.concatenate(
            [a.q_upper, np.full(a.n_a, np.inf), np.full(a.n_c, np.inf), np.ones(self.n_ap)]
        )
        return lo, hi

    def evaluate(self, x: np.ndarray, second_order: bool = True):
        """All constraint values and Jacobian blocks at one state vector.

        Returns dict with cache, eq (n_eq,), J_eq (n_eq, dim), ineq, J_ineq.
        """
        a = self.asm
        q, u, lam, xd = self.split(x)
        state = st.EquilibriumState(q, u, lam)
        cache = am.forward_kinematics(a, q, second_order=second_order)
        res = st.residual(a, state, cache)
        Jres = st.residual_jacobian(a, state, cache)

        eq = np.zeros(self.n_eq)
        J_eq = np.zeros((self.n_eq, self.dim))
        s = self.scale_f
        eq[: a.n_d] = res.r_force * s
        eq[a.n_d : a.n_d + a.n_c] = res.r_closure
        J_eq[: a.n_d + a.n_c, : a.n_d + a.n_a + a.n_c] = Jres
        J_eq[: a.n_d] *= s[:, None]

        ineq = np.zeros(self.n_ineq)
        J_ineq = np.zeros((self.n_ineq, self.dim))
        if self.n_ap:
            c_e, c_in = ec.aperture_constraints(a, cache, self.apertures, xd)
            dce_dq, dce_dx, dcin_dq, dcin_dx = ec.aperture_constraint_jacobians(
                a, cache, self.apertures, xd
            )
            r0 = a.n_d + a.n_c
            eq[r0:] = c_e
            J_eq[r0:, : a.n_d] = dce_dq
            J_eq[r0:, a.n_d + a.n_a + a.n_c :] = np.diag(dce_dx)
            ineq[:] = c_in
            J_ineq[:, : a.n_d] = dcin_dq
            J_ineq[:, a.n_d + a.n_a + a.n_c :] = np.diag(dcin_dx)
        return {
            "cache": cache,
            "eq": eq,
            "J_eq": J_eq,
            "ineq": ineq,
            "J_ineq": J_ineq,
        }

    def values(self, x: np.ndarray):
        """Constraint values only (first-order kinematics; used by FD mode)."""
        a = self.asm
        q, u, lam, xd = self.split(x)
        state = st.EquilibriumState(q, u, lam)
        cache = am.forward_kinematics(a, q)
        res = st.residual(a, state, cache)
        eq = np.concatenate([res.r_force * self.scale_f, res.r_closure])
        ineq = np.zeros(0)
        if self.n_ap:
            c_e, c_in = ec.aperture_constraints(a, cache, self.apertures, xd)
            eq = np.concatenate([eq, c_e])
            ineq = c_in
        return eq, ineq, cache

    def max_violation(self, x: np.ndarray) -> float:
        out = self.evaluate(x, second_order=False)
        v = float(np.abs(out["eq"]).max(initial=0.0))
        if self.n_ineq:
            v = max(v, float(np.maximum(out["ineq"], 0.0).max(initial=0.0)))
        return v


def _memoized(fn):
    last = {"x": None, "out": None}

    def wrapped(x):
        if last["x"] is None or not np.array_equal(x, last["x"]):
            last["x"] = np.array(x, copy=True)
            last["out"] = fn(last["x"])
        return last["out"]

    return wrapped


def find_plane_crossings(asm: am.Assembly, cache: am.KinematicsCache, link: int, plane_z: float):
    """Abscissae where the link centerline crosses the plane z = plane_z.

    Scans grid segments for sign changes and refines each by bisection on
    the interpolated centerline.  Sorted ascending.
    """
    pts = asm.grid(link).points
    z = np.array([ec.position_at(asm, cache, link, float(x))[2] for x in pts])
    f = z - plane_z
    crossings = []
    for j in range(len(pts) - 1):
        if f[j] == 0.0:
            crossings.append(float(pts[j]))
            continue
        if f[j] * f[j + 1] < 0.0:
            a, b = float(pts[j]), float(pts[j + 1])
            fa = f[j]
            for _ in range(60):
                mid = 0.5 * (a + b)
                fm = ec.position_at(asm, cache, link, mid)[2] - plane_z
                if fa * fm <= 0.0:
                    b = mid
                else:
                    a, fa = mid, fm
            crossings.append(0.5 * (a + b))
    if f[-1] == 0.0:
        crossings.append(float(pts[-1]))
    return sorted(crossings)


def initial_x_daggers(asm: am.Assembly, cache: am.KinematicsCache, apertures) -> np.ndarray:
    """Initial intersection abscissae: nearest plane crossing per aperture.

    Ties and no-crossing cases fall back to the abscissa whose point is
    closest to the aperture plane (smaller X-dagger wins ties).
    """
    xd = np.empty(len(apertures))
    for k, ap in enumerate(apertures):
        crossings = find_plane_crossings(asm, cache, ap.link, ap.plane_z)
        if crossings:
            pos = [ec.position_at(asm, cache, ap.link, c) for c in crossings]
            dists = [np.linalg.norm(p[:2] - ap.center) for p in pos]
            xd[k] = crossings[int(np.argmin(dists))]
        else:
            pts = asm.grid(ap.link).points
            z = np.array([ec.position_at(asm, cache, ap.link, float(x))[2] for x in pts])
            xd[k] = float(pts[int(np.argmin(np.abs(z - ap.plane_z)))])
    return xd


# ---------------------------------------------------------------------------
# inverse kinetostatics


@dataclass
class IksResult:
    state: st.EquilibriumState
    x_daggers: np.ndarray
    report: nlp.SolverReport
    objective: float
    goal_distance: float


def _refine_x_daggers(asm, cache, apertures, xd, tol=1e-12):
    """1-D Newton per aperture driving c_e(X-dagger) to zero."""
    xd = np.array(xd, dtype=float)
    for k, ap in enumerate(apertures):
        x = float(np.clip(xd[k], 0.0, 1.0))
        for _ in range(60):
            c = ap.plane_z - ec.position_at(asm, cache, ap.link, x)[2]
            if abs(c) < tol:
                break
            dz = ec.position_derivative_x(asm, cache, ap.link, x)[2]
            if dz == 0.0:
                break
            x = float(np.clip(x + c / dz, 0.0, 1.0))
        xd[k] = x
    return xd


def _fd_jacobian(value_fn, x, step: float = 1e-6):
    """Central-difference Jacobian of a vector-valued function of x."""
    v0 = np.atleast_1d(value_fn(x))
    J = np.zeros((len(v0), len(x)))
    for i in range(len(x)):
        h = step * max(1.0, abs(x[i]))
        dx = np.zeros(len(x))
        dx[i] = h
        J[:, i] = (np.atleast_1d(value_fn(x + dx)) - np.atleast_1d(value_fn(x - dx))) / (2 * h)
    return J


def iks_problem(
    asm: am.Assembly,
    goal: Goal,
    apertures: Sequence[ec.Aperture],
    x0: st.EquilibriumState,
    x_daggers0: Optional[np.ndarray] = None,
    fd_derivatives: bool = False,
):
    """Build the inverse-kinetostatics NLP.

    Returns (problem, xvec0, block) with the decision vector laid out as
    (q, u, lambda_bar, X-dagger).  fd_derivatives=True replaces every
    analytical gradient/Jacobian with central finite differences
    (benchmark/verification mode).
    """
    block = _FeasibilityBlock(asm, apertures)
    cache0 = am.forward_kinematics(asm, x0.q)
    if x_daggers0 is None:
        x_daggers0 = initial_x_daggers(asm, cache0, apertures) if block.n_ap else np.zeros(0)
    xvec0 = np.concatenate([x0.q, x0.u, x0.lambda_bar, x_daggers0])

    if fd_derivatives:
        values = _memoized(lambda x: block.values(x))

        def obj_value(x):
            return goal_objective(asm, values(x)[2], goal)[0]

        def objective(x):
            return obj_value(x), _fd_jacobian(lambda y: obj_value(y), x)[0]

        def equality(x):
            return values(x)[0], _fd_jacobian(lambda y: block.values(y)[0], x)

        def inequality(x):
            return values(x)[1], _fd_jacobian(lambda y: block.values(y)[1], x)

    else:
        evaluate = _memoized(lambda x: block.evaluate(x))

        def objective(x):
            out = evaluate(x)
            f, gq = goal_objective(asm, out["cache"], goal)
            g = np.zeros(block.dim)
            g[: asm.n_d] = gq
            return f, g

        def equality(x):
            out = evaluate(x)
            return out["eq"], out["J_eq"]

        def inequality(x):
            out = evaluate(x)
            return out["ineq"], out["J_ineq"]

    lo, hi = block.bounds()
    problem = nlp.NlpProblem(
        n=block.dim,
        objective=objective,
        n_eq=block.n_eq,
        equality=equality,
        n_ineq=block.n_ineq,
        inequality=inequality if block.n_ineq else None,
        lower=lo,
        upper=hi,
    )
    return problem, xvec0, block


def solve_iks(
    asm: am.Assembly,
    goal: Goal,
    apertures: Sequence[ec.Aperture],
    x0: st.EquilibriumState,
    x_daggers0: Optional[np.ndarray] = None,
    options: Optional[nlp.SolveOptions] = None,
    unreachable_tol: float = 1e-6,
    fd_derivatives: bool = False,
) -> IksResult:
    """Constrained equilibrium minimizing the goal distance.

    Decision vector (q, u, lambda_bar, X-dagger); constraints are the full
    equilibrium + closure + aperture set; the converged state is re-projected
    onto the equilibrium manifold so the reported residual is Newton-tight.
    Raises GoalUnreachable when the solver converges with the end effector
    still farther than unreachable_tol from the goal.  fd_derivatives=True
    replaces every analytical gradient/Jacobian with central finite
    differences (benchmark/verification mode).
    """
    problem, xvec0, block = iks_problem(
        asm, goal, apertures, x0, x_daggers0, fd_derivatives
    )
    options = options or nlp.SolveOptions(tol_stationarity=1e-10)
    xsol, report = nlp.solve(problem, xvec0, options)

    state = block.state(xsol)
    _, _, _, xd = block.split(xsol)
    # polish: exact equilibrium at the solved actuated configuration, then
    # exact plane crossings for the intersection variables
    try:
        state = st.solve_forward_statics(asm, state.q[asm.actuated_idx], state)
    except (NoConvergence, AngleNearPi):
        pass
    cache = am.forward_kinematics(asm, state.q)
    xd = _refine_x_daggers(asm, cache, apertures, xd) if block.n_ap else xd
    f, _ = goal_objective(asm, cache, goal)
    dist = goal_distance(asm, cache, goal)
    if report.status in ("converged", "max_iter") and dist > unreachable_tol:
        raise GoalUnreachable(
            f"solver finished ({report.status}) with goal distance {dist:.3e} "
            f"> {unreachable_tol:.3e}"
        )
    return IksResult(state=state, x_daggers=np.asarray(xd), report=report, objective=f, goal_distance=dist)


# ---------------------------------------------------------------------------
# trajectory optimization


@dataclass(frozen=True)
class PathWeights:
    """PSD weights of the keyframe-difference cost (defaults: identity)."""

    Q_q: Optional[np.ndarray] = None
    Q_u: Optional[np.ndarray] = None
    Q_lam: Optional[np.ndarray] = None

    def materialize(self, asm: am.Assembly):
        Qq = np.eye(asm.n_d) if self.Q_q is None else np.asarray(self.Q_q, float)
        Qu = np.eye(asm.n_a) if self.Q_u is None else np.asarray(self.Q_u, float)
        Ql = np.eye(asm.n_c) if self.Q_lam is None else np.asarray(self.Q_lam, float)
        return Qq, Qu, Ql


@dataclass
class KeyFrame:
    q: np.ndarray
    u: np.ndarray
    lambda_bar: np.ndarray
    x_daggers: np.ndarray

    def state(self) -> st.EquilibriumState:
        return st.EquilibriumState(self.q.copy(), self.u.copy(), self.lambda_bar.copy())


@dataclass
class Trajectory:
    keyframes: List[KeyFrame]  # index 0 is the fixed initial state
    report: nlp.SolverReport
    residuals: np.ndarray  # per-keyframe max constraint violation (1..N)
    terminal_distance: float
    cost: float


def warm_start(x0: np.ndarray, xf: np.ndarray, n_keyframes: int) -> np.ndarray:
    """Linear interpolation x_k = x0 (1 - k/N) + xf (k/N), rows k = 0..N."""
    x0 = np.asarray(x0, dtype=float)
    xf = np.asarray(xf, dtype=float)
    if x0.shape != xf.shape:
        raise DimensionMismatch("warm_start endpoints must have equal shapes")
    ts = np.arange(n_keyframes + 1) / n_keyframes
    return x0[None, :] * (1.0 - ts)[:, None] + xf[None, :] * ts[:, None]


def path_cost(keyframes: Sequence[KeyFrame], asm: am.Assembly, weights: PathWeights = PathWeights()):
    """Sum of weighted squared differences between consecutive keyframes.

    Returns (cost, gradient) with the gradient laid out over the decision
    keyframes 1..N in _FeasibilityBlock order; X-dagger entries carry no
    cost.  Interior keyframes get the two-sided difference terms, the last
    keyframe only the trailing one.
    """
    Qq, Qu, Ql = weights.materialize(asm)
    n_ap = len(keyframes[0].x_daggers)
    dim = asm.n_d + asm.n_a + asm.n_c + n_ap
    N = len(keyframes) - 1
    cost = 0.0
    grad = np.zeros(N * dim)
    for k in range(1, N + 1):
        dq = keyframes[k].q - keyframes[k - 1].q
        du = keyframes[k].u - keyframes[k - 1].u
        dl = keyframes[k].lambda_bar - keyframes[k - 1].lambda_bar
        cost += float(dq @ Qq @ dq + du @ Qu @ du + dl @ Ql @ dl)
        gq, gu, gl = 2.0 * (Qq @ dq), 2.0 * (Qu @ du), 2.0 * (Ql @ dl)
        o = (k - 1) * dim
        grad[o : o + asm.n_d] += gq
        grad[o + asm.n_d : o + asm.n_d + asm.n_a] += gu
        grad[o + asm.n_d + asm.n_a : o + asm.n_d + asm.n_a + asm.n_c] += gl
        if k >= 2:
            p = (k - 2) * dim
            grad[p : p + asm.n_d] -= gq
            grad[p + asm.n_d : p + asm.n_d + asm.n_a] -= gu
            grad[p + asm.n_d + asm.n_a : p + asm.n_d + asm.n_a + asm.n_c] -= gl
    return cost, grad


def _keyframes_from_vector(block: _FeasibilityBlock, kf0: KeyFrame, xvec: np.ndarray) -> List[KeyFrame]:
    N = len(xvec) // block.dim
    frames = [kf0]
    for k in range(N):
        q, u, lam, xd = block.split(xvec[k * block.dim : (k + 1) * block.dim])
        frames.append(KeyFrame(q.copy(), u.copy(), lam.copy(), xd.copy()))
    return frames


def trajopt_problem(
    asm: am.Assembly,
    goal: Goal,
    apertures: Sequence[ec.Aperture],
    x0: st.EquilibriumState,
    n_keyframes: int,
    weights: PathWeights = PathWeights(),
):
    """Build the direct-transcription NLP over N keyframes.

    Returns (problem, kf0, block); the decision vector stacks N per-keyframe
    blocks (q, u, lambda_bar, X-dagger) and the terminal goal rows attach to
    the last block only.
    """
    block = _FeasibilityBlock(asm, apertures)
    N = n_keyframes
    dim = block.dim
    cache0 = am.forward_kinematics(asm, x0.q)
    xd0 = initial_x_daggers(asm, cache0, apertures) if block.n_ap else np.zeros(0)
    kf0 = KeyFrame(x0.q.copy(), x0.u.copy(), x0.lambda_bar.copy(), xd0)

    n_goal = 3 if goal.kind == "position" else 6
    n_eq = N * block.n_eq + n_goal
    n_ineq = N * block.n_ineq

    def eval_all(xvec):
        eq = np.zeros(n_eq)
        ineq = np.zeros(n_ineq)
        J_eq = sparse.lil_matrix((n_eq, N * dim))
        J_ineq = sparse.lil_matrix((n_ineq, N * dim))
        caches = []
        for k in range(N):
            xk = xvec[k * dim : (k + 1) * dim]
            out = block.evaluate(xk)
            caches.append(out["cache"])
            r0, c0 = k * block.n_eq, k * dim
            eq[r0 : r0 + block.n_eq] = out["eq"]
            J_eq[r0 : r0 + block.n_eq, c0 : c0 + dim] = out["J_eq"]
            if block.n_ineq:
                s0 = k * block.n_ineq
                ineq[s0 : s0 + block.n_ineq] = out["ineq"]
                J_ineq[s0 : s0 + block.n_ineq, c0 : c0 + dim] = out["J_ineq"]
        # terminal goal rows couple only the last keyframe's q
        e, de = goal_error(asm, caches[-1], goal)
        r0, c0 = N * block.n_eq, (N - 1) * dim
        eq[r0:] = e
        J_eq[r0:, c0 : c0 + asm.n_d] = de
        return eq, J_eq.tocsr(), ineq, J_ineq.tocsr(), caches

    evaluate = _memoized(eval_all)

    def objective(xvec):
        frames = _keyframes_from_vector(block, kf0, xvec)
        return path_cost(frames, asm, weights)

    def equality(xvec):
        eq, J_eq, _, _, _ = evaluate(xvec)
        return eq, J_eq

    def inequality(xvec):
        _, _, ineq, J_ineq, _ = evaluate(xvec)
        return ineq, J_ineq

    lo1, hi1 = block.bounds()
    problem = nlp.NlpProblem(
        n=N * dim,
        objective=objective,
        n_eq=n_eq,
        equality=equality,
        n_ineq=n_ineq,
        inequality=inequality if n_ineq else None,
        lower=np.tile(lo1, N),
        upper=np.tile(hi1, N),
    )
    return problem, kf0, block


def solve_trajopt(
    asm: am.Assembly,
    goal: Goal,
    apertures: Sequence[ec.Aperture],
    x0: st.EquilibriumState,
    n_keyframes: int = 10,
    weights: PathWeights = PathWeights(),
    xf: Optional[IksResult] = None,
    options: Optional[nlp.SolveOptions] = None,
    warm: bool = True,
) -> Trajectory:
    """Direct transcription over N keyframes with a terminal goal constraint.

    Each keyframe contributes an independent equality/inequality block so
    the constraint Jacobian is block-diagonal (assembled sparse).  The warm
    start linearly interpolates between x0 and the IKS solution.
    """
    N = n_keyframes
    if warm and xf is None:
        xf = solve_iks(asm, goal, apertures, x0)
    problem, kf0, block = trajopt_problem(asm, goal, apertures, x0, N, weights)
    dim = block.dim

    v0 = np.concatenate([kf0.q, kf0.u, kf0.lambda_bar, kf0.x_daggers])
    if warm:
        vf = np.concatenate([xf.state.q, xf.state.u, xf.state.lambda_bar, xf.x_daggers])
        rows = warm_start(v0, vf, N)[1:]
    else:
        rows = np.tile(v0, (N, 1))
    xvec0 = rows.reshape(-1)

    options = options or nlp.SolveOptions(max_iter=2000)
    xsol, report = nlp.solve(problem, xvec0, options)

    frames = _keyframes_from_vector(block, kf0, xsol)
    # polish every keyframe back onto the equilibrium manifold
    for k in range(1, N + 1):
        try:
            state = st.solve_forward_statics(
                asm, frames[k].q[asm.actuated_idx], frames[k].state()
            )
        except (NoConvergence, AngleNearPi):
            continue
        cache_k = am.forward_kinematics(asm, state.q)
        xd = (
            _refine_x_daggers(asm, cache_k, apertures, frames[k].x_daggers)
            if block.n_ap
            else frames[k].x_daggers
        )
        frames[k] = KeyFrame(state.q, state.u, state.lambda_bar, np.asarray(xd))

    # terminal polish: if the goal rows did not reach tolerance, re-solve the
    # last keyframe as an IKS instance seeded from it
    cache_N = am.forward_kinematics(asm, frames[-1].q)
    if goal_distance(asm, cache_N, goal) > 1e-6:
        try:
            polished = solve_iks(
                asm, goal, apertures, frames[-1].state(),
                x_daggers0=frames[-1].x_daggers if block.n_ap else np.zeros(0),
            )
            frames[-1] = KeyFrame(
                polished.state.q, polished.state.u, polished.state.lambda_bar,
                polished.x_daggers,
            )
        except (GoalUnreachable, NoConvergence, AngleNearPi):
            pass

    residuals = np.zeros(N)
    for k in range(1, N + 1):
        kf = frames[k]
        xk = np.concatenate([kf.q, kf.u, kf.lambda_bar, kf.x_daggers])
        residuals[k - 1] = block.max_violation(xk)
    cache_N = am.forward_kinematics(asm, frames[-1].q)
    term = goal_distance(asm, cache_N, goal)
    cost, _ = path_cost(frames, asm, weights)
    return Trajectory(
        keyframes=frames,
        report=report,
        residuals=residuals,
        terminal_distance=term,
        cost=cost,
    )


# ---------------------------------------------------------------------------
# bidirectional RRT baseline


@dataclass
class RrtOptions:
    step: float = 0.1  # joint-space extension step (rad)
    goal_bias: float = 0.10
    max_iter: int = 5000
    edge_checks: int = 5  # interior interpolation points per edge
    connect_tol: float = 1e-3  # joint distance considered "connected"
    edge_closure_tol: float = 1e-3  # allowed closure drift along edges
    seed: int = 0
    sample_halfwidth: float = np.pi  # sampling box for unlimited joints


@dataclass
class _Node:
    state: st.EquilibriumState
    parent: int


def _edge_feasible(asm, apertures, state_a, state_b, options) -> bool:
    """Check m interpolated strain configurations along an edge.

    Full coordinate vectors are interpolated linearly; interior points are
    only approximately at equilibrium, so apertures are checked geometrically
    (every plane crossing of the target link inside the hole) and closure
    drift is bounded by edge_closure_tol.
    """
    m = options.edge_checks
    for i in range(1, m + 1):
        t = i / (m + 1.0)
        q = (1.0 - t) * state_a.q + t * state_b.q
        try:
            cache = am.forward_kinematics(asm, q)
        except AngleNearPi:
            return False
        if asm.n_c:
            e_c = am.closure_error(asm, cache)
            if np.abs(e_c).max() > options.edge_closure_tol:
                return False
        for ap in apertures:
            crossings = find_plane_crossings(asm, cache, ap.link, ap.plane_z)
            rho = asm.links[ap.link].geometry.cross_section.radius
            for c in crossings:
                p = ec.position_at(asm, cache, ap.link, c)
                if np.linalg.norm(p[:2] - ap.center) > ap.radius - rho:
                    return False
    return True


def _state_feasible(asm, apertures, state, options) -> bool:
    cache = am.forward_kinematics(asm, state.q)
    for ap in apertures:
        crossings = find_plane_crossings(asm, cache, ap.link, ap.plane_z)
        rho = asm.links[ap.link].geometry.cross_section.radius
        for c in crossings:
            p = ec.position_at(asm, cache, ap.link, c)
            if np.linalg.norm(p[:2] - ap.center) > ap.radius - rho:
                return False
    return True


def _nearest(tree: List[_Node], q_a: np.ndarray, idx) -> int:
    d = [float(np.linalg.norm(n.state.q[idx] - q_a)) for n in tree]
    return int(np.argmin(d))


def _extend(asm, apertures, tree, q_target, options) -> Optional[int]:
    """One step of length <= step from the nearest node toward q_target."""
    idx = asm.actuated_idx
    ni = _nearest(tree, q_target, idx)
    q_near = tree[ni].state.q[idx]
    delta = q_target - q_near
    dist = float(np.linalg.norm(delta))
    if dist < 1e-12:
        return None
    q_cand = q_target if dist <= options.step else q_near + options.step * delta / dist
    q_cand = np.clip(q_cand, asm.q_lower[idx], asm.q_upper[idx])
    try:
        state = st.project_to_manifold(asm, q_cand, tree[ni].state)
    except (NoConvergence, AngleNearPi):
        return None
    if not _state_feasible(asm, apertures, state, options):
        return None
    if not _edge_feasible(asm, apertures, tree[ni].state, state, options):
        return None
    tree.append(_Node(state, ni))
    return len(tree) - 1


def _connect(asm, apertures, tree, q_target, options) -> Optional[int]:
    """Greedy repeated extension toward q_target until blocked or reached."""
    idx = asm.actuated_idx
    last = None
    for _ in range(options.max_iter):
        ni = _extend(asm, apertures, tree, q_target, options)
        if ni is None:
            return last if _reached(tree, last, q_target, idx, options) else None
        last = ni
        if float(np.linalg.norm(tree[ni].state.q[idx] - q_target)) <= options.connect_tol:
            return ni
    return None


def _reached(tree, ni, q_target, idx, options) -> bool:
    if ni is None:
        return False
    return float(np.linalg.norm(tree[ni].state.q[idx] - q_target)) <= options.connect_tol


def _branch(tree: List[_Node], ni: int) -> List[st.EquilibriumState]:
    out = []
    while ni >= 0:
        out.append(tree[ni].state)
        ni = tree[ni].parent
    return out[::-1]


@dataclass
class RrtResult:
    path: List[st.EquilibriumState]
    iterations: int
    n_nodes: int
    wall_time: float
    seed: int
    options: RrtOptions = field(repr=False, default=None)


def birrt_plan(
    asm: am.Assembly,
    start: st.EquilibriumState,
    goal_state: st.EquilibriumState,
    apertures: Sequence[ec.Aperture] = (),
    options: Optional[RrtOptions] = None,
) -> RrtResult:
    """Bidirectional RRT over the actuated joints with equilibrium projection.

    Two trees rooted at the start and goal equilibria grow alternately; each
    sample is either uniform in the joint box or (with probability
    goal_bias) the opposite tree's root.  New nodes are equilibrium
    projections of the stepped joint vector; edges are checked at
    edge_checks interpolated configurations.  After every added node a
    greedy connect is attempted from the other tree.  Deterministic for a
    fixed options.seed.  Raises GoalUnreachable after max_iter iterations.
    """
    options = options or RrtOptions()
    idx = asm.actuated_idx
    rng = np.random.default_rng(options.seed)
    t_start = time.perf_counter()

    q_goal = goal_state.q[idx]
    q_start = start.q[idx]
    if float(np.linalg.norm(q_goal - q_start)) <= options.connect_tol:
        return RrtResult([start], 0, 1, time.perf_counter() - t_start, options.seed, options)

    lo = np.where(np.isfinite(asm.q_lower[idx]), asm.q_lower[idx], q_start - options.sample_halfwidth)
    hi = np.where(np.isfinite(asm.q_upper[idx]), asm.q_upper[idx], q_start + options.sample_halfwidth)

    tree_s: List[_Node] = [_Node(start, -1)]
    tree_g: List[_Node] = [_Node(goal_state, -1)]
    grow_from_start = True
    for it in range(1, options.max_iter + 1):
        tree_a, tree_b = (tree_s, tree_g) if grow_from_start else (tree_g, tree_s)
        if rng.uniform() < options.goal_bias:
            q_rand = tree_b[0].state.q[idx].copy()
        else:
            q_rand = rng.uniform(lo, hi)
        ni = _extend(asm, apertures, tree_a, q_rand, options)
        if ni is not None:
            q_new = tree_a[ni].state.q[idx]
            nj = _connect(asm, apertures, tree_b, q_new, options)
            if nj is not None and _reached(tree_b, nj, q_new, idx, options):
                branch_a = _branch(tree_a, ni)
                branch_b = _branch(tree_b, nj)
                if grow_from_start:
                    path = branch_a + branch_b[::-1]
                else:
                    path = branch_b + branch_a[::-1]
                return RrtResult(
                    path,
                    it,
                    len(tree_s) + len(tree_g),
                    time.perf_counter() - t_start,
                    options.seed,
                    options,
                )
        grow_from_start = not grow_from_start
    raise GoalUnreachable(
        f"bidirectional RRT found no path in {options.max_iter} iterations"
    )


# ---------------------------------------------------------------------------
# trajectory utilities


def resample_dense(
    keyframes: Sequence[KeyFrame],
    asm: am.Assembly,
    segment_time: float = 10.0,
    dwell_time: float = 5.0,
    rate: float = 100.0,
):
    """Timed piecewise-linear actuated-joint commands.

    Each keyframe transition takes segment_time seconds of linear motion
    followed by dwell_time seconds of hold; sampling at `rate` Hz.  Returns
    (times, q_a samples) with endpoints matching the keyframes exactly.
    """
    idx = asm.actuated_idx
    qs = [kf.q[idx] for kf in keyframes]
    dt = 1.0 / rate
    times = [0.0]
    samples = [qs[0]]
    t0 = 0.0
    for k in range(len(qs) - 1):
        span = segment_time + dwell_time
        n = int(round(span * rate))
        for i in range(1, n + 1):
            t = i * dt
            frac = min(t / segment_time, 1.0)
            times.append(t0 + t)
            samples.append((1.0 - frac) * qs[k] + frac * qs[k + 1])
        t0 += span
    return np.array(times), np.vstack(samples)


def marker_error(markers_sim, markers_ref) -> float:
    """Mean over frames of the mean Euclidean marker distance (meters)."""
    a = np.asarray(markers_sim, dtype=float)
    b = np.asarray(markers_ref, dtype=float)
    if a.shape != b.shape or a.ndim != 3 or a.shape[2] != 3:
        raise DimensionMismatch("marker arrays must both be (n_frames, n_markers, 3)")
    d = np.linalg.norm(a - b, axis=2)
    return float(d.mean(axis=1).mean())

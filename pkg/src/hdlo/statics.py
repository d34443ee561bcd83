"""Static equilibrium: residual, analytical Jacobian, Newton solves.

The equilibrium condition is

    K q - F(q) - B u - Abar(q)^T lambda_bar = 0
    e_c(q) = 0

with Abar the tangent-operator-free closure Jacobian.  Forward statics pins
the actuated coordinates and solves for the passive coordinates and the
multipliers; the inputs u are recovered afterwards as the generalized force
on the actuated coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hdlo import assembly as am
from hdlo.errors import AngleNearPi, NoConvergence


@dataclass
class EquilibriumState:
    q: np.ndarray
    u: np.ndarray
    lambda_bar: np.ndarray

    def copy(self) -> "EquilibriumState":
        return EquilibriumState(self.q.copy(), self.u.copy(), self.lambda_bar.copy())


@dataclass
class StaticsResidual:
    r_force: np.ndarray  # n_d
    r_closure: np.ndarray  # n_c

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.r_force, self.r_closure])


def zero_state(asm: am.Assembly) -> EquilibriumState:
    return EquilibriumState(
        np.zeros(asm.n_d), np.zeros(asm.n_a), np.zeros(asm.n_c)
    )


def residual(asm: am.Assembly, state: EquilibriumState, cache=None) -> StaticsResidual:
    """[Kq - F(q) - Bu - Abar^T lam; e_c(q)]."""
    if cache is None:
        cache = am.forward_kinematics(asm, state.q)
    K = am.stiffness(asm)
    F = am.gravity_force(asm, cache)
    B = am.input_matrix(asm)
    r_f = K @ state.q - F - B @ state.u
    e_c = am.closure_error(asm, cache)
    if asm.n_c:
        abar = am.closure_jacobian(asm, cache)
        r_f -= abar.T @ state.lambda_bar
    return StaticsResidual(r_f, e_c)


def residual_scale(asm: am.Assembly) -> np.ndarray:
    """Row scaling 1/max(1, K_ii) for the force rows, 1 for closure rows.

    Strain coordinates carry stiffness entries up to EA*l, so raw residual
    entries at a given configuration error differ by many orders of
    magnitude between joint and strain rows; scaled norms put them on equal
    footing and every convergence test in the package uses them.
    """
    K = am.stiffness(asm)
    s = np.ones(asm.n_d + asm.n_c)
    s[: asm.n_d] = 1.0 / np.maximum(1.0, np.abs(np.diag(K)))
    return s


def residual_norm(asm: am.Assembly, state: EquilibriumState, cache=None) -> float:
    """Scaled infinity norm of the stacked residual."""
    r = residual(asm, state, cache).stacked()
    return float(np.abs(r * residual_scale(asm)).max())


def residual_jacobian(
    asm: am.Assembly,
    state: EquilibriumState,
    cache=None,
    fd_blocks: bool = False,
    fd_step: float = 1e-6,
) -> np.ndarray:
    """Analytical Jacobian of the stacked residual w.r.t. (q, u, lambda_bar).

    Shape (n_d + n_c, n_d + n_a + n_c).  With fd_blocks=True the
    configuration-curvature blocks dF/dq and d(Abar^T lam)/dq are replaced
    by central finite differences (testing fallback; the e_c row block stays
    analytic either way).
    """
    if cache is None or (fd_blocks is False and not cache.second_order):
        cache = am.forward_kinematics(asm, state.q, second_order=not fd_blocks)
    n_d, n_a, n_c = asm.n_d, asm.n_a, asm.n_c
    K = am.stiffness(asm)
    B = am.input_matrix(asm)
    J = np.zeros((n_d + n_c, n_d + n_a + n_c))

    if fd_blocks:
        dF = np.zeros((n_d, n_d))
        dAtl = np.zeros((n_d, n_d))
        for k in range(n_d):
            dq = np.zeros(n_d)
            dq[k] = fd_step
            cp = am.forward_kinematics(asm, state.q + dq)
            cm = am.forward_kinematics(asm, state.q - dq)
            dF[:, k] = (am.gravity_force(asm, cp) - am.gravity_force(asm, cm)) / (2 * fd_step)
            if n_c:
                ap = am.closure_jacobian(asm, cp).T @ state.lambda_bar
                amx = am.closure_jacobian(asm, cm).T @ state.lambda_bar
                dAtl[:, k] = (ap - amx) / (2 * fd_step)
    else:
        dF = am.gravity_jacobian(asm, cache)
        dAtl = (
            am.closure_force_jacobian(asm, cache, state.lambda_bar)
            if n_c
            else np.zeros((n_d, n_d))
        )

    J[:n_d, :n_d] = K - dF - dAtl
    J[:n_d, n_d : n_d + n_a] = -B
    if n_c:
        abar = am.closure_jacobian(asm, cache)
        J[:n_d, n_d + n_a :] = -abar.T
        J[n_d:, :n_d] = am.closure_error_jacobian(asm, cache)
    return J


def _newton_step(J: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Solve J step = -r; falls back to least squares when J is singular.

    The square solve keeps the conditioning of J itself; forming normal
    equations here was observed to stall the line search on stiff closures.
    """
    try:
        return np.linalg.solve(J, -r)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(J, -r, rcond=None)[0]


def _u_from_force_balance(asm, state, cache) -> np.ndarray:
    """Inputs that zero the actuated rows of the force balance."""
    K = am.stiffness(asm)
    F = am.gravity_force(asm, cache)
    g = K @ state.q - F
    if asm.n_c:
        g -= am.closure_jacobian(asm, cache).T @ state.lambda_bar
    return g[asm.actuated_idx]


def solve_forward_statics(
    asm: am.Assembly,
    q_a_fixed,
    seed: EquilibriumState,
    tol: float = 1e-9,
    max_iter: int = 100,
    fd_blocks: bool = False,
) -> EquilibriumState:
    """Damped-Newton forward statics with the actuated coordinates pinned.

    Unknowns are the passive coordinates and the closure multipliers; a
    backtracking (Armijo) line search on the squared scaled residual
    globalizes the iteration.  Raises NoConvergence when the budget runs
    out; AngleNearPi propagates if even the seed is outside the log chart.
    """
    q_a_fixed = np.asarray(q_a_fixed, dtype=float)
    if q_a_fixed.shape != (asm.n_a,):
        raise ValueError(f"q_a_fixed must have shape ({asm.n_a},)")
    passive = np.flatnonzero(~asm.actuated_mask)
    n_p, n_c = len(passive), asm.n_c
    scale = residual_scale(asm)
    rows = np.concatenate([passive, np.arange(asm.n_d, asm.n_d + n_c)]).astype(int)

    state = seed.copy()
    state.q[asm.actuated_idx] = q_a_fixed

    def eval_r(st):
        cache = am.forward_kinematics(asm, st.q)
        r = residual(asm, st, cache).stacked()
        return cache, r

    K = am.stiffness(asm)

    def converged(st, r_raw):
        # actuated force rows are satisfied exactly by the u recovery below,
        # so convergence is measured on the passive and closure rows only
        if not len(rows):
            return True
        lim = tol * max(1.0, float(np.abs(K @ st.q).max()))
        return float(np.abs(r_raw[rows]).max()) < lim

    cache, r = eval_r(state)
    r_red = (r * scale)[rows]
    phi = 0.5 * float(r_red @ r_red)
    it = 0
    if not converged(state, r):
        for it in range(1, max_iter + 1):
            Jfull = residual_jacobian(asm, state, fd_blocks=fd_blocks)
            cols = np.concatenate([passive, np.arange(asm.n_d + asm.n_a, asm.n_d + asm.n_a + n_c)]).astype(int)
            Jred = (Jfull * scale[:, None])[np.ix_(rows, cols)]
            step = _newton_step(Jred, r_red)
            alpha = 1.0
            accepted = False
            g_dot = float((Jred.T @ r_red) @ step)
            for _ in range(40):
                trial = state.copy()
                trial.q[passive] += alpha * step[:n_p]
                trial.lambda_bar = state.lambda_bar + alpha * step[n_p:]
                try:
                    cache_t, r_t = eval_r(trial)
                except AngleNearPi:
                    alpha *= 0.5
                    continue
                r_red_t = (r_t * scale)[rows]
                phi_t = 0.5 * float(r_red_t @ r_red_t)
                if phi_t <= phi + 1e-4 * alpha * g_dot or phi_t < phi:
                    state, cache, r, r_red, phi = trial, cache_t, r_t, r_red_t, phi_t
                    accepted = True
                    break
                alpha *= 0.5
            if converged(state, r):
                break
            if not accepted:
                raise NoConvergence(it, float(np.abs(r[rows]).max()))
        else:
            raise NoConvergence(max_iter, float(np.abs(r[rows]).max()))

    state.u = _u_from_force_balance(asm, state, cache)
    return state


def project_to_manifold(
    asm: am.Assembly,
    q_a_candidate,
    seed: EquilibriumState,
    tol: float = 1e-9,
    max_iter: int = 100,
) -> EquilibriumState:
    """Equilibrium-manifold projection used by the sampling planner.

    Same contract as solve_forward_statics; the sampler treats NoConvergence
    as an infeasible extension.
    """
    return solve_forward_statics(asm, q_a_candidate, seed, tol=tol, max_iter=max_iter)


def solve_effort_statics(
    asm: am.Assembly,
    u_fixed,
    seed: EquilibriumState,
    tol: float = 1e-9,
    max_iter: int = 100,
) -> EquilibriumState:
    """Effort-driven solve: u prescribed, all of q and lambda_bar free.

    Provided for completeness; the planners pin q_a instead.
    """
    u_fixed = np.asarray(u_fixed, dtype=float)
    scale = residual_scale(asm)
    state = seed.copy()
    state.u = u_fixed.copy()
    n_d, n_c = asm.n_d, asm.n_c

    def eval_r(st):
        cache = am.forward_kinematics(asm, st.q)
        return cache, residual(asm, st, cache).stacked()

    cache, r = eval_r(state)
    phi = 0.5 * float((r * scale) @ (r * scale))
    K = am.stiffness(asm)
    for it in range(1, max_iter + 1):
        if np.abs(r).max() < tol * max(1.0, float(np.abs(K @ state.q).max())):
            return state
        Jfull = residual_jacobian(asm, state)
        cols = np.concatenate([np.arange(n_d), np.arange(n_d + asm.n_a, n_d + asm.n_a + n_c)]).astype(int)
        Jred = (Jfull * scale[:, None])[:, cols]
        step = _newton_step(Jred, r * scale)
        alpha, accepted = 1.0, False
        for _ in range(40):
            trial = state.copy()
            trial.q = state.q + alpha * step[:n_d]
            trial.lambda_bar = state.lambda_bar + alpha * step[n_d:]
            try:
                cache_t, r_t = eval_r(trial)
            except AngleNearPi:
                alpha *= 0.5
                continue
            phi_t = 0.5 * float((r_t * scale) @ (r_t * scale))
            if phi_t < phi:
                state, cache, r, phi = trial, cache_t, r_t, phi_t
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            raise NoConvergence(it, float(np.abs(r).max()))
    raise NoConvergence(max_iter, float(np.abs(r).max()))

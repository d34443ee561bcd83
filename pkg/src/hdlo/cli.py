"""Command-line front end.

Commands: statics, iks, plan, rrt, gradcheck, compare.  Every command is
deterministic given its inputs and seed, writes a self-describing YAML
result file, and exits with 0 on success, 1 on solver non-convergence, 2 on
input errors and 3 when the goal is unreachable.  The HDLO_LOG environment
variable sets the log level (debug, info, warning, ...).
"""

from __future__ import annotations

import functools
import logging
import os
import sys
import time
from typing import Optional

import click
import numpy as np

from hdlo import assembly as am
from hdlo import nlp
from hdlo import planners as pl
from hdlo import scene as sc
from hdlo import statics as st
from hdlo.errors import (
    AngleNearPi,
    GoalUnreachable,
    HdloError,
    MalformedAssembly,
    NoConvergence,
    SceneError,
)

log = logging.getLogger("hdlo")

EXIT_OK = 0
EXIT_NO_CONVERGENCE = 1
EXIT_INPUT_ERROR = 2
EXIT_UNREACHABLE = 3


def _setup_logging():
    level = os.environ.get("HDLO_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _exit_codes(fn):
    """Map domain exceptions onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapped(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (SceneError, MalformedAssembly, OSError) as exc:
            click.echo(f"input error: {exc}", err=True)
            sys.exit(EXIT_INPUT_ERROR)
        except GoalUnreachable as exc:
            click.echo(f"goal unreachable: {exc}", err=True)
            sys.exit(EXIT_UNREACHABLE)
        except (NoConvergence, AngleNearPi) as exc:
            click.echo(f"no convergence: {exc}", err=True)
            sys.exit(EXIT_NO_CONVERGENCE)
        except HdloError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_INPUT_ERROR)

    return wrapped


def _load_scene(path: str, n_p: Optional[int], no_apertures: bool) -> sc.Scene:
    scene = sc.load_scene(path, n_p_override=n_p)
    if no_apertures:
        scene.apertures = []
    return scene


def _start_state(asm: am.Assembly, q_a_start=None) -> st.EquilibriumState:
    q_a = np.zeros(asm.n_a) if q_a_start is None else np.asarray(q_a_start, float)
    if q_a.shape != (asm.n_a,):
        raise SceneError(f"start configuration needs {asm.n_a} actuated values, "
                         f"got {q_a.shape}")
    return st.solve_forward_statics(asm, q_a, st.zero_state(asm))


def _parse_values(text: Optional[str], n: int, what: str) -> np.ndarray:
    if text is None:
        return np.zeros(n)
    try:
        vals = np.array([float(v) for v in text.replace(",", " ").split()])
    except ValueError as exc:
        raise SceneError(f"{what}: {exc}")
    if len(vals) != n:
        raise SceneError(f"{what}: expected {n} values, got {len(vals)}")
    return vals


def _write(out: Optional[str], doc: dict, summary: str):
    if out:
        sc.write_result(out, doc)
    click.echo(summary)


@click.group()
def main():
    """Kinetostatic modeling and planning for hybrid deformable-rigid
    linear-object assemblies."""
    _setup_logging()


scene_opt = click.option("--scene", "scene_path", required=True,
                         type=click.Path(), help="Scene YAML file.")
goal_opt = click.option("--goal", "goal_path", required=True,
                        type=click.Path(), help="Goal YAML file.")
out_opt = click.option("--out", "out_path", type=click.Path(),
                       help="Result YAML file to write.")
np_opt = click.option("--np", "n_p", type=int, default=None,
                      help="Override the per-rod computation grid size.")
no_apertures_opt = click.option("--no-apertures", is_flag=True,
                                help="Drop the scene's aperture constraints.")


@main.command()
@scene_opt
@out_opt
@np_opt
@click.option("--q-a", "q_a_text", default=None,
              help="Actuated joint values (comma/space separated; default zeros).")
@click.option("--fd-fallback", is_flag=True,
              help="Use finite-difference curvature blocks in the Newton solve.")
@_exit_codes
def statics(scene_path, out_path, n_p, q_a_text, fd_fallback):
    """Solve the static equilibrium at fixed actuated joints."""
    scene = _load_scene(scene_path, n_p, False)
    asm = scene.assembly
    q_a = _parse_values(q_a_text, asm.n_a, "--q-a")
    t0 = time.perf_counter()
    state = st.solve_forward_statics(asm, q_a, st.zero_state(asm),
                                     fd_blocks=fd_fallback)
    wall = time.perf_counter() - t0
    sdoc = sc.state_doc(asm, state)
    doc = sc.result_doc(
        "statics", scene,
        options={"q_a": q_a, "n_p": n_p, "fd_fallback": fd_fallback},
        states=[sdoc],
        metrics={"residual": sdoc["residual"], "wall_time": wall},
    )
    _write(out_path, doc, f"equilibrium residual {sdoc['residual']:.3e} "
                          f"in {wall:.3f} s; tip at "
                          f"{np.round(sdoc['end_effector']['translation'], 6).tolist()}")


def _iks_phase(asm, goal, apertures, start, fd=False):
    t0 = time.perf_counter()
    result = pl.solve_iks(asm, goal, apertures, start, fd_derivatives=fd)
    wall = time.perf_counter() - t0
    return result, wall


@main.command()
@scene_opt
@goal_opt
@out_opt
@np_opt
@no_apertures_opt
@click.option("--fd-fallback", is_flag=True,
              help="Replace analytical NLP derivatives with finite differences.")
@_exit_codes
def iks(scene_path, goal_path, out_path, n_p, no_apertures, fd_fallback):
    """Solve the inverse kinetostatics for a goal pose or position."""
    scene = _load_scene(scene_path, n_p, no_apertures)
    asm = scene.assembly
    spec = sc.load_goal(goal_path)
    start = _start_state(asm, spec.q_a_start)
    goal = sc.resolve_goal(asm, start, spec)
    result, wall = _iks_phase(asm, goal, scene.apertures, start, fd=fd_fallback)
    sdoc = sc.state_doc(asm, result.state, x_daggers=result.x_daggers)
    doc = sc.result_doc(
        "iks", scene,
        options={"goal": goal_path, "n_p": n_p, "no_apertures": no_apertures,
                 "fd_fallback": fd_fallback},
        states=[sdoc],
        metrics={
            "goal_distance": result.goal_distance,
            "objective": result.objective,
            "residual": sdoc["residual"],
            "iterations": result.report.iterations,
            "status": result.report.status,
            "wall_time": wall,
        },
    )
    _write(out_path, doc, f"iks {result.report.status}: goal distance "
                          f"{result.goal_distance:.3e}, {result.report.iterations} "
                          f"iterations, {wall:.2f} s")
    if result.report.status not in ("converged", "max_iter"):
        sys.exit(EXIT_NO_CONVERGENCE)


@main.command()
@scene_opt
@goal_opt
@out_opt
@np_opt
@no_apertures_opt
@click.option("--keyframes", "n_keyframes", type=int, default=10,
              help="Number of trajectory keyframes.")
@_exit_codes
def plan(scene_path, goal_path, out_path, n_p, no_apertures, n_keyframes):
    """Plan a keyframe trajectory by warm-started direct transcription."""
    scene = _load_scene(scene_path, n_p, no_apertures)
    asm = scene.assembly
    spec = sc.load_goal(goal_path)
    start = _start_state(asm, spec.q_a_start)
    goal = sc.resolve_goal(asm, start, spec)

    xf, warm_wall = _iks_phase(asm, goal, scene.apertures, start)
    t0 = time.perf_counter()
    traj = pl.solve_trajopt(asm, goal, scene.apertures, start,
                            n_keyframes=n_keyframes, xf=xf)
    solve_wall = time.perf_counter() - t0

    states = [sc.state_doc(asm, kf.state(), x_daggers=kf.x_daggers)
              for kf in traj.keyframes]
    # success is judged on the polished trajectory (every keyframe is
    # re-projected onto the equilibrium manifold after the NLP), not on the
    # raw solver status, which may hit the iteration cap first
    converged = (traj.terminal_distance < 1e-6
                 and traj.residuals.max(initial=0.0) < 1e-6)
    doc = sc.result_doc(
        "plan", scene,
        options={"goal": goal_path, "keyframes": n_keyframes, "n_p": n_p,
                 "no_apertures": no_apertures},
        states=states,
        metrics={
            "path_cost": traj.cost,
            "terminal_distance": traj.terminal_distance,
            "keyframe_residuals": traj.residuals,
            "status": traj.report.status,
            "iterations": traj.report.iterations,
            "phases": {
                "warm_start": {
                    "iterations": xf.report.iterations,
                    "goal_distance": xf.goal_distance,
                    "wall_time": warm_wall,
                },
                "solve": {
                    "iterations": traj.report.iterations,
                    "wall_time": solve_wall,
                },
            },
        },
    )
    _write(out_path, doc, f"plan {traj.report.status}: cost {traj.cost:.6f}, "
                          f"terminal distance {traj.terminal_distance:.3e}, "
                          f"{solve_wall:.1f} s after {warm_wall:.1f} s warm start")
    if not converged:
        sys.exit(EXIT_NO_CONVERGENCE)


@main.command()
@scene_opt
@goal_opt
@out_opt
@np_opt
@no_apertures_opt
@click.option("--seed", type=int, default=0, help="RNG seed for sampling.")
@_exit_codes
def rrt(scene_path, goal_path, out_path, n_p, no_apertures, seed):
    """Plan with the sampling baseline (bidirectional RRT)."""
    scene = _load_scene(scene_path, n_p, no_apertures)
    asm = scene.assembly
    spec = sc.load_goal(goal_path)
    start = _start_state(asm, spec.q_a_start)
    goal = sc.resolve_goal(asm, start, spec)

    goal_iks, _ = _iks_phase(asm, goal, scene.apertures, start)
    options = pl.RrtOptions(seed=seed)
    result = pl.birrt_plan(asm, start, goal_iks.state, scene.apertures, options)

    n_ap = len(scene.apertures)
    frames = [pl.KeyFrame(s.q, s.u, s.lambda_bar, np.zeros(n_ap)) for s in result.path]
    cost, _ = pl.path_cost(frames, asm)
    states = [sc.state_doc(asm, s) for s in result.path]
    doc = sc.result_doc(
        "rrt", scene,
        options={"goal": goal_path, "n_p": n_p, "no_apertures": no_apertures,
                 "step": options.step, "goal_bias": options.goal_bias,
                 "max_iter": options.max_iter},
        states=states,
        metrics={
            "path_cost": cost,
            "path_length": len(result.path),
            "iterations": result.iterations,
            "tree_nodes": result.n_nodes,
            "wall_time": result.wall_time,
            "goal_distance": goal_iks.goal_distance,
        },
        seed=seed,
    )
    _write(out_path, doc, f"rrt: {len(result.path)}-node path, "
                          f"{result.n_nodes} tree nodes, {result.iterations} "
                          f"iterations, {result.wall_time:.2f} s (seed {seed})")


def _gradcheck_statics(asm, rng, fd_step=1e-6):
    """Max relative error of the equilibrium residual Jacobian vs central FD."""
    state = st.zero_state(asm)
    state.q = 0.02 * rng.standard_normal(asm.n_d)
    state.u = rng.standard_normal(asm.n_a)
    state.lambda_bar = rng.standard_normal(asm.n_c)

    t0 = time.perf_counter()
    Ja = st.residual_jacobian(asm, state)
    t_analytic = time.perf_counter() - t0

    def value(v):
        s = st.EquilibriumState(v[: asm.n_d],
                                v[asm.n_d: asm.n_d + asm.n_a],
                                v[asm.n_d + asm.n_a:])
        return st.residual(asm, s).stacked()

    x = np.concatenate([state.q, state.u, state.lambda_bar])
    t0 = time.perf_counter()
    Jfd = pl._fd_jacobian(value, x, step=fd_step)
    t_fd = time.perf_counter() - t0
    err = float(np.abs(Ja - Jfd).max() / max(1.0, np.abs(Jfd).max()))
    return {"residual_jacobian": err}, t_analytic, t_fd


def _corrupt(problem: nlp.NlpProblem) -> nlp.NlpProblem:
    """Fault injection: bias one objective-gradient entry."""
    inner = problem.objective

    def bad_objective(x):
        f, g = inner(x)
        g = g.copy()
        g[0] += 1.0
        return f, g

    return nlp.NlpProblem(
        n=problem.n, objective=bad_objective,
        n_eq=problem.n_eq, equality=problem.equality,
        n_ineq=problem.n_ineq, inequality=problem.inequality,
        lower=problem.lower, upper=problem.upper,
    )


def _time_jacobians(problem: nlp.NlpProblem, x: np.ndarray):
    """One analytic evaluation of all blocks vs one full FD sweep."""
    t0 = time.perf_counter()
    problem.objective(x)
    if problem.equality is not None:
        problem.equality(x)
    if problem.inequality is not None:
        problem.inequality(x)
    t_analytic = time.perf_counter() - t0

    t0 = time.perf_counter()
    pl._fd_jacobian(lambda v: problem.objective(v)[0], x)
    if problem.equality is not None:
        pl._fd_jacobian(lambda v: problem.equality(v)[0], x)
    if problem.inequality is not None:
        pl._fd_jacobian(lambda v: problem.inequality(v)[0], x)
    t_fd = time.perf_counter() - t0
    return t_analytic, t_fd


@main.command()
@scene_opt
@goal_opt
@out_opt
@np_opt
@no_apertures_opt
@click.option("--target", type=click.Choice(["statics", "iks", "trajopt"]),
              default="iks", show_default=True,
              help="Which derivative stack to verify.")
@click.option("--seed", type=int, default=0, help="RNG seed for the test state.")
@click.option("--keyframes", "n_keyframes", type=int, default=3,
              help="Keyframe count for the trajopt target.")
@click.option("--corrupt-gradient", is_flag=True,
              help="Inject a gradient fault to demonstrate detection.")
@_exit_codes
def gradcheck(scene_path, goal_path, out_path, n_p, no_apertures, target, seed,
              n_keyframes, corrupt_gradient):
    """Verify analytical derivatives against central finite differences."""
    scene = _load_scene(scene_path, n_p, no_apertures)
    asm = scene.assembly
    rng = np.random.default_rng(seed)
    tol = 1e-5

    if target == "statics":
        blocks, t_analytic, t_fd = _gradcheck_statics(asm, rng)
    else:
        spec = sc.load_goal(goal_path)
        start = _start_state(asm, spec.q_a_start)
        goal = sc.resolve_goal(asm, start, spec)
        if target == "iks":
            problem, xvec0, _ = pl.iks_problem(asm, goal, scene.apertures, start)
        else:
            problem, kf0, block = pl.trajopt_problem(
                asm, goal, scene.apertures, start, n_keyframes
            )
            v0 = np.concatenate([kf0.q, kf0.u, kf0.lambda_bar, kf0.x_daggers])
            xvec0 = np.tile(v0, n_keyframes)
        if corrupt_gradient:
            problem = _corrupt(problem)
        x = xvec0 + 1e-3 * rng.standard_normal(problem.n)
        x = np.clip(x, *problem.bounds_arrays())
        report = nlp.gradient_check(problem, x)
        blocks = {
            "objective": report.objective_rel_err,
            "equality": report.equality_rel_err,
            "inequality": report.inequality_rel_err,
        }
        t_analytic, t_fd = _time_jacobians(problem, x)

    worst = max(blocks.values())
    doc = sc.result_doc(
        "gradcheck", scene,
        options={"target": target, "n_p": n_p, "no_apertures": no_apertures,
                 "keyframes": n_keyframes, "corrupt_gradient": corrupt_gradient},
        states=[],
        metrics={
            "blocks": blocks,
            "max_rel_err": worst,
            "tolerance": tol,
            "passed": bool(worst < tol),
            "timing": {"analytic": t_analytic, "fd": t_fd,
                       "speedup": t_fd / max(t_analytic, 1e-12)},
        },
        seed=seed,
    )
    lines = ", ".join(f"{k} {v:.2e}" for k, v in blocks.items())
    _write(out_path, doc, f"gradcheck[{target}]: {lines}; analytic "
                          f"{t_analytic:.4f} s vs fd {t_fd:.4f} s "
                          f"({t_fd / max(t_analytic, 1e-12):.1f}x)")
    if worst >= tol:
        click.echo(f"gradient check FAILED: max rel err {worst:.3e} >= {tol}",
                   err=True)
        sys.exit(EXIT_NO_CONVERGENCE)


def _resample_rows(rows: np.ndarray, m: int) -> np.ndarray:
    """Linear re-sampling of a (k, ...) sequence onto m normalized abscissae."""
    k = rows.shape[0]
    if k == 1:
        return np.repeat(rows, m, axis=0)
    ts = np.linspace(0.0, k - 1.0, m)
    i0 = np.clip(ts.astype(int), 0, k - 2)
    frac = (ts - i0).reshape((m,) + (1,) * (rows.ndim - 1))
    return rows[i0] * (1.0 - frac) + rows[i0 + 1] * frac


@main.command()
@click.argument("result_a", type=click.Path())
@click.argument("result_b", type=click.Path())
@out_opt
@click.option("--samples", type=int, default=101, show_default=True,
              help="Common number of resampled frames.")
@_exit_codes
def compare(result_a, result_b, out_path, samples):
    """Compare two result files from the same scene."""
    a = sc.load_result(result_a)
    b = sc.load_result(result_b)
    if a["scene"]["sha256"] != b["scene"]["sha256"]:
        raise SceneError("results come from different scenes "
                         f"({a['scene']['name']!r} vs {b['scene']['name']!r})")
    if not a["states"] or not b["states"]:
        raise SceneError("both results need at least one recorded state")

    qa = _resample_rows(np.array([s["q"] for s in a["states"]]), samples)
    qb = _resample_rows(np.array([s["q"] for s in b["states"]]), samples)
    ma = _resample_rows(np.array([s["markers"] for s in a["states"]]), samples)
    mb = _resample_rows(np.array([s["markers"] for s in b["states"]]), samples)

    q_dist = np.linalg.norm(qa - qb, axis=1)
    cost_a = a["metrics"].get("path_cost")
    cost_b = b["metrics"].get("path_cost")
    doc = {
        "schema": sc.RESULT_SCHEMA,
        "command": "compare",
        "scene": a["scene"],
        "options": {"a": result_a, "b": result_b, "samples": samples},
        "seed": None,
        "states": [],
        "metrics": sc.as_plain({
            "marker_error": pl.marker_error(ma, mb),
            "q_distance_mean": float(q_dist.mean()),
            "q_distance_max": float(q_dist.max()),
            "path_cost_a": cost_a,
            "path_cost_b": cost_b,
            "path_cost_difference": (None if cost_a is None or cost_b is None
                                     else cost_a - cost_b),
        }),
    }
    m = doc["metrics"]
    _write(out_path, doc, f"compare: marker error {m['marker_error']:.3e} m, "
                          f"max q distance {m['q_distance_max']:.3e}, "
                          f"costs {cost_a} vs {cost_b}")


if __name__ == "__main__":
    main()

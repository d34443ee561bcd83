"""Planner tests: IKS vs analytic IK, trajectory utilities, sampling baseline."""

import numpy as np
import pytest

from hdlo import assembly as am
from hdlo import liegroup as lg
from hdlo import planners as pl
from hdlo import scene as sc
from hdlo import statics as st
from hdlo.errors import DimensionMismatch, GoalUnreachable

from conftest import scene_path


def planar2r_fk(t1, t2, l1=0.25, l2=0.25):
    return np.array([
        l1 * np.cos(t1) + l2 * np.cos(t1 + t2),
        0.0,
        -l1 * np.sin(t1) - l2 * np.sin(t1 + t2),
    ])


def planar2r_ik(p, l1=0.25, l2=0.25):
    """Both elbow solutions (t1, t2) for a reachable planar target."""
    x, z = p[0], -p[2]
    r2 = x * x + z * z
    c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    c2 = np.clip(c2, -1.0, 1.0)
    sols = []
    for s in (+1.0, -1.0):
        t2 = s * np.arccos(c2)
        t1 = np.arctan2(z, x) - np.arctan2(l2 * np.sin(t2), l1 + l2 * np.cos(t2))
        sols.append(np.array([t1, t2]))
    return sols


class TestGoal:
    def test_position_goal_shape(self):
        with pytest.raises(DimensionMismatch):
            pl.Goal("position", np.zeros(2))

    def test_full_pose_needs_pose(self):
        with pytest.raises(DimensionMismatch):
            pl.Goal("full_pose", np.zeros(3))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            pl.Goal("orientation", np.zeros(3))

    def test_goal_error_gradient_matches_fd(self, desk, rng):
        asm = desk.assembly
        q = 0.05 * rng.standard_normal(asm.n_d)
        target = lg.exp_se3(np.array([0.0, 0.1, 0.0, 0.3, 0.0, 1.1]))
        for goal in (pl.Goal("position", np.array([0.3, 0.0, 1.1])),
                     pl.Goal("full_pose", target)):
            cache = am.forward_kinematics(asm, q)
            _, de = pl.goal_error(asm, cache, goal)
            h = 1e-6
            for k in range(0, asm.n_d, 4):
                dq = np.zeros(asm.n_d)
                dq[k] = h
                ep, _ = pl.goal_error(asm, am.forward_kinematics(asm, q + dq), goal)
                em, _ = pl.goal_error(asm, am.forward_kinematics(asm, q - dq), goal)
                assert np.abs((ep - em) / (2 * h) - de[:, k]).max() < 1e-6


class TestIks:
    def test_planar2r_matches_analytic_ik(self, planar2r):
        asm = planar2r.assembly
        target = planar2r_fk(0.4, 0.6)
        goal = pl.Goal("position", target)
        from hdlo import nlp
        opts = nlp.SolveOptions(tol_stationarity=1e-14, xtol=1e-16, barrier_tol=1e-12)
        res = pl.solve_iks(asm, goal, [], st.zero_state(asm), options=opts)
        assert res.goal_distance < 1e-8
        sols = planar2r_ik(target)
        err = min(np.abs(res.state.q - s).max() for s in sols)
        assert err < 1e-8

    def test_trivial_goal(self, desk):
        asm = desk.assembly
        x0 = st.solve_forward_statics(asm, np.zeros(asm.n_a), st.zero_state(asm))
        cache = am.forward_kinematics(asm, x0.q)
        goal = pl.Goal("position", am.end_effector_pose(asm, cache).translation)
        res = pl.solve_iks(asm, goal, desk.apertures, x0)
        assert res.goal_distance < 1e-8
        assert st.residual_norm(asm, res.state) < 1e-8

    def test_unreachable_raises(self, planar2r):
        asm = planar2r.assembly
        goal = pl.Goal("position", np.array([10.0, 0.0, 0.0]))
        with pytest.raises(GoalUnreachable):
            pl.solve_iks(asm, goal, [], st.zero_state(asm))

    def test_desk_with_apertures(self, desk):
        asm = desk.assembly
        x0 = st.solve_forward_statics(asm, np.zeros(asm.n_a), st.zero_state(asm))
        spec = sc.load_goal(scene_path("desk_goal"))
        goal = sc.resolve_goal(asm, x0, spec)
        res = pl.solve_iks(asm, goal, desk.apertures, x0)
        assert res.goal_distance < 1e-6
        assert st.residual_norm(asm, res.state) < 1e-8
        cache = am.forward_kinematics(asm, res.state.q)
        import hdlo.envcon as ec
        c_e, c_in = ec.aperture_constraints(asm, cache, desk.apertures, res.x_daggers)
        assert np.abs(c_e).max() < 1e-8
        assert c_in.max() <= 1e-10


class TestPathCost:
    def test_two_keyframe_value(self, planar2r):
        asm = planar2r.assembly
        kf0 = pl.KeyFrame(np.zeros(2), np.zeros(2), np.zeros(0), np.zeros(0))
        kf1 = pl.KeyFrame(np.array([1.0, -2.0]), np.array([0.5, 0.0]),
                          np.zeros(0), np.zeros(0))
        cost, _ = pl.path_cost([kf0, kf1], asm)
        assert cost == pytest.approx(1.0 + 4.0 + 0.25, abs=1e-15)

    def test_gradient_matches_fd(self, desk, rng):
        asm = desk.assembly
        n_ap = len(desk.apertures)
        dim = asm.n_d + asm.n_a + asm.n_c + n_ap
        N = 3
        kf0_vec = 0.1 * rng.standard_normal(dim)
        xvec = 0.1 * rng.standard_normal(N * dim)

        def frames_of(v):
            out = [vec_to_kf(kf0_vec)]
            for k in range(N):
                out.append(vec_to_kf(v[k * dim:(k + 1) * dim]))
            return out

        def vec_to_kf(v):
            return pl.KeyFrame(
                v[:asm.n_d],
                v[asm.n_d:asm.n_d + asm.n_a],
                v[asm.n_d + asm.n_a:asm.n_d + asm.n_a + asm.n_c],
                v[asm.n_d + asm.n_a + asm.n_c:],
            )

        cost, grad = pl.path_cost(frames_of(xvec), asm)
        h = 1e-6
        for k in range(0, N * dim, 7):
            dx = np.zeros(N * dim)
            dx[k] = h
            cp, _ = pl.path_cost(frames_of(xvec + dx), asm)
            cm, _ = pl.path_cost(frames_of(xvec - dx), asm)
            assert abs((cp - cm) / (2 * h) - grad[k]) < 1e-7 * max(1.0, abs(grad[k]))


class TestWarmStart:
    def test_endpoints_and_lerp(self, rng):
        x0 = rng.standard_normal(9)
        xf = rng.standard_normal(9)
        rows = pl.warm_start(x0, xf, 4)
        assert rows.shape == (5, 9)
        assert np.abs(rows[0] - x0).max() == 0.0
        assert np.abs(rows[-1] - xf).max() == 0.0
        assert np.abs(rows[2] - 0.5 * (x0 + xf)).max() < 1e-15

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            pl.warm_start(np.zeros(3), np.zeros(4), 2)


class TestPlaneCrossings:
    def test_desk_rod_crossing(self, desk):
        asm = desk.assembly
        x0 = st.solve_forward_statics(asm, np.zeros(asm.n_a), st.zero_state(asm))
        cache = am.forward_kinematics(asm, x0.q)
        ap = desk.apertures[0]
        crossings = pl.find_plane_crossings(asm, cache, ap.link, ap.plane_z)
        assert len(crossings) >= 1
        import hdlo.envcon as ec
        for c in crossings:
            assert 0.0 <= c <= 1.0
            z = ec.position_at(asm, cache, ap.link, c)[2]
            assert abs(z - ap.plane_z) < 1e-9

    def test_initial_x_daggers_on_plane(self, desk):
        asm = desk.assembly
        x0 = st.solve_forward_statics(asm, np.zeros(asm.n_a), st.zero_state(asm))
        cache = am.forward_kinematics(asm, x0.q)
        xd = pl.initial_x_daggers(asm, cache, desk.apertures)
        assert xd.shape == (len(desk.apertures),)
        import hdlo.envcon as ec
        for k, ap in enumerate(desk.apertures):
            z = ec.position_at(asm, cache, ap.link, xd[k])[2]
            assert abs(z - ap.plane_z) < 1e-8


class TestResample:
    def test_schedule_and_endpoints(self, planar2r):
        asm = planar2r.assembly
        rng = np.random.default_rng(3)
        kfs = [pl.KeyFrame(rng.standard_normal(2), np.zeros(2), np.zeros(0), np.zeros(0))
               for _ in range(10)]
        times, samples = pl.resample_dense(kfs, asm)
        assert times[0] == 0.0
        # 9 transitions of 10 s move + 5 s dwell
        assert times[-1] == pytest.approx(9 * 15.0, abs=1e-9)
        assert np.abs(samples[0] - kfs[0].q).max() == 0.0
        assert np.abs(samples[-1] - kfs[-1].q).max() == 0.0
        # dwell: value at end of each segment equals the next keyframe
        rate = 100.0
        for k in range(9):
            i = int(round((k + 1) * 15.0 * rate))
            assert np.abs(samples[i] - kfs[k + 1].q).max() < 1e-12


class TestMarkerError:
    def test_arithmetic(self):
        a = np.zeros((2, 3, 3))
        b = np.zeros((2, 3, 3))
        b[0, :, 0] = 1.0  # frame 0: every marker off by 1 -> mean 1
        # frame 1: zero error; overall mean = 0.5
        assert pl.marker_error(a, b) == pytest.approx(0.5, abs=1e-15)

    def test_shape_check(self):
        with pytest.raises(DimensionMismatch):
            pl.marker_error(np.zeros((2, 3, 3)), np.zeros((2, 4, 3)))


class TestBirrt:
    def test_trivial_when_start_is_goal(self, planar2r):
        asm = planar2r.assembly
        x0 = st.solve_forward_statics(asm, np.zeros(2), st.zero_state(asm))
        res = pl.birrt_plan(asm, x0, x0, [])
        assert len(res.path) == 1
        assert res.n_nodes == 1

    def test_planar2r_path_deterministic(self, planar2r):
        asm = planar2r.assembly
        x0 = st.solve_forward_statics(asm, np.zeros(2), st.zero_state(asm))
        xg = st.solve_forward_statics(asm, np.array([0.6, -0.4]), st.zero_state(asm))
        runs = []
        for _ in range(2):
            res = pl.birrt_plan(asm, x0, xg, [], pl.RrtOptions(seed=1))
            runs.append(res)
        assert len(runs[0].path) == len(runs[1].path)
        for a, b in zip(runs[0].path, runs[1].path):
            assert np.abs(a.q - b.q).max() == 0.0
        # endpoints and equilibrium residuals
        path = runs[0].path
        assert np.abs(path[0].q - x0.q).max() == 0.0
        assert np.abs(path[-1].q[asm.actuated_idx] - xg.q[asm.actuated_idx]).max() <= 1e-3
        for s in path:
            assert st.residual_norm(asm, s) < 1e-8

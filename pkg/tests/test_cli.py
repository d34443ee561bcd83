"""Command-line interface tests (exit codes, result files, determinism)."""

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from hdlo import cli
from hdlo import scene as sc

from conftest import scene_path


@pytest.fixture()
def runner():
    return CliRunner()


def planar2r_goal(tmp_path, target=(0.35, 0.0, -0.25), name="goal.yaml"):
    p = tmp_path / name
    p.write_text(
        "schema: hdlo-goal/1\n"
        "kind: position\n"
        "frame: world\n"
        f"translation: [{target[0]}, {target[1]}, {target[2]}]\n"
    )
    return str(p)


class TestStatics:
    def test_cantilever(self, runner, tmp_path):
        out = tmp_path / "r.yaml"
        res = runner.invoke(cli.main, ["statics", "--scene", scene_path("cantilever"),
                                       "--out", str(out)])
        assert res.exit_code == 0, res.output
        doc = sc.load_result(str(out))
        assert doc["command"] == "statics"
        assert doc["metrics"]["residual"] < 1e-8
        tip = np.array(doc["states"][0]["end_effector"]["translation"])
        assert tip[2] < -0.01  # sags under gravity

    def test_bad_qa_count(self, runner):
        res = runner.invoke(cli.main, ["statics", "--scene", scene_path("planar2r"),
                                       "--q-a", "0.1"])
        assert res.exit_code == cli.EXIT_INPUT_ERROR

    def test_malformed_scene(self, runner, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("schema: hdlo-scene/1\nname: bad\nlinks: []\n")
        res = runner.invoke(cli.main, ["statics", "--scene", str(p)])
        assert res.exit_code == cli.EXIT_INPUT_ERROR

    def test_missing_scene_file(self, runner, tmp_path):
        res = runner.invoke(cli.main, ["statics", "--scene", str(tmp_path / "no.yaml")])
        assert res.exit_code == cli.EXIT_INPUT_ERROR

    def test_fd_fallback_agrees(self, runner, tmp_path):
        outs = []
        for flag in ([], ["--fd-fallback"]):
            out = tmp_path / f"r{len(outs)}.yaml"
            res = runner.invoke(cli.main, ["statics", "--scene", scene_path("cantilever"),
                                           "--out", str(out)] + flag)
            assert res.exit_code == 0
            outs.append(np.array(sc.load_result(str(out))["states"][0]["q"]))
        assert np.abs(outs[0] - outs[1]).max() < 1e-7


class TestIks:
    def test_reachable(self, runner, tmp_path):
        out = tmp_path / "r.yaml"
        res = runner.invoke(cli.main, ["iks", "--scene", scene_path("planar2r"),
                                       "--goal", planar2r_goal(tmp_path),
                                       "--out", str(out)])
        assert res.exit_code == 0, res.output
        doc = sc.load_result(str(out))
        assert doc["metrics"]["goal_distance"] < 1e-6

    def test_unreachable_exit_3(self, runner, tmp_path):
        res = runner.invoke(cli.main, ["iks", "--scene", scene_path("planar2r"),
                                       "--goal", planar2r_goal(tmp_path, (5.0, 0.0, 0.0))])
        assert res.exit_code == cli.EXIT_UNREACHABLE


class TestPlan:
    def test_planar2r_plan(self, runner, tmp_path):
        out = tmp_path / "r.yaml"
        res = runner.invoke(cli.main, ["plan", "--scene", scene_path("planar2r"),
                                       "--goal", planar2r_goal(tmp_path),
                                       "--keyframes", "3", "--out", str(out)])
        assert res.exit_code == 0, res.output
        doc = sc.load_result(str(out))
        assert len(doc["states"]) == 4  # initial + 3 keyframes
        assert doc["metrics"]["terminal_distance"] < 1e-6
        assert doc["metrics"]["path_cost"] > 0.0
        assert max(doc["metrics"]["keyframe_residuals"]) < 1e-6


class TestRrt:
    def test_deterministic_per_seed(self, runner, tmp_path):
        paths = []
        for i in range(2):
            out = tmp_path / f"r{i}.yaml"
            res = runner.invoke(cli.main, ["rrt", "--scene", scene_path("planar2r"),
                                           "--goal", planar2r_goal(tmp_path),
                                           "--seed", "0", "--out", str(out)])
            assert res.exit_code == 0, res.output
            doc = sc.load_result(str(out))
            paths.append(np.array([s["q"] for s in doc["states"]]))
        assert paths[0].shape == paths[1].shape
        assert np.abs(paths[0] - paths[1]).max() == 0.0

    def test_seed_recorded(self, runner, tmp_path):
        out = tmp_path / "r.yaml"
        res = runner.invoke(cli.main, ["rrt", "--scene", scene_path("planar2r"),
                                       "--goal", planar2r_goal(tmp_path),
                                       "--seed", "7", "--out", str(out)])
        assert res.exit_code == 0, res.output
        assert sc.load_result(str(out))["seed"] == 7


class TestGradcheck:
    def test_statics_target(self, runner, tmp_path):
        out = tmp_path / "r.yaml"
        res = runner.invoke(cli.main, ["gradcheck", "--scene", scene_path("desk"),
                                       "--goal", scene_path("desk_goal"),
                                       "--target", "statics", "--out", str(out)])
        assert res.exit_code == 0, res.output
        doc = sc.load_result(str(out))
        assert doc["metrics"]["passed"] is True
        assert doc["metrics"]["max_rel_err"] < 1e-5

    def test_corrupt_gradient_detected(self, runner, tmp_path):
        res = runner.invoke(cli.main, ["gradcheck", "--scene", scene_path("planar2r"),
                                       "--goal", planar2r_goal(tmp_path),
                                       "--target", "iks", "--corrupt-gradient"])
        assert res.exit_code == cli.EXIT_NO_CONVERGENCE


class TestCompare:
    def test_self_compare_is_zero(self, runner, tmp_path):
        r1 = tmp_path / "a.yaml"
        res = runner.invoke(cli.main, ["statics", "--scene", scene_path("cantilever"),
                                       "--out", str(r1)])
        assert res.exit_code == 0
        out = tmp_path / "cmp.yaml"
        res = runner.invoke(cli.main, ["compare", str(r1), str(r1), "--out", str(out)])
        assert res.exit_code == 0, res.output
        m = sc.load_result(str(out))["metrics"]
        assert m["marker_error"] == 0.0
        assert m["q_distance_max"] == 0.0

    def test_different_scenes_rejected(self, runner, tmp_path):
        r1, r2 = tmp_path / "a.yaml", tmp_path / "b.yaml"
        assert runner.invoke(cli.main, ["statics", "--scene", scene_path("cantilever"),
                                        "--out", str(r1)]).exit_code == 0
        assert runner.invoke(cli.main, ["statics", "--scene", scene_path("planar2r"),
                                        "--out", str(r2)]).exit_code == 0
        res = runner.invoke(cli.main, ["compare", str(r1), str(r2)])
        assert res.exit_code == cli.EXIT_INPUT_ERROR

"""NLP layer tests against closed-form optima."""

import numpy as np
import pytest

from hdlo import nlp
from hdlo.errors import DimensionMismatch


def quad_objective(Q, c):
    def f(x):
        return 0.5 * float(x @ Q @ x) + float(c @ x), Q @ x + c
    return f


def make_eq_qp():
    """min 1/2 x'Qx + c'x  s.t. Ax = b; KKT solution is closed form."""
    rng = np.random.default_rng(42)
    M = rng.standard_normal((4, 4))
    Q = M @ M.T + 4.0 * np.eye(4)
    c = rng.standard_normal(4)
    A = rng.standard_normal((2, 4))
    b = rng.standard_normal(2)
    kkt = np.block([[Q, A.T], [A, np.zeros((2, 2))]])
    rhs = np.concatenate([-c, b])
    x_star = np.linalg.solve(kkt, rhs)[:4]

    problem = nlp.NlpProblem(
        n=4,
        objective=quad_objective(Q, c),
        n_eq=2,
        equality=lambda x: (A @ x - b, A),
    )
    return problem, x_star


class TestProblem:
    def test_counts_must_match_evaluators(self):
        with pytest.raises(DimensionMismatch):
            nlp.NlpProblem(n=2, objective=quad_objective(np.eye(2), np.zeros(2)), n_eq=1)

    def test_max_violation(self):
        problem = nlp.NlpProblem(
            n=2,
            objective=quad_objective(np.eye(2), np.zeros(2)),
            n_eq=1,
            equality=lambda x: (np.array([x[0] - 1.0]), np.array([[1.0, 0.0]])),
            n_ineq=1,
            inequality=lambda x: (np.array([x[1] - 2.0]), np.array([[0.0, 1.0]])),
            lower=np.array([-1.0, -1.0]),
            upper=np.array([5.0, 5.0]),
        )
        x = np.array([0.0, 3.0])
        # eq violated by 1, ineq by 1, bounds satisfied
        assert problem.max_violation(x) == pytest.approx(1.0)
        assert problem.max_violation(np.array([1.0, 0.0])) == pytest.approx(0.0)
        assert problem.max_violation(np.array([-2.0, 0.0])) == pytest.approx(3.0)


class TestTrustConstr:
    def test_equality_qp_closed_form(self):
        problem, x_star = make_eq_qp()
        x, report = nlp.solve(problem, np.zeros(4),
                              nlp.SolveOptions(tol_stationarity=1e-10))
        assert report.status == "converged"
        assert np.abs(x - x_star).max() < 1e-8

    def test_inequality_projection(self):
        # min |x - p|^2 s.t. x1 + x2 <= 1 with p outside: optimum on the face
        p = np.array([2.0, 2.0])
        problem = nlp.NlpProblem(
            n=2,
            objective=lambda x: (float((x - p) @ (x - p)), 2.0 * (x - p)),
            n_ineq=1,
            inequality=lambda x: (np.array([x[0] + x[1] - 1.0]),
                                  np.array([[1.0, 1.0]])),
        )
        # squeezing an active inequality to high accuracy needs a tight
        # barrier, same recipe as active bounds
        x, report = nlp.solve(problem, np.zeros(2),
                              nlp.SolveOptions(tol_stationarity=0.0,
                                               xtol=1e-16, barrier_tol=1e-14))
        assert report.status == "converged"
        assert np.abs(x - [0.5, 0.5]).max() < 1e-7

    def test_active_bound(self):
        # min (x - 2)^2 with x <= 1: optimum pinned at the bound
        problem = nlp.NlpProblem(
            n=1,
            objective=lambda x: (float((x[0] - 2.0) ** 2),
                                 np.array([2.0 * (x[0] - 2.0)])),
            lower=np.array([-5.0]),
            upper=np.array([1.0]),
        )
        opts = nlp.SolveOptions(tol_stationarity=0.0, xtol=1e-16, barrier_tol=1e-12)
        x, report = nlp.solve(problem, np.array([0.0]), opts)
        assert abs(x[0] - 1.0) < 1e-8

    def test_max_iter_status(self):
        problem, _ = make_eq_qp()
        x, report = nlp.solve(problem, np.zeros(4),
                              nlp.SolveOptions(max_iter=1))
        assert report.status in ("max_iter", "infeasible")

    def test_unknown_method(self):
        problem, _ = make_eq_qp()
        _, report = nlp.solve(problem, np.zeros(4), nlp.SolveOptions(method="simplex"))
        assert report.status == "numeric_failure"


class TestAuglag:
    def test_equality_qp(self):
        problem, x_star = make_eq_qp()
        x, report = nlp.solve(problem, np.zeros(4),
                              nlp.SolveOptions(method="auglag",
                                               tol_stationarity=1e-8))
        assert report.status == "converged"
        assert np.abs(x - x_star).max() < 1e-6

    def test_inequality_and_bounds(self):
        p = np.array([2.0, 2.0])
        problem = nlp.NlpProblem(
            n=2,
            objective=lambda x: (float((x - p) @ (x - p)), 2.0 * (x - p)),
            n_ineq=1,
            inequality=lambda x: (np.array([x[0] + x[1] - 1.0]),
                                  np.array([[1.0, 1.0]])),
            lower=np.array([0.0, 0.0]),
            upper=np.array([10.0, 10.0]),
        )
        x, report = nlp.solve(problem, np.array([5.0, 5.0]),
                              nlp.SolveOptions(method="auglag"))
        assert report.max_violation <= 1e-8
        assert np.abs(x - [0.5, 0.5]).max() < 1e-5


class TestGradientCheck:
    def test_clean_gradients_pass(self):
        problem, _ = make_eq_qp()
        rep = nlp.gradient_check(problem, np.array([0.3, -0.2, 0.5, 0.1]))
        assert rep.max_rel_err < 1e-8

    def test_corrupted_objective_detected(self):
        problem, _ = make_eq_qp()

        inner = problem.objective

        def bad(x):
            f, g = inner(x)
            g = g.copy()
            g[0] += 1.0
            return f, g

        corrupt = nlp.NlpProblem(n=4, objective=bad, n_eq=2,
                                 equality=problem.equality)
        rep = nlp.gradient_check(corrupt, np.array([0.3, -0.2, 0.5, 0.1]))
        assert rep.objective_rel_err > 0.1
        assert rep.worst[0] == "objective"

    def test_corrupted_constraint_detected(self):
        problem, _ = make_eq_qp()
        inner = problem.equality

        def bad(x):
            c, J = inner(x)
            J = J.copy()
            J[1, 2] += 0.5
            return c, J

        corrupt = nlp.NlpProblem(n=4, objective=problem.objective, n_eq=2,
                                 equality=bad)
        rep = nlp.gradient_check(corrupt, np.zeros(4))
        assert rep.equality_rel_err > 0.01
        assert rep.worst == ("equality", 1, 2)

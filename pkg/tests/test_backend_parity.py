"""Compiled and pure-Python SE(3) kernels must agree to round-off."""

import numpy as np
import pytest

from hdlo import _lie_py as py

cy = pytest.importorskip("hdlo._lie_cy")

TOL = 1e-14


@pytest.fixture(scope="module")
def twists():
    rng = np.random.default_rng(7)
    xs = rng.standard_normal((200, 6))
    # include tiny and large magnitudes and exact zero
    xs = np.vstack([xs, 1e-8 * xs[:20], 10.0 * xs[:20], np.zeros((1, 6))])
    return xs


def test_backend_names():
    assert py.BACKEND_NAME == "python"
    assert cy.BACKEND_NAME == "cython"


def test_exp_parity(twists):
    for xi in twists:
        Rp, pp = py.exp_se3(xi)
        Rc, pc = cy.exp_se3(xi)
        assert np.abs(Rp - Rc).max() < TOL
        assert np.abs(pp - pc).max() < TOL


def test_log_parity(twists):
    for xi in twists:
        if np.linalg.norm(xi[:3]) > np.pi - 1e-2:
            continue
        R, p = py.exp_se3(xi)
        xi_p, th_p = py.log_se3(R, p)
        xi_c, th_c = cy.log_se3(R, p)
        assert np.abs(xi_p - xi_c).max() < TOL
        assert abs(th_p - th_c) < TOL


def test_adjoint_parity(twists):
    for xi in twists[:50]:
        R, p = py.exp_se3(xi)
        assert np.abs(py.adjoint(R, p) - cy.adjoint(R, p)).max() < TOL
        assert np.abs(py.adjoint_inv(R, p) - cy.adjoint_inv(R, p)).max() < TOL


def test_hat_vee_small_adjoint_parity(twists):
    for xi in twists[:50]:
        assert np.abs(py.hat6(xi) - cy.hat6(xi)).max() == 0.0
        assert np.abs(py.small_adjoint(xi) - cy.small_adjoint(xi)).max() == 0.0
        m = py.hat6(xi)
        assert np.abs(py.vee6(m) - cy.vee6(m)).max() == 0.0


def test_tangent_parity(twists):
    for xi in twists:
        assert np.abs(py.tangent(xi) - cy.tangent(xi)).max() < TOL


def test_tangent_and_dirs_parity(twists):
    rng = np.random.default_rng(11)
    dirs = rng.standard_normal((6, 4))
    for xi in twists[:50]:
        Tp, dTp = py.tangent_and_dirs(xi, dirs)
        Tc, dTc = cy.tangent_and_dirs(xi, dirs)
        assert np.abs(Tp - Tc).max() < TOL
        assert np.abs(np.asarray(dTp) - np.asarray(dTc)).max() < TOL

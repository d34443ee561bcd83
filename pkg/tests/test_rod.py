"""Variable-strain rod tests: closed forms, quadrature convergence, stiffness."""

import numpy as np
import pytest

from hdlo import liegroup as lg
from hdlo import rod
from hdlo.errors import RigidLink

NITINOL = rod.Material(7.5e10, 0.33, 6450.0)
TUBE = rod.Tube(1.8e-3, 1.4e-3)


def rod_geometry(length=0.68):
    return rod.LinkGeometry(length, TUBE, NITINOL)


class TestSections:
    def test_tube_area_and_moment(self):
        ro, ri = 0.9e-3, 0.7e-3
        assert TUBE.area == pytest.approx(np.pi * (ro**2 - ri**2), rel=1e-15)
        assert TUBE.second_moment == pytest.approx(np.pi / 4 * (ro**4 - ri**4), rel=1e-15)
        assert TUBE.radius == pytest.approx(ro)

    def test_disk(self):
        d = rod.Disk(0.1, 0.01)
        assert d.area == pytest.approx(np.pi * 0.05**2, rel=1e-15)
        assert d.radius == pytest.approx(0.05)

    def test_material_validation(self):
        with pytest.raises(ValueError):
            rod.Material(-1.0, 0.3, 1000.0)
        with pytest.raises(ValueError):
            rod.Material(1e9, 0.6, 1000.0)
        with pytest.raises(ValueError):
            rod.Material(1e9, 0.3, 0.0)

    def test_shear_modulus(self):
        m = rod.Material(2e11, 0.25, 7800.0)
        assert m.shear_modulus == pytest.approx(2e11 / 2.5, rel=1e-15)

    def test_rigid_mass_override(self):
        g = rod.LinkGeometry(0.25, rod.Disk(0.03, 0.25), NITINOL, kind="rigid", mass=0.5)
        assert g.total_mass == pytest.approx(0.5, rel=1e-15)

    def test_cross_section_stiffness_rigid_raises(self):
        g = rod.LinkGeometry(0.25, rod.Disk(0.03, 0.25), NITINOL, kind="rigid", mass=0.5)
        with pytest.raises(RigidLink):
            rod.cross_section_stiffness(g)


class TestBasis:
    def test_dof_count(self):
        assert rod.StrainBasis((1,) * 6).n_dof == 12
        assert rod.StrainBasis((3,) * 6).n_dof == 24
        assert rod.StrainBasis((0, 2, 2, 0, 0, 0)).n_dof == 10
        assert rod.StrainBasis((None, 2, 2, None, None, None)).n_dof == 6

    def test_eval_shape_and_block_structure(self):
        basis = rod.StrainBasis((1, 2, 0, 0, 0, 0))
        phi = basis.eval(0.3)
        assert phi.shape == (6, basis.n_dof)
        # each column excites exactly one deformation mode
        for k in range(basis.n_dof):
            assert np.count_nonzero(np.abs(phi[:, k]) > 1e-14) <= 1

    def test_scaled(self):
        basis = rod.StrainBasis((1,) * 6)
        assert np.allclose(basis.scaled(0.5).eval(0.3), 0.5 * basis.eval(0.3))


class TestGrid:
    def test_gauss_legendre_grid(self):
        g = rod.QuadratureGrid.gauss_legendre(11)
        assert g.n_points == 11
        assert g.points[0] == 0.0 and g.points[-1] == 1.0
        assert np.all(np.diff(g.points) > 0)
        assert np.isclose(g.weights.sum(), 1.0)
        # integrates polynomials of high order exactly on [0, 1]
        for k in range(8):
            val = float((g.points**k * g.weights).sum())
            assert val == pytest.approx(1.0 / (k + 1), abs=1e-13)


def tip_pose(basis_l, q, n_p):
    grid = rod.QuadratureGrid.gauss_legendre(n_p)
    poses, _ = rod.forward_kinematics_link(basis_l, rod.STRAIGHT_REFERENCE, q, grid)
    return poses[-1]


class TestForwardKinematics:
    def test_straight_rod(self):
        basis = rod.StrainBasis((1,) * 6).scaled(0.68)
        g = tip_pose(basis, np.zeros(12), 11)
        assert np.abs(g.rotation - np.eye(3)).max() < 1e-14
        assert np.allclose(g.translation, [0.68, 0.0, 0.0], atol=1e-14)

    def test_constant_curvature_closed_form(self):
        # constant bending-y strain kappa: circular arc in the xz-plane
        length, kappa = 0.68, 2.0
        basis = rod.StrainBasis((0,) * 6).scaled(length)
        q = np.zeros(6)
        q[1] = kappa
        g = tip_pose(basis, q, 21)
        theta = kappa * length
        p_exact = np.array([np.sin(theta) / kappa, 0.0, (np.cos(theta) - 1.0) / kappa])
        R_exact = lg.exp_se3(np.array([0, theta, 0, 0, 0, 0.0])).rotation
        assert np.abs(g.translation - p_exact).max() < 1e-9
        assert np.abs(g.rotation - R_exact).max() < 1e-9

    def test_quadrature_self_convergence_order_four(self):
        # spatially varying strain so the Magnus commutator term matters
        basis = rod.StrainBasis((2,) * 6).scaled(0.5)
        rng = np.random.default_rng(3)
        q = 0.5 * rng.standard_normal(18)
        ref = tip_pose(basis, q, 257).matrix()
        errs = []
        for n_p in (5, 9, 17):
            errs.append(np.abs(tip_pose(basis, q, n_p).matrix() - ref).max())
        slopes = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert slopes.min() >= 4.0 - 0.2, f"observed slopes {slopes}"

    def test_magnus_derivative_matches_fd(self):
        basis = rod.StrainBasis((2,) * 6).scaled(0.4)
        rng = np.random.default_rng(1)
        q = rng.standard_normal(18)
        x0, x1 = 0.2, 0.35
        _, d_omega, _ = rod.segment_magnus(basis, rod.STRAIGHT_REFERENCE, q, x0, x1)
        h = 1e-6
        for k in range(len(q)):
            dq = np.zeros(len(q))
            dq[k] = h
            op, _, _ = rod.segment_magnus(basis, rod.STRAIGHT_REFERENCE, q + dq, x0, x1)
            om, _, _ = rod.segment_magnus(basis, rod.STRAIGHT_REFERENCE, q - dq, x0, x1)
            assert np.abs((op - om) / (2 * h) - d_omega[:, k]).max() < 1e-9

    def test_magnus_hessian_matches_fd(self):
        basis = rod.StrainBasis((1,) * 6).scaled(0.4)
        rng = np.random.default_rng(2)
        q = rng.standard_normal(12)
        x0, x1 = 0.0, 0.2
        _, _, sp = rod.segment_magnus(basis, rod.STRAIGHT_REFERENCE, q, x0, x1)
        H = rod.segment_magnus_hessian(sp)
        h = 1e-6
        for k in range(len(q)):
            dq = np.zeros(len(q))
            dq[k] = h
            _, dp, _ = rod.segment_magnus(basis, rod.STRAIGHT_REFERENCE, q + dq, x0, x1)
            _, dm, _ = rod.segment_magnus(basis, rod.STRAIGHT_REFERENCE, q - dq, x0, x1)
            assert np.abs((dp - dm) / (2 * h) - H[:, :, k]).max() < 1e-8

    def test_link_jacobian_matches_fd(self):
        basis = rod.StrainBasis((1,) * 6).scaled(0.68)
        grid = rod.QuadratureGrid.gauss_legendre(7)
        rng = np.random.default_rng(4)
        q = 0.3 * rng.standard_normal(12)
        J = rod.link_jacobian(basis, rod.STRAIGHT_REFERENCE, q, grid)
        h = 1e-6
        for k in range(12):
            dq = np.zeros(12)
            dq[k] = h
            pp, _ = rod.forward_kinematics_link(basis, rod.STRAIGHT_REFERENCE, q + dq, grid)
            pm, _ = rod.forward_kinematics_link(basis, rod.STRAIGHT_REFERENCE, q - dq, grid)
            for j in (1, 3, len(grid.points) - 1):
                # body twist: g^-1 dg
                dg = (pp[j].matrix() - pm[j].matrix()) / (2 * h)
                pj, _ = rod.forward_kinematics_link(basis, rod.STRAIGHT_REFERENCE, q, grid)
                body = np.linalg.inv(pj[j].matrix()) @ dg
                tw = np.array([body[2, 1], body[0, 2], body[1, 0],
                               body[0, 3], body[1, 3], body[2, 3]])
                assert np.abs(tw - J[j][:, k]).max() < 1e-7


class TestStiffnessGravity:
    def test_single_bending_mode_stiffness(self):
        # one constant bending-y mode: K = E*I*l exactly
        geom = rod_geometry()
        basis = rod.StrainBasis((0,) * 6)
        grid = rod.QuadratureGrid.gauss_legendre(21)
        K = rod.link_stiffness(basis, geom, grid)
        EI_l = NITINOL.youngs_modulus * TUBE.second_moment * geom.length
        assert abs(K[1, 1] - EI_l) / EI_l < 1e-12
        assert abs(K[2, 2] - EI_l) / EI_l < 1e-12
        EA_l = NITINOL.youngs_modulus * TUBE.area * geom.length
        assert abs(K[3, 3] - EA_l) / EA_l < 1e-12

    def test_stiffness_symmetric_psd(self):
        geom = rod_geometry()
        basis = rod.StrainBasis((3,) * 6)
        K = rod.link_stiffness(basis, geom, rod.QuadratureGrid.gauss_legendre(21))
        assert np.abs(K - K.T).max() < 1e-6 * np.abs(K).max()
        assert np.linalg.eigvalsh(K).min() > 0.0

    def test_gravity_zero_g(self):
        geom = rod_geometry()
        basis = rod.StrainBasis((1,) * 6)
        grid = rod.QuadratureGrid.gauss_legendre(11)
        F = rod.link_gravity(basis, geom, grid, np.zeros(3), np.zeros(12),
                             lg.Pose.identity())
        assert np.abs(F).max() == 0.0

    def test_gravity_matches_fd_of_potential(self):
        # F = -dU/dq with U = -mu * integral g . p(X) dX (work of gravity)
        geom = rod_geometry(0.4)
        basis = rod.StrainBasis((1,) * 6)
        grid = rod.QuadratureGrid.gauss_legendre(15)
        g_world = np.array([0.0, 0.0, -9.81])
        rng = np.random.default_rng(5)
        q = 0.4 * rng.standard_normal(12)
        base = lg.exp_se3(0.2 * rng.standard_normal(6))

        def potential(qv):
            poses, _ = rod.forward_kinematics_link(
                basis.scaled(geom.length), rod.STRAIGHT_REFERENCE, qv, grid
            )
            u = 0.0
            for pose, w in zip(poses, grid.weights):
                p_world = base.apply(pose.translation)
                u -= geom.mass_per_length * geom.length * w * float(g_world @ p_world)
            return u

        F = rod.link_gravity(basis, geom, grid, g_world, q, base)
        h = 1e-6
        for k in range(12):
            dq = np.zeros(12)
            dq[k] = h
            fd = -(potential(q + dq) - potential(q - dq)) / (2 * h)
            assert abs(F[k] - fd) < 1e-6 * max(1.0, abs(fd))

"""Variable-strain rod model for a single deformable link.

The strain field along the normalized abscissa X in [0, 1] is
xi(X) = Phi(X) q + xi_star(X), with Phi built from shifted Legendre
polynomial blocks (one block per active deformation mode).  Forward
kinematics integrates g' = g * hat(xi) recursively with a fourth-order
Zanna (two-point Gauss collocation) approximation of the Magnus expansion.

All functions here work in whatever length unit the basis carries: the
assembly layer passes a basis and reference strain pre-scaled by the link
length so that q stays in physical strain units while poses come out in
meters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from numpy.polynomial import legendre as npleg

from hdlo import liegroup as lg
from hdlo.backend import lie
from hdlo.errors import OutOfRange, RigidLink

MODE_NAMES = ("torsion-x", "bending-y", "bending-z", "stretch-x", "shear-y", "shear-z")

# straight rod along local x: q = 0 is the undeformed state
STRAIGHT_REFERENCE = np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0])

_SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class StrainBasis:
    """Shifted-Legendre strain basis: per-mode polynomial order, None = off."""

    orders: tuple = (3, 3, 3, 3, 3, 3)
    scale: float = 1.0

    def __post_init__(self):
        if len(self.orders) != 6:
            raise ValueError("orders must have 6 entries (one per twist mode)")
        for o in self.orders:
            if o is not None and o < 0:
                raise ValueError("polynomial order must be >= 0")
        if self.n_dof == 0:
            raise ValueError("at least one mode must be active")

    @property
    def n_dof(self) -> int:
        return sum(o + 1 for o in self.orders if o is not None)

    def scaled(self, factor: float) -> "StrainBasis":
        return StrainBasis(self.orders, self.scale * factor)

    def eval(self, x: float) -> np.ndarray:
        """6 x n_dof basis matrix at abscissa x in [0, 1]."""
        if x < 0.0 or x > 1.0:
            raise OutOfRange(f"abscissa {x} outside [0, 1]")
        t = 2.0 * x - 1.0
        phi = np.zeros((6, self.n_dof))
        col = 0
        for mode, order in enumerate(self.orders):
            if order is None:
                continue
            for k in range(order + 1):
                coeffs = np.zeros(k + 1)
                coeffs[k] = 1.0
                phi[mode, col] = npleg.legval(t, coeffs)
                col += 1
        return self.scale * phi


def eval_basis(basis: StrainBasis, x: float) -> np.ndarray:
    return basis.eval(x)


ReferenceStrain = Union[np.ndarray, Sequence[float], Callable[[float], np.ndarray]]


def _as_strain_fn(xi_star: ReferenceStrain) -> Callable[[float], np.ndarray]:
    if callable(xi_star):
        return xi_star
    const = np.asarray(xi_star, dtype=float)
    return lambda x: const


@dataclass(frozen=True)
class QuadratureGrid:
    """Computation points and Gauss-Legendre weights on [0, 1].

    The endpoints are kept in the point set (with zero weight) so the
    forward-kinematics recursion covers the whole link; interior points are
    Gauss-Legendre nodes so distributed integrals use their exact weights.
    """

    points: np.ndarray
    weights: np.ndarray

    @staticmethod
    def gauss_legendre(n_p: int = 21) -> "QuadratureGrid":
        if n_p < 3:
            raise ValueError("need at least 3 computation points")
        x, w = np.polynomial.legendre.leggauss(n_p - 2)
        pts = np.concatenate([[0.0], 0.5 * (x + 1.0), [1.0]])
        wts = np.concatenate([[0.0], 0.5 * w, [0.0]])
        return QuadratureGrid(pts, wts)

    @property
    def n_points(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class Tube:
    outer_diameter: float
    inner_diameter: float = 0.0

    @property
    def area(self) -> float:
        ro, ri = self.outer_diameter / 2.0, self.inner_diameter / 2.0
        return np.pi * (ro**2 - ri**2)

    @property
    def second_moment(self) -> float:
        ro, ri = self.outer_diameter / 2.0, self.inner_diameter / 2.0
        return np.pi / 4.0 * (ro**4 - ri**4)

    @property
    def radius(self) -> float:
        return self.outer_diameter / 2.0


@dataclass(frozen=True)
class Disk:
    diameter: float
    thickness: float

    @property
    def area(self) -> float:
        return np.pi * (self.diameter / 2.0) ** 2

    @property
    def second_moment(self) -> float:
        return np.pi / 4.0 * (self.diameter / 2.0) ** 4

    @property
    def radius(self) -> float:
        return self.diameter / 2.0


@dataclass(frozen=True)
class Material:
    youngs_modulus: float
    poisson_ratio: float
    density: float

    def __post_init__(self):
        if self.youngs_modulus <= 0:
            raise ValueError("Young's modulus must be positive")
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise ValueError("Poisson ratio must be in [0, 0.5)")
        if self.density <= 0:
            raise ValueError("density must be positive")

    @property
    def shear_modulus(self) -> float:
        return self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))


@dataclass(frozen=True)
class LinkGeometry:
    length: float
    cross_section: Union[Tube, Disk]
    material: Material
    kind: str = "deformable"  # "deformable" | "rigid"
    mass: Optional[float] = None  # rigid links may pin the mass directly

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("length must be positive")
        if self.kind not in ("deformable", "rigid"):
            raise ValueError(f"unknown link kind {self.kind!r}")
        if isinstance(self.cross_section, Tube):
            if not self.cross_section.outer_diameter > self.cross_section.inner_diameter >= 0:
                raise ValueError("tube needs outer > inner >= 0")

    @property
    def mass_per_length(self) -> float:
        if self.mass is not None:
            return self.mass / self.length
        return self.material.density * self.cross_section.area

    @property
    def total_mass(self) -> float:
        return self.mass_per_length * self.length


def cross_section_stiffness(geom: LinkGeometry) -> np.ndarray:
    """Diagonal screw-stiffness density diag(GJt, EIy, EIz, EA, GAs, GAs)."""
    if geom.kind != "deformable":
        raise RigidLink("cross_section_stiffness needs a deformable link")
    E = geom.material.youngs_modulus
    G = geom.material.shear_modulus
    A = geom.cross_section.area
    I = geom.cross_section.second_moment
    Jt = 2.0 * I  # polar moment of a circular section
    return np.diag([G * Jt, E * I, E * I, E * A, G * A, G * A])


def _strains_at_collocation(basis, xi_fn, q, x0, x1):
    """Zanna collocation strains and basis matrices on segment [x0, x1]."""
    h = x1 - x0
    c1 = x0 + h * (0.5 - _SQRT3 / 6.0)
    c2 = x0 + h * (0.5 + _SQRT3 / 6.0)
    phi1 = basis.eval(c1)
    phi2 = basis.eval(c2)
    xi1 = phi1 @ q + basis.scale * xi_fn(c1)
    xi2 = phi2 @ q + basis.scale * xi_fn(c2)
    return h, xi1, xi2, phi1, phi2


def segment_magnus(basis: StrainBasis, xi_star: ReferenceStrain, q, x0: float, x1: float):
    """Fourth-order Magnus element Omega and dOmega/dq on one grid segment."""
    xi_fn = _as_strain_fn(xi_star)
    h, xi1, xi2, phi1, phi2 = _strains_at_collocation(basis, xi_fn, q, x0, x1)
    sigma = _SQRT3 * h * h / 12.0
    ad1 = lie.small_adjoint(xi1)
    ad2 = lie.small_adjoint(xi2)
    omega = 0.5 * h * (xi1 + xi2) + sigma * (ad1 @ xi2)
    d_omega = 0.5 * h * (phi1 + phi2) + sigma * (ad1 @ phi2 - ad2 @ phi1)
    return omega, d_omega, (sigma, phi1, phi2)


def segment_magnus_hessian(sigma_phi) -> np.ndarray:
    """d2Omega/dq2 tensor (6, n, n) for a segment (quadratic commutator term)."""
    sigma, phi1, phi2 = sigma_phi
    n = phi1.shape[1]
    H = np.zeros((6, n, n))
    for k in range(n):
        adk = lie.small_adjoint(phi1[:, k])
        H[:, :, k] += sigma * (adk @ phi2)
        adk2 = lie.small_adjoint(phi2[:, k])
        H[:, :, k] -= sigma * (adk2 @ phi1)
    return H


def forward_kinematics_link(
    basis: StrainBasis,
    xi_star: ReferenceStrain,
    q,
    grid: QuadratureGrid,
):
    """Link-local poses g(X_j) and Magnus twists Omega_j per segment.

    Returns (poses, omegas): poses is a list of Pose, one per grid point with
    g(0) = identity; omegas has shape (n_p - 1, 6).
    """
    q = np.asarray(q, dtype=float)
    xs = grid.points
    poses = [lg.Pose.identity()]
    omegas = np.empty((len(xs) - 1, 6))
    g = lg.Pose.identity()
    for j in range(len(xs) - 1):
        omega, _, _ = segment_magnus(basis, xi_star, q, xs[j], xs[j + 1])
        omegas[j] = omega
        g = g @ lg.exp_se3(omega)
        poses.append(g)
    return poses, omegas


def link_jacobian(
    basis: StrainBasis,
    xi_star: ReferenceStrain,
    q,
    grid: QuadratureGrid,
):
    """Geometric Jacobians J(X_j), shape (n_p, 6, n_dof), J(0) = 0.

    Differentiates the discrete Zanna recursion exactly:
    J_{j+1} = Ad_exp(Omega_j)^-1 (J_j + T(Omega_j) dOmega_j/dq).
    """
    q = np.asarray(q, dtype=float)
    xs = grid.points
    n = basis.n_dof
    J = np.zeros((len(xs), 6, n))
    for j in range(len(xs) - 1):
        omega, d_omega, _ = segment_magnus(basis, xi_star, q, xs[j], xs[j + 1])
        adinv = lie.adjoint_inv(*lie.exp_se3(omega))
        J[j + 1] = adinv @ (J[j] + lie.tangent(omega) @ d_omega)
    return J


def link_stiffness(basis: StrainBasis, geom: LinkGeometry, grid: QuadratureGrid) -> np.ndarray:
    """Generalized stiffness K_i = l * sum_j w_j Phi^T Sigma Phi.

    Expects the unscaled basis (q in physical strain units).
    """
    sigma = cross_section_stiffness(geom)
    n = basis.n_dof
    K = np.zeros((n, n))
    for x, w in zip(grid.points, grid.weights):
        if w == 0.0:
            continue
        phi = basis.eval(x)
        K += w * (phi.T @ sigma @ phi)
    return geom.length * K


def link_gravity(
    basis: StrainBasis,
    geom: LinkGeometry,
    grid: QuadratureGrid,
    g_world,
    q,
    base_pose: lg.Pose,
) -> np.ndarray:
    """Generalized gravity load on the link's own strain coordinates.

    Integrates J(X)^T times the body-frame gravity wrench per unit length.
    The basis is scaled by the link length internally so q stays in physical
    strain units and positions come out in meters.
    """
    g_world = np.asarray(g_world, dtype=float)
    l = geom.length
    basis_l = basis.scaled(l)
    xi_star = STRAIGHT_REFERENCE
    poses, _ = forward_kinematics_link(basis_l, xi_star, q, grid)
    J = link_jacobian(basis_l, xi_star, q, grid)
    mu = geom.mass_per_length
    F = np.zeros(basis.n_dof)
    for j, (x, w) in enumerate(zip(grid.points, grid.weights)):
        if w == 0.0:
            continue
        R_w = base_pose.rotation @ poses[j].rotation
        wrench = np.zeros(6)
        wrench[3:] = mu * (R_w.T @ g_world)
        F += w * (J[j].T @ wrench)
    return l * F

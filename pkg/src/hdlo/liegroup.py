"""SE(3)/SO(3)/se(3) operations on poses and twists.

Twists are plain length-6 numpy arrays ordered (angular, linear).  Poses are
Pose values holding a rotation matrix and a translation.  All functions are
pure; the heavy lifting is delegated to the selected kernel backend.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hdlo.backend import lie
from hdlo.errors import AngleNearPi, OutOfRange, SingularTangent

hat3 = lie.hat3
hat6 = lie.hat6
vee6 = lie.vee6
small_adjoint = lie.small_adjoint
tangent_T = lie.tangent
tangent_and_dirs = lie.tangent_and_dirs

_TWO_PI = 2.0 * np.pi


@dataclass(frozen=True, eq=False)
class Pose:
    """Element of SE(3): rotation matrix plus translation vector."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_matrix(m) -> "Pose":
        m = np.asarray(m, dtype=float)
        return Pose(m[:3, :3].copy(), m[:3, 3].copy())

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt.copy(), -(rt @ self.translation))

    def apply(self, point) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation


def exp_se3(xi) -> Pose:
    """Closed-form exponential map of a twist."""
    R, p = lie.exp_se3(np.asarray(xi, dtype=float))
    return Pose(R, p)


def log_se3(g: Pose, pi_margin: float = 1e-6) -> np.ndarray:
    """Logarithm map; raises AngleNearPi outside the principal chart."""
    xi, theta = lie.log_se3(g.rotation, g.translation, pi_margin)
    if xi is None:
        raise AngleNearPi(theta, pi_margin)
    return xi


def adjoint(g: Pose) -> np.ndarray:
    """6x6 Adjoint of a pose."""
    return lie.adjoint(g.rotation, g.translation)


def adjoint_inv(g: Pose) -> np.ndarray:
    """Adjoint of g^-1 without forming the inverse pose."""
    return lie.adjoint_inv(g.rotation, g.translation)


def tangent_T_inverse(omega, singular_margin: float = 1e-6) -> np.ndarray:
    """Inverse tangent operator via a direct 6x6 solve against tangent_T.

    The tangent operator is singular when the angular norm hits a nonzero
    multiple of 2*pi; within singular_margin of that the solve is refused.
    """
    omega = np.asarray(omega, dtype=float)
    ang = float(np.linalg.norm(omega[:3]))
    k = round(ang / _TWO_PI)
    if k > 0 and abs(ang - k * _TWO_PI) < singular_margin:
        raise SingularTangent(
            f"angular norm {ang:.9g} within {singular_margin:.3g} of {k}*2*pi"
        )
    return np.linalg.solve(lie.tangent(omega), np.eye(6))


def interpolate_pose(knots, x_query: float, pi_margin: float = 1e-6) -> Pose:
    """Geodesic interpolation between tabulated poses.

    knots is a sequence of (x_j, Pose) with strictly increasing x_j; the
    query pose is g_j * exp(alpha * log(g_j^-1 g_{j+1})) on the bracketing
    segment.  Exact at the knots.
    """
    xs = [float(x) for x, _ in knots]
    if len(xs) < 1:
        raise OutOfRange("no knots given")
    if x_query < xs[0] or x_query > xs[-1]:
        raise OutOfRange(
            f"query {x_query} outside knot range [{xs[0]}, {xs[-1]}]"
        )
    j = int(np.searchsorted(xs, x_query, side="right")) - 1
    if j >= len(xs) - 1:
        return knots[-1][1]
    g_j = knots[j][1]
    g_n = knots[j + 1][1]
    alpha = (x_query - xs[j]) / (xs[j + 1] - xs[j])
    if alpha == 0.0:
        return g_j
    omega = log_se3(g_j.inverse() @ g_n, pi_margin)
    return g_j @ exp_se3(alpha * omega)

"""Circular-aperture environment constraints and interpolated rod positions.

An aperture is a hole of radius rho_h centered at (P_h, z_h) in a plane
parallel to the world xy-plane.  A rod threads it when the centerline point
at some free abscissa X-dagger lies on the plane (c_e = 0) and inside the
disk shrunk by the rod radius (c_in <= 0).  X-dagger is a decision variable
of the planners, so everything here also exposes d/dX-dagger.

Positions between computation frames come from the stored per-segment
Magnus twists: g(X) = g_j exp(alpha * Omega_j), which is exact for the
discrete model the statics and Jacobians live in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hdlo import assembly as am
from hdlo import liegroup as lg
from hdlo import rod
from hdlo.backend import lie
from hdlo.errors import OutOfRange, SceneError


@dataclass(frozen=True)
class Aperture:
    """Circular hole in a horizontal plane that one rod must pass through."""

    center: np.ndarray  # (2,) world xy of the hole center (m)
    plane_z: float  # world z of the aperture plane (m)
    radius: float  # hole radius rho_h (m)
    link: int  # index of the deformable link threading the hole

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.center.shape != (2,):
            raise SceneError("aperture center must be a 2-vector")
        if self.radius <= 0:
            raise SceneError("aperture radius must be positive")


def validate_apertures(asm: am.Assembly, apertures) -> None:
    for k, ap in enumerate(apertures):
        if not 0 <= ap.link < len(asm.links):
            raise SceneError(f"aperture {k}: link index {ap.link} out of range")
        link = asm.links[ap.link]
        if not link.deformable:
            raise SceneError(f"aperture {k}: target link {link.name!r} is rigid")
        if ap.radius <= link.geometry.cross_section.radius:
            raise SceneError(
                f"aperture {k}: radius {ap.radius} does not clear the rod "
                f"radius {link.geometry.cross_section.radius}"
            )


def _bracket(asm: am.Assembly, link: int, x: float):
    """Segment index j, local fraction alpha and width dx containing x."""
    if x < 0.0 or x > 1.0:
        raise OutOfRange(f"abscissa {x} outside [0, 1]")
    pts = asm.grid(link).points
    j = int(np.searchsorted(pts, x, side="right")) - 1
    j = min(max(j, 0), len(pts) - 2)
    dx = pts[j + 1] - pts[j]
    alpha = (x - pts[j]) / dx
    return j, alpha, dx


def position_at(asm: am.Assembly, cache: am.KinematicsCache, link: int, x_dagger: float) -> np.ndarray:
    """World centerline position r(X-dagger) of a deformable link."""
    fr = cache.frames[link]
    if fr.omegas is None:
        raise SceneError(f"link {link} is rigid; apertures need a deformable link")
    j, alpha, _ = _bracket(asm, link, x_dagger)
    g_j = fr.poses[j]
    e_alpha = lg.exp_se3(alpha * fr.omegas[j])
    return g_j.apply(e_alpha.translation)


def position_jacobian_q(asm: am.Assembly, cache: am.KinematicsCache, link: int, x_dagger: float) -> np.ndarray:
    """d r(X-dagger) / dq, shape (3, n_d).

    Three contributions: frame-j translation (R_j J_j^v), frame-j rotation
    swinging the local offset (-R_j hat(r_alpha) J_j^w), and the variation
    of the segment twist itself through the local strain coordinates.
    """
    fr = cache.frames[link]
    if fr.omegas is None:
        raise SceneError(f"link {link} is rigid; apertures need a deformable link")
    j, alpha, _ = _bracket(asm, link, x_dagger)
    g_j = fr.poses[j]
    J_j = fr.J[j]
    omega = fr.omegas[j]
    r_alpha = lg.exp_se3(alpha * omega).translation

    R = g_j.rotation
    dp = R @ (J_j[3:] - lie.hat3(r_alpha) @ J_j[:3])

    # variation of Omega_j through the link's own strain coordinates:
    # delta exp(a*Om) = hat(a T(a*Om) dOm) exp(a*Om)  (left-trivialized)
    l_link = asm.links[link].geometry.length
    basis_l = asm.links[link].basis.scaled(l_link)
    pts = asm.grid(link).points
    _, d_omega, _ = rod.segment_magnus(
        basis_l, rod.STRAIGHT_REFERENCE, cache.q[asm.strain_slices[link]], pts[j], pts[j + 1]
    )
    U = alpha * (lie.tangent(alpha * omega) @ d_omega)  # (6, m)
    local = -lie.hat3(r_alpha) @ U[:3] + U[3:]
    ssl = asm.strain_slices[link]
    dp[:, ssl] += R @ local
    return dp


def position_derivative_x(asm: am.Assembly, cache: am.KinematicsCache, link: int, x_dagger: float) -> np.ndarray:
    """d r(X-dagger) / dX-dagger: the interpolated tangent R(X) Omega_v / dx."""
    fr = cache.frames[link]
    if fr.omegas is None:
        raise SceneError(f"link {link} is rigid; apertures need a deformable link")
    j, alpha, dx = _bracket(asm, link, x_dagger)
    omega = fr.omegas[j]
    R = cache.frames[link].poses[j].rotation @ lg.exp_se3(alpha * omega).rotation
    return R @ omega[3:] / dx


def aperture_constraints(asm: am.Assembly, cache: am.KinematicsCache, apertures, x_daggers):
    """(c_e, c_in) arrays, one entry per aperture.

    c_e = z_h - z(q, X-dagger): zero when the centerline point sits on the
    aperture plane.  c_in = |P_h - P|^2 - (rho_h - rho)^2: nonpositive when
    the point stays inside the hole with the rod radius as margin.
    """
    x_daggers = np.asarray(x_daggers, dtype=float)
    c_e = np.empty(len(apertures))
    c_in = np.empty(len(apertures))
    for k, ap in enumerate(apertures):
        p = position_at(asm, cache, ap.link, x_daggers[k])
        c_e[k] = ap.plane_z - p[2]
        d = ap.center - p[:2]
        rho = asm.links[ap.link].geometry.cross_section.radius
        c_in[k] = float(d @ d) - (ap.radius - rho) ** 2
    return c_e, c_in


def aperture_constraint_jacobians(asm: am.Assembly, cache: am.KinematicsCache, apertures, x_daggers):
    """Derivatives of (c_e, c_in) w.r.t. q and the X-daggers.

    Returns (dce_dq (n_ap, n_d), dce_dx (n_ap,), dcin_dq (n_ap, n_d),
    dcin_dx (n_ap,)); each X-dagger only touches its own aperture rows.
    """
    x_daggers = np.asarray(x_daggers, dtype=float)
    n_ap = len(apertures)
    dce_dq = np.zeros((n_ap, asm.n_d))
    dcin_dq = np.zeros((n_ap, asm.n_d))
    dce_dx = np.zeros(n_ap)
    dcin_dx = np.zeros(n_ap)
    for k, ap in enumerate(apertures):
        p = position_at(asm, cache, ap.link, x_daggers[k])
        dp_dq = position_jacobian_q(asm, cache, ap.link, x_daggers[k])
        dp_dx = position_derivative_x(asm, cache, ap.link, x_daggers[k])
        d = ap.center - p[:2]
        dce_dq[k] = -dp_dq[2]
        dce_dx[k] = -dp_dx[2]
        dcin_dq[k] = -2.0 * (d @ dp_dq[:2])
        dcin_dx[k] = -2.0 * float(d @ dp_dx[:2])
    return dce_dq, dce_dx, dcin_dq, dcin_dx

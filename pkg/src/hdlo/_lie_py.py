"""Pure-numpy kernels for SE(3)/se(3) operations.

Twist layout is (angular, linear): xi[0:3] is the rotational part, xi[3:6]
the translational part.  Poses are passed around as a (R, p) pair with R a
3x3 rotation matrix and p a 3-vector.

This module is the reference backend; hdlo._lie_cy mirrors the same
signatures in Cython for the hot call sites.  Keep the two in sync (the
parity test suite compares them on random inputs).
"""

from __future__ import annotations

import math

import numpy as np

BACKEND_NAME = "python"

# below this rotation angle the trigonometric coefficients switch to their
# Taylor series to avoid 0/0
_SMALL_ANGLE = 1e-4


def hat3(w):
    """3x3 skew-symmetric matrix of a 3-vector."""
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def hat6(xi):
    """4x4 se(3) matrix of a twist."""
    m = np.zeros((4, 4))
    m[:3, :3] = hat3(xi[:3])
    m[:3, 3] = xi[3:]
    return m


def vee6(m):
    """Inverse of hat6."""
    return np.array([m[2, 1], m[0, 2], m[1, 0], m[0, 3], m[1, 3], m[2, 3]])


def _exp_coeffs(theta):
    """Rodrigues coefficients a = sin(t)/t, b = (1-cos(t))/t^2, c = (t-sin(t))/t^3."""
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / (theta * theta)
        c = (theta - np.sin(theta)) / (theta ** 3)
    return a, b, c


def exp_se3(xi):
    """Closed-form exponential map.  Returns (R, p)."""
    w = np.asarray(xi[:3], dtype=float)
    v = np.asarray(xi[3:], dtype=float)
    theta = np.linalg.norm(w)
    a, b, c = _exp_coeffs(theta)
    wh = hat3(w)
    wh2 = wh @ wh
    eye = np.eye(3)
    R = eye + a * wh + b * wh2
    V = eye + b * wh + c * wh2
    return R, V @ v


def log_se3(R, p, pi_margin=1e-6):
    """Logarithm map.  Returns (xi, theta); caller handles theta near pi.

    theta is the rotation angle; when theta > pi - pi_margin the returned
    twist is unreliable and the wrapper raises AngleNearPi.
    """
    tr = np.trace(R)
    c = min(1.0, max(-1.0, (tr - 1.0) / 2.0))
    theta = np.arccos(c)
    if theta > np.pi - pi_margin:
        return None, theta
    skew = R - R.T  # equals 2*sin(theta)*hat(axis)
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        f = 0.5 + t2 / 12.0 + 7.0 * t2 * t2 / 720.0
        g = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        f = theta / (2.0 * np.sin(theta))
        g = 1.0 / (theta * theta) - (1.0 + np.cos(theta)) / (
            2.0 * theta * np.sin(theta)
        )
    w = f * np.array([skew[2, 1], skew[0, 2], skew[1, 0]])
    wh = hat3(w)
    Vinv = np.eye(3) - 0.5 * wh + g * (wh @ wh)
    xi = np.empty(6)
    xi[:3] = w
    xi[3:] = Vinv @ p
    return xi, theta


def adjoint(R, p):
    """6x6 Adjoint of a pose, (angular, linear) twist ordering."""
    ad = np.zeros((6, 6))
    ad[:3, :3] = R
    ad[3:, 3:] = R
    ad[3:, :3] = hat3(p) @ R
    return ad


def adjoint_inv(R, p):
    """Adjoint of the inverse pose, computed without forming the inverse."""
    Rt = R.T
    ad = np.zeros((6, 6))
    ad[:3, :3] = Rt
    ad[3:, 3:] = Rt
    ad[3:, :3] = -Rt @ hat3(p)
    return ad


def small_adjoint(xi):
    """6x6 matrix of ad_xi, the Lie bracket operator on twists."""
    ad = np.zeros((6, 6))
    wh = hat3(xi[:3])
    ad[:3, :3] = wh
    ad[3:, 3:] = wh
    ad[3:, :3] = hat3(xi[3:])
    return ad


# tangent-operator series: T(w) = sum_n ad_w^n / (n+1)!
_SERIES_MAX_TERMS = 24
_SERIES_TOL = 1e-17
# halve the argument until its angular norm is below this before the series
_SERIES_RADIUS = 0.5


def _tangent_series(om):
    ad = small_adjoint(om)
    T = np.eye(6)
    term = np.eye(6)
    for n in range(1, _SERIES_MAX_TERMS):
        term = term @ ad / (n + 1.0)
        T += term
        if np.abs(term).max() < _SERIES_TOL:
            break
    return T

def tangent(om):
    """T(om) = integral_0^1 exp(s*ad_om) ds.

    Uses a truncated series on a halved argument, then doubles back up via
    T(2w) = (I + Ad_exp(w)) T(w) / 2.
    """
    om = np.asarray(om, dtype=float)
    nrm = np.linalg.norm(om)
    k = 0
    while nrm > _SERIES_RADIUS:
        nrm /= 2.0
        k += 1
    w = om / (2.0 ** k)
    T = _tangent_series(w)
    for _ in range(k):
        E = adjoint(*exp_se3(w))
        T = 0.5 * (np.eye(6) + E) @ T
        w = 2.0 * w
    return T


def tangent_and_dirs(om, dirs):
    """T(om) together with directional derivatives dT(om)[d] for each column d.

    dirs is (6, m); returns (T, dT) with dT of shape (m, 6, 6).  Used by the
    analytical second-derivative machinery where the tangent operator is
    differentiated along each generalized-coordinate direction.
    """
    om = np.asarray(om, dtype=float)
    dirs = np.asarray(dirs, dtype=float)
    if dirs.ndim == 1:
        dirs = dirs[:, None]
    m = dirs.shape[1]
    nrm = np.linalg.norm(om)
    k = 0
    while nrm > _SERIES_RADIUS:
        nrm /= 2.0
        k += 1
    scale = 2.0 ** k
    w = om / scale
    dw = dirs / scale  # directions scale with the argument

    ad = small_adjoint(w)
    dad = np.stack([small_adjoint(dw[:, j]) for j in range(m)])  # (m,6,6)

    T = np.eye(6)
    dT = np.zeros((m, 6, 6))
    P = np.eye(6)  # ad^n
    Q = np.zeros((m, 6, 6))  # d(ad^n)
    for n in range(1, _SERIES_MAX_TERMS):
        Q = Q @ ad + P @ dad  # broadcasting over the direction axis
        P = P @ ad
        fac = 1.0 / float(math.factorial(n + 1))
        T = T + fac * P
        dT = dT + fac * Q
        if np.abs(P).max() * fac < _SERIES_TOL:
            break

    for _ in range(k):
        Tw = T
        E = adjoint(*exp_se3(w))
        # d(Ad_exp(w))[dw] = E * ad_{E^{-1} T(w) dw}
        S = np.linalg.solve(E, Tw @ dw)  # (6, m)
        dE = np.stack([E @ small_adjoint(S[:, j]) for j in range(m)])
        IE = np.eye(6) + E
        dT = 0.5 * (dE @ Tw + IE @ dT)
        T = 0.5 * (IE @ Tw)
        w = 2.0 * w
        dw = 2.0 * dw
    return T, dT

# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Cython kernels for SE(3)/se(3) operations.

Compiled twin of hdlo._lie_py with identical signatures and semantics; the
parity test suite compares the two backends on random inputs.  Scalar-hot
functions (exp, log, adjoint, tangent) are written with unrolled C loops;
tangent_and_dirs keeps the numpy formulation since it is matrix-batch bound.
"""

import math

import numpy as np

cimport cython
from libc.math cimport acos, cos, sin, sqrt

BACKEND_NAME = "cython"

cdef double _SMALL_ANGLE = 1e-4
cdef int _SERIES_MAX_TERMS = 24
cdef double _SERIES_TOL = 1e-17
cdef double _SERIES_RADIUS = 0.5


cdef inline void _hat3(double* w, double* m) nogil:
    m[0] = 0.0;   m[1] = -w[2]; m[2] = w[1]
    m[3] = w[2];  m[4] = 0.0;   m[5] = -w[0]
    m[6] = -w[1]; m[7] = w[0];  m[8] = 0.0


cdef inline void _mat3_mul(double* a, double* b, double* out) nogil:
    cdef int i, j, k
    cdef double s
    for i in range(3):
        for j in range(3):
            s = 0.0
            for k in range(3):
                s += a[3 * i + k] * b[3 * k + j]
            out[3 * i + j] = s


cdef inline void _exp_coeffs(double theta, double* a, double* b, double* c) nogil:
    cdef double t2
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        a[0] = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b[0] = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c[0] = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        a[0] = sin(theta) / theta
        b[0] = (1.0 - cos(theta)) / (theta * theta)
        c[0] = (theta - sin(theta)) / (theta * theta * theta)


def hat3(w):
    """3x3 skew-symmetric matrix of a 3-vector."""
    cdef double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    out = np.empty((3, 3))
    cdef double[:, ::1] mv = out
    _hat3(&wv[0], &mv[0, 0])
    return out


def hat6(xi):
    """4x4 se(3) matrix of a twist."""
    m = np.zeros((4, 4))
    m[:3, :3] = hat3(np.asarray(xi)[:3])
    m[:3, 3] = np.asarray(xi)[3:]
    return m


def vee6(m):
    """Inverse of hat6."""
    return np.array([m[2, 1], m[0, 2], m[1, 0], m[0, 3], m[1, 3], m[2, 3]])


def exp_se3(xi):
    """Closed-form exponential map.  Returns (R, p)."""
    cdef double[::1] x = np.ascontiguousarray(xi, dtype=np.float64)
    R = np.empty((3, 3))
    p = np.empty(3)
    cdef double[:, ::1] Rv = R
    cdef double[::1] pv = p
    cdef double w[3]
    cdef double wh[9]
    cdef double wh2[9]
    cdef double theta, a, b, c
    cdef int i, j
    w[0] = x[0]; w[1] = x[1]; w[2] = x[2]
    theta = sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    _exp_coeffs(theta, &a, &b, &c)
    _hat3(w, wh)
    _mat3_mul(wh, wh, wh2)
    for i in range(3):
        for j in range(3):
            Rv[i, j] = a * wh[3 * i + j] + b * wh2[3 * i + j]
        Rv[i, i] += 1.0
    for i in range(3):
        pv[i] = x[3 + i]
        for j in range(3):
            pv[i] += (b * wh[3 * i + j] + c * wh2[3 * i + j]) * x[3 + j]
    return R, p


def log_se3(R, p, double pi_margin=1e-6):
    """Logarithm map.  Returns (xi, theta); xi is None when theta is near pi."""
    cdef double[:, ::1] Rv = np.ascontiguousarray(R, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef double tr = Rv[0, 0] + Rv[1, 1] + Rv[2, 2]
    cdef double cth = (tr - 1.0) / 2.0
    if cth > 1.0:
        cth = 1.0
    elif cth < -1.0:
        cth = -1.0
    cdef double theta = acos(cth)
    if theta > math.pi - pi_margin:
        return None, theta
    cdef double f, g, t2
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        f = 0.5 + t2 / 12.0 + 7.0 * t2 * t2 / 720.0
        g = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        f = theta / (2.0 * sin(theta))
        g = 1.0 / (theta * theta) - (1.0 + cos(theta)) / (2.0 * theta * sin(theta))
    out = np.empty(6)
    cdef double[::1] xi = out
    cdef double w[3]
    cdef double wh[9]
    cdef double wh2[9]
    cdef int i, j
    w[0] = f * (Rv[2, 1] - Rv[1, 2])
    w[1] = f * (Rv[0, 2] - Rv[2, 0])
    w[2] = f * (Rv[1, 0] - Rv[0, 1])
    xi[0] = w[0]; xi[1] = w[1]; xi[2] = w[2]
    _hat3(w, wh)
    _mat3_mul(wh, wh, wh2)
    for i in range(3):
        xi[3 + i] = pv[i]
        for j in range(3):
            xi[3 + i] += (-0.5 * wh[3 * i + j] + g * wh2[3 * i + j]) * pv[j]
    return out, theta


def adjoint(R, p):
    """6x6 Adjoint of a pose, (angular, linear) twist ordering."""
    cdef double[:, ::1] Rv = np.ascontiguousarray(R, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    out = np.zeros((6, 6))
    cdef double[:, ::1] A = out
    cdef double ph[9]
    cdef double pR[9]
    cdef double pt[3]
    cdef int i, j
    pt[0] = pv[0]; pt[1] = pv[1]; pt[2] = pv[2]
    _hat3(pt, ph)
    _mat3_mul(ph, &Rv[0, 0], pR)
    for i in range(3):
        for j in range(3):
            A[i, j] = Rv[i, j]
            A[3 + i, 3 + j] = Rv[i, j]
            A[3 + i, j] = pR[3 * i + j]
    return out


def adjoint_inv(R, p):
    """Adjoint of the inverse pose, computed without forming the inverse."""
    cdef double[:, ::1] Rv = np.ascontiguousarray(R, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    out = np.zeros((6, 6))
    cdef double[:, ::1] A = out
    cdef double ph[9]
    cdef double Rtph[9]
    cdef double Rt[9]
    cdef double pt[3]
    cdef int i, j
    pt[0] = pv[0]; pt[1] = pv[1]; pt[2] = pv[2]
    _hat3(pt, ph)
    for i in range(3):
        for j in range(3):
            Rt[3 * i + j] = Rv[j, i]
    _mat3_mul(Rt, ph, Rtph)
    for i in range(3):
        for j in range(3):
            A[i, j] = Rt[3 * i + j]
            A[3 + i, 3 + j] = Rt[3 * i + j]
            A[3 + i, j] = -Rtph[3 * i + j]
    return out


def small_adjoint(xi):
    """6x6 matrix of ad_xi, the Lie bracket operator on twists."""
    cdef double[::1] x = np.ascontiguousarray(xi, dtype=np.float64)
    out = np.zeros((6, 6))
    cdef double[:, ::1] A = out
    cdef double wh[9]
    cdef double vh[9]
    cdef double w[3]
    cdef double v[3]
    cdef int i, j
    w[0] = x[0]; w[1] = x[1]; w[2] = x[2]
    v[0] = x[3]; v[1] = x[4]; v[2] = x[5]
    _hat3(w, wh)
    _hat3(v, vh)
    for i in range(3):
        for j in range(3):
            A[i, j] = wh[3 * i + j]
            A[3 + i, 3 + j] = wh[3 * i + j]
            A[3 + i, j] = vh[3 * i + j]
    return out


cdef void _mat6_mul(double* a, double* b, double* out) nogil:
    cdef int i, j, k
    cdef double s
    for i in range(6):
        for j in range(6):
            s = 0.0
            for k in range(6):
                s += a[6 * i + k] * b[6 * k + j]
            out[6 * i + j] = s


def tangent(om):
    """T(om) = integral_0^1 exp(s*ad_om) ds (series plus argument halving)."""
    cdef double[::1] ov = np.ascontiguousarray(om, dtype=np.float64)
    cdef double w[6]
    cdef double nrm = 0.0
    cdef int i, j, k, n
    for i in range(6):
        w[i] = ov[i]
        nrm += w[i] * w[i]
    nrm = sqrt(nrm)
    k = 0
    while nrm > _SERIES_RADIUS:
        nrm /= 2.0
        k += 1
    cdef double sc = 1.0
    for i in range(k):
        sc *= 2.0
    for i in range(6):
        w[i] /= sc

    wnp = np.array([w[0], w[1], w[2], w[3], w[4], w[5]])
    ad = small_adjoint(wnp)
    cdef double[:, ::1] adv = ad
    Tout = np.eye(6)
    cdef double[:, ::1] T = Tout
    cdef double term[36]
    cdef double tmp[36]
    cdef double mx
    for i in range(36):
        term[i] = 0.0
    for i in range(6):
        term[7 * i] = 1.0
    for n in range(1, _SERIES_MAX_TERMS):
        _mat6_mul(term, &adv[0, 0], tmp)
        mx = 0.0
        for i in range(36):
            term[i] = tmp[i] / (n + 1.0)
            if term[i] > mx:
                mx = term[i]
            elif -term[i] > mx:
                mx = -term[i]
        for i in range(6):
            for j in range(6):
                T[i, j] += term[6 * i + j]
        if mx < _SERIES_TOL:
            break

    cdef int lvl
    for lvl in range(k):
        E = adjoint(*exp_se3(wnp))
        Tout = 0.5 * (np.eye(6) + E) @ Tout
        T = Tout
        wnp = 2.0 * wnp
    return Tout


def tangent_and_dirs(om, dirs):
    """T(om) with directional derivatives dT(om)[d] per column of dirs."""
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
    dw = dirs / scale

    ad = small_adjoint(w)
    dad = np.stack([small_adjoint(dw[:, j]) for j in range(m)])

    T = np.eye(6)
    dT = np.zeros((m, 6, 6))
    P = np.eye(6)
    Q = np.zeros((m, 6, 6))
    for n in range(1, _SERIES_MAX_TERMS):
        Q = Q @ ad + P @ dad
        P = P @ ad
        fac = 1.0 / float(math.factorial(n + 1))
        T = T + fac * P
        dT = dT + fac * Q
        if np.abs(P).max() * fac < _SERIES_TOL:
            break

    for _ in range(k):
        Tw = T
        E = adjoint(*exp_se3(w))
        S = np.linalg.solve(E, Tw @ dw)
        dE = np.stack([E @ small_adjoint(S[:, j]) for j in range(m)])
        IE = np.eye(6) + E
        dT = 0.5 * (dE @ Tw + IE @ dT)
        T = 0.5 * (IE @ Tw)
        w = 2.0 * w
        dw = 2.0 * dw
    return T, dT

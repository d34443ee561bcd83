"""System graph of rigid and deformable links with loop-closure constraints.

Links form a tree (each link's parent precedes it); closure joints add
loop constraints expressed as masked log-map twist errors.  The generalized
coordinate vector q stacks, link by link, the parent-joint coordinates
followed by the link's strain coordinates (deformable links only).

The kinematics of the whole assembly is a product of exponential "steps"
(joint twists, constant mounts, per-segment Magnus twists).  Differentiating
that product once gives body Jacobians; differentiating it twice gives the
dJ/dq tensors needed for the analytical statics Jacobian (gravity and
closure-force derivatives).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from hdlo import liegroup as lg
from hdlo import rod
from hdlo.backend import lie
from hdlo.errors import MalformedAssembly

_JOINT_DOF = {"fixed": 0, "revolute": 1, "prismatic": 1, "spherical": 3, "free6": 6}


@dataclass(frozen=True)
class JointSpec:
    kind: str = "fixed"
    axis: Optional[np.ndarray] = None
    actuated: bool = False
    limits: Optional[np.ndarray] = None  # (dof, 2) min/max per coordinate

    @property
    def dof(self) -> int:
        return _JOINT_DOF[self.kind]

    def twist_basis(self) -> np.ndarray:
        """6 x dof matrix of joint twist directions."""
        b = np.zeros((6, self.dof))
        if self.kind == "revolute":
            b[:3, 0] = self.axis
        elif self.kind == "prismatic":
            b[3:, 0] = self.axis
        elif self.kind == "spherical":
            b[:3, :] = np.eye(3)
        elif self.kind == "free6":
            b[:, :] = np.eye(6)
        return b

    def limit_array(self) -> np.ndarray:
        if self.limits is not None:
            return np.asarray(self.limits, dtype=float).reshape(self.dof, 2)
        lim = np.empty((self.dof, 2))
        lim[:, 0] = -np.inf
        lim[:, 1] = np.inf
        return lim


@dataclass(frozen=True)
class Link:
    name: str
    parent: int  # index of parent link, -1 = world
    joint: JointSpec
    geometry: rod.LinkGeometry
    mount: lg.Pose = field(default_factory=lg.Pose.identity)
    basis: Optional[rod.StrainBasis] = None  # deformable links only
    n_p: Optional[int] = None  # per-link override of the computation grid

    @property
    def deformable(self) -> bool:
        return self.geometry.kind == "deformable"


@dataclass(frozen=True)
class Closure:
    """Loop constraint between a frame on link_a and a frame on link_b.

    x_* is the normalized abscissa of the frame (None = link tip); offsets
    are fixed transforms applied after the link frame.  mask selects the
    constrained twist components (angular then linear); a fixed closure
    constrains all six, a spherical closure the three linear ones.
    """

    link_a: int
    link_b: int
    x_a: Optional[float] = None
    x_b: Optional[float] = None
    offset_a: lg.Pose = field(default_factory=lg.Pose.identity)
    offset_b: lg.Pose = field(default_factory=lg.Pose.identity)
    mask: Tuple[bool, ...] = (True,) * 6

    @property
    def n_constraints(self) -> int:
        return int(sum(self.mask))

FIXED_CLOSURE_MASK = (True,) * 6
SPHERICAL_CLOSURE_MASK = (False, False, False, True, True, True)


@dataclass(frozen=True)
class EndEffector:
    link: int
    x: Optional[float] = None  # None = tip
    offset: lg.Pose = field(default_factory=lg.Pose.identity)


class Assembly:
    """Validated hDLO-manipulator system description."""

    def __init__(
        self,
        links: Sequence[Link],
        closures: Sequence[Closure] = (),
        end_effector: Optional[EndEffector] = None,
        gravity=(0.0, 0.0, -9.81),
        n_p: int = 21,
    ):
        self.links = list(links)
        self.closures = list(closures)
        self.end_effector = end_effector or EndEffector(len(self.links) - 1)
        self.gravity = np.asarray(gravity, dtype=float)
        self.default_n_p = n_p

        # coordinate layout: per link, joint coords then strain coords
        self.joint_slices: List[slice] = []
        self.strain_slices: List[Optional[slice]] = []
        self._grids: List[Optional[rod.QuadratureGrid]] = []
        off = 0
        actuated = []
        lo, hi = [], []
        for link in self.links:
            dof = link.joint.dof
            self.joint_slices.append(slice(off, off + dof))
            lim = link.joint.limit_array()
            for c in range(dof):
                actuated.append(link.joint.actuated)
                lo.append(lim[c, 0])
                hi.append(lim[c, 1])
            off += dof
            if link.deformable:
                if link.basis is None:
                    raise MalformedAssembly(
                        f"links[{len(self.joint_slices) - 1}] ({link.name})",
                        "deformable link needs a strain basis",
                    )
                n = link.basis.n_dof
                self.strain_slices.append(slice(off, off + n))
                actuated.extend([False] * n)
                lo.extend([-np.inf] * n)
                hi.extend([np.inf] * n)
                off += n
                self._grids.append(
                    rod.QuadratureGrid.gauss_legendre(link.n_p or n_p)
                )
            else:
                self.strain_slices.append(None)
                self._grids.append(None)
        self.n_d = off
        self.actuated_mask = np.array(actuated, dtype=bool)
        self.actuated_idx = np.flatnonzero(self.actuated_mask)
        self.n_a = len(self.actuated_idx)
        self.n_c = sum(c.n_constraints for c in self.closures)
        self.q_lower = np.array(lo)
        self.q_upper = np.array(hi)
        self._stiffness: Optional[np.ndarray] = None

    def grid(self, i: int) -> rod.QuadratureGrid:
        return self._grids[i]

    def link_coords(self, i: int) -> np.ndarray:
        """Global indices of link i's own coordinates (joint then strain)."""
        idx = list(range(self.joint_slices[i].start, self.joint_slices[i].stop))
        s = self.strain_slices[i]
        if s is not None:
            idx.extend(range(s.start, s.stop))
        return np.array(idx, dtype=int)


def validate(asm: Assembly) -> None:
    """Structural sanity checks; raises MalformedAssembly with a path."""
    n = len(asm.links)
    if n == 0:
        raise MalformedAssembly("links", "assembly has no links")
    for i, link in enumerate(asm.links):
        path = f"links[{i}] ({link.name})"
        if not -1 <= link.parent < i:
            raise MalformedAssembly(
                path, f"parent index {link.parent} must precede the link (tree order)"
            )
        if link.joint.kind not in _JOINT_DOF:
            raise MalformedAssembly(path, f"unknown joint kind {link.joint.kind!r}")
        if link.joint.kind in ("revolute", "prismatic"):
            if link.joint.axis is None or len(link.joint.axis) != 3:
                raise MalformedAssembly(path, "revolute/prismatic joint needs a 3-vector axis")
            if abs(np.linalg.norm(link.joint.axis) - 1.0) > 1e-9:
                raise MalformedAssembly(path, "joint axis must be a unit vector")
        if link.joint.actuated:
            lim = link.joint.limit_array()
            if not np.all(np.isfinite(lim)):
                raise MalformedAssembly(path, "actuated joint needs finite limits")
        if link.deformable and link.basis is None:
            raise MalformedAssembly(path, "deformable link needs a strain basis")
        if not link.deformable and link.basis is not None:
            raise MalformedAssembly(path, "rigid link must not carry a strain basis")
    for c_i, clo in enumerate(asm.closures):
        path = f"closures[{c_i}]"
        for which, idx in (("link_a", clo.link_a), ("link_b", clo.link_b)):
            if not 0 <= idx < n:
                raise MalformedAssembly(f"{path}.{which}", f"link index {idx} out of range")
        for which, x in (("x_a", clo.x_a), ("x_b", clo.x_b)):
            if x is not None and not 0.0 <= x <= 1.0:
                raise MalformedAssembly(f"{path}.{which}", f"abscissa {x} outside [0, 1]")
        if len(clo.mask) != 6 or clo.n_constraints == 0:
            raise MalformedAssembly(f"{path}.mask", "mask needs 6 entries, at least one set")
    ee = asm.end_effector
    if not 0 <= ee.link < n:
        raise MalformedAssembly("end_effector.link", f"link index {ee.link} out of range")
    if ee.x is not None and not 0.0 <= ee.x <= 1.0:
        raise MalformedAssembly("end_effector.x", f"abscissa {ee.x} outside [0, 1]")


@dataclass
class _LinkFrames:
    base_pose: lg.Pose
    poses: List[lg.Pose]  # world poses at grid points (deformable) or [base, tip]
    omegas: Optional[np.ndarray]  # Magnus twists per segment (deformable)
    J: np.ndarray  # (n_frames, 6, n_d) world body Jacobians
    dJ: Optional[np.ndarray]  # (n_frames, 6, n_d, n_d) when second_order


@dataclass
class KinematicsCache:
    q: np.ndarray
    frames: List[_LinkFrames]
    second_order: bool


def _advance(g, J, dJ, omega, d_cols, D_local, H_local):
    """One exponential step g -> g * exp(omega).

    d_cols / D_local give the sparse dOmega/dq (global column indices and the
    6 x m local block); H_local is the (6, m, m) local second derivative of
    omega or None.  Returns updated (g, J, dJ).
    """
    E = lg.exp_se3(omega)
    adinv = lie.adjoint_inv(E.rotation, E.translation)
    if D_local is None or D_local.size == 0:
        g_new = g @ E
        J_new = adinv @ J
        dJ_new = None
        if dJ is not None:
            dJ_new = np.einsum("ab,bmk->amk", adinv, dJ)
        return g_new, J_new, dJ_new

    if dJ is None:
        T = lie.tangent(omega)
        M = J.copy()
        M[:, d_cols] += T @ D_local
        return g @ E, adinv @ M, None

    T, dT = lie.tangent_and_dirs(omega, D_local)  # dT: (m, 6, 6)
    M = J.copy()
    M[:, d_cols] += T @ D_local
    J_new = adinv @ M

    n = J.shape[1]
    dM = dJ.copy()  # (6, n, n), indices [:, m, k]
    # dT[D_k] @ D contributes at rows m in d_cols for each k in d_cols
    dTD = dT @ D_local  # (m_k, 6, m_m)
    dM[:, d_cols[:, None], d_cols[None, :]] += np.transpose(dTD, (1, 2, 0))
    if H_local is not None:
        TH = np.einsum("ab,bmk->amk", T, H_local)
        dM[:, d_cols[:, None], d_cols[None, :]] += TH
    dJ_new = np.einsum("ab,bmk->amk", adinv, dM)
    # -ad_{S_k} J_new term, S = columns of Ad^-1 T D (nonzero only at d_cols)
    S = adinv @ (T @ D_local)  # (6, m)
    for j, k in enumerate(d_cols):
        dJ_new[:, :, k] -= lie.small_adjoint(S[:, j]) @ J_new
    return g @ E, J_new, dJ_new


def _const_step(g, J, dJ, offset: lg.Pose):
    """Composition with a constant transform (mount, rigid body, offset)."""
    adinv = lie.adjoint_inv(offset.rotation, offset.translation)
    g_new = g @ offset
    J_new = adinv @ J
    dJ_new = None
    if dJ is not None:
        dJ_new = np.einsum("ab,bmk->amk", adinv, dJ)
    return g_new, J_new, dJ_new


def forward_kinematics(asm: Assembly, q, second_order: bool = False) -> KinematicsCache:
    """World poses and body Jacobians at every computation frame.

    With second_order=True also propagates the dJ/dq tensors used by the
    analytical statics Jacobian.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (asm.n_d,):
        raise ValueError(f"q must have shape ({asm.n_d},), got {q.shape}")
    frames: List[_LinkFrames] = []
    n = asm.n_d
    for i, link in enumerate(asm.links):
        if link.parent < 0:
            g = lg.Pose.identity()
            J = np.zeros((6, n))
            dJ = np.zeros((6, n, n)) if second_order else None
        else:
            pf = frames[link.parent]
            g = pf.poses[-1]
            J = pf.J[-1].copy()
            dJ = pf.dJ[-1].copy() if second_order else None

        g, J, dJ = _const_step(g, J, dJ, link.mount)

        jsl = asm.joint_slices[i]
        if jsl.stop > jsl.start:
            basis_j = link.joint.twist_basis()
            theta = basis_j @ q[jsl]
            cols = np.arange(jsl.start, jsl.stop)
            g, J, dJ = _advance(g, J, dJ, theta, cols, basis_j, None)
        base_pose = g
        base_J = J.copy()
        base_dJ = dJ.copy() if second_order else None

        if link.deformable:
            grid = asm.grid(i)
            ssl = asm.strain_slices[i]
            cols = np.arange(ssl.start, ssl.stop)
            q_i = q[ssl]
            basis_l = link.basis.scaled(link.geometry.length)
            xs = grid.points
            poses = [g]
            Js = [J.copy()]
            dJs = [dJ.copy()] if second_order else None
            omegas = np.empty((len(xs) - 1, 6))
            for j in range(len(xs) - 1):
                omega, d_omega, sp = rod.segment_magnus(
                    basis_l, rod.STRAIGHT_REFERENCE, q_i, xs[j], xs[j + 1]
                )
                H = rod.segment_magnus_hessian(sp) if second_order else None
                omegas[j] = omega
                g, J, dJ = _advance(g, J, dJ, omega, cols, d_omega, H)
                poses.append(g)
                Js.append(J.copy())
                if second_order:
                    dJs.append(dJ.copy())
            frames.append(
                _LinkFrames(
                    base_pose=base_pose,
                    poses=poses,
                    omegas=omegas,
                    J=np.stack(Js),
                    dJ=np.stack(dJs) if second_order else None,
                )
            )
        else:
            tip = lg.Pose(np.eye(3), np.array([link.geometry.length, 0.0, 0.0]))
            g_tip, J_tip, dJ_tip = _const_step(g, J, dJ, tip)
            frames.append(
                _LinkFrames(
                    base_pose=base_pose,
                    poses=[base_pose, g_tip],
                    omegas=None,
                    J=np.stack([base_J, J_tip]),
                    dJ=np.stack([base_dJ, dJ_tip]) if second_order else None,
                )
            )
    return KinematicsCache(q=q.copy(), frames=frames, second_order=second_order)


def _frame_index(asm: Assembly, cache: KinematicsCache, link: int, x: Optional[float]):
    """Index of the cached frame nearest to abscissa x (None = tip)."""
    fr = cache.frames[link]
    if x is None:
        return len(fr.poses) - 1
    if not asm.links[link].deformable:
        return 0 if x < 0.5 else 1
    pts = asm.grid(link).points
    j = int(np.argmin(np.abs(pts - x)))
    if abs(pts[j] - x) > 1e-9:
        raise ValueError(
            f"frame abscissa {x} on link {link} is not a computation point; "
            "closure/EE frames must sit on the grid (use offsets for in-between frames)"
        )
    return j


def frame_kinematics(
    asm: Assembly,
    cache: KinematicsCache,
    link: int,
    x: Optional[float] = None,
    offset: Optional[lg.Pose] = None,
):
    """(pose, J, dJ) of a designated frame; dJ is None without second_order."""
    fr = cache.frames[link]
    j = _frame_index(asm, cache, link, x)
    g = fr.poses[j]
    J = fr.J[j]
    dJ = fr.dJ[j] if cache.second_order else None
    if offset is not None:
        g, J, dJ = _const_step(g, J, dJ, offset)
    return g, J, dJ


def closure_twists(asm: Assembly, cache: KinematicsCache):
    """Per closure: (epsilon, masked rows, frame kinematics of both sides)."""
    out = []
    for clo in asm.closures:
        gA, JA, dJA = frame_kinematics(asm, cache, clo.link_a, clo.x_a, clo.offset_a)
        gB, JB, dJB = frame_kinematics(asm, cache, clo.link_b, clo.x_b, clo.offset_b)
        eps = lg.log_se3(gA.inverse() @ gB)
        rows = np.flatnonzero(np.array(clo.mask, dtype=bool))
        out.append((eps, rows, (gA, JA, dJA), (gB, JB, dJB)))
    return out


def closure_error(asm: Assembly, cache: KinematicsCache) -> np.ndarray:
    """Stacked masked log-map twist errors e_c; zero iff all loops close."""
    parts = []
    for eps, rows, _, _ in closure_twists(asm, cache):
        parts.append(eps[rows])
    return np.concatenate(parts) if parts else np.zeros(0)


def closure_jacobian(asm: Assembly, cache: KinematicsCache) -> np.ndarray:
    """Tangent-operator-free constraint Jacobian: rows of Ad_exp(eps) J_B - J_A."""
    rows_out = []
    for eps, rows, (gA, JA, _), (gB, JB, _) in closure_twists(asm, cache):
        ad = lie.adjoint(*lie.exp_se3(eps))
        abar = ad @ JB - JA
        rows_out.append(abar[rows])
    return np.vstack(rows_out) if rows_out else np.zeros((0, asm.n_d))


def closure_error_jacobian(asm: Assembly, cache: KinematicsCache) -> np.ndarray:
    """Exact Jacobian of e_c: masked rows of T(eps)^-1 (Ad_exp(eps) J_B - J_A)."""
    rows_out = []
    for eps, rows, (gA, JA, _), (gB, JB, _) in closure_twists(asm, cache):
        ad = lie.adjoint(*lie.exp_se3(eps))
        abar = ad @ JB - JA
        Tinv = lg.tangent_T_inverse(eps)
        rows_out.append((Tinv @ abar)[rows])
    return np.vstack(rows_out) if rows_out else np.zeros((0, asm.n_d))


def closure_force_jacobian(asm: Assembly, cache: KinematicsCache, lambda_bar) -> np.ndarray:
    """d(Abar^T lambda_bar)/dq, the constraint-force curvature term.

    Needs a second_order cache.  Per closure with cotangent w = mask^T lam:
    Abar^T w = J_B^T Ad^T w - J_A^T w, differentiated through both Jacobians
    and through Ad_exp(eps) (whose derivative rides on Abar itself).
    """
    if not cache.second_order:
        raise ValueError("closure_force_jacobian needs forward_kinematics(second_order=True)")
    lam = np.asarray(lambda_bar, dtype=float)
    n = asm.n_d
    out = np.zeros((n, n))
    row0 = 0
    for eps, rows, (gA, JA, dJA), (gB, JB, dJB) in closure_twists(asm, cache):
        w = np.zeros(6)
        w[rows] = lam[row0 : row0 + len(rows)]
        row0 += len(rows)
        ad = lie.adjoint(*lie.exp_se3(eps))
        abar = ad @ JB - JA
        adT_w = ad.T @ w
        # dJ^T terms
        out += np.einsum("amk,a->mk", dJB, adT_w) - np.einsum("amk,a->mk", dJA, w)
        # d(Ad^T w)/dq_k = ad_{S_k}^T Ad^T w with S_k = Ad^-1 abar[:, k]
        S = np.linalg.solve(ad, abar)  # (6, n)
        for k in range(n):
            col = S[:, k]
            if not col.any():
                continue
            out[:, k] += JB.T @ (lie.small_adjoint(col).T @ adT_w)
    return out


def gravity_force(asm: Assembly, cache: KinematicsCache) -> np.ndarray:
    """Generalized gravity load F(q) over all links."""
    gvec = asm.gravity
    F = np.zeros(asm.n_d)
    if not gvec.any():
        return F
    for i, link in enumerate(asm.links):
        fr = cache.frames[i]
        if link.deformable:
            grid = asm.grid(i)
            mu = link.geometry.mass_per_length
            l = link.geometry.length
            for j, w in enumerate(grid.weights):
                if w == 0.0:
                    continue
                R = fr.poses[j].rotation
                wrench = np.zeros(6)
                wrench[3:] = mu * (R.T @ gvec)
                F += l * w * (fr.J[j].T @ wrench)
        else:
            m = link.geometry.total_mass
            com = lg.Pose(np.eye(3), np.array([link.geometry.length / 2.0, 0.0, 0.0]))
            g_com, J_com, _ = _const_step(fr.base_pose, fr.J[0], None, com)
            wrench = np.zeros(6)
            wrench[3:] = m * (g_com.rotation.T @ gvec)
            F += J_com.T @ wrench
    return F


def gravity_jacobian(asm: Assembly, cache: KinematicsCache) -> np.ndarray:
    """dF/dq; needs a second_order cache."""
    if not cache.second_order:
        raise ValueError("gravity_jacobian needs forward_kinematics(second_order=True)")
    gvec = asm.gravity
    n = asm.n_d
    dF = np.zeros((n, n))
    if not gvec.any():
        return dF
    for i, link in enumerate(asm.links):
        fr = cache.frames[i]
        if link.deformable:
            grid = asm.grid(i)
            mu = link.geometry.mass_per_length
            l = link.geometry.length
            for j, w in enumerate(grid.weights):
                if w == 0.0:
                    continue
                R = fr.poses[j].rotation
                body_g = R.T @ gvec
                wrench = np.zeros(6)
                wrench[3:] = mu * body_g
                dF += l * w * np.einsum("amk,a->mk", fr.dJ[j], wrench)
                # wrench varies with orientation: d(R^T g) = hat(R^T g) J_omega
                dwr = mu * (lie.hat3(body_g) @ fr.J[j][:3])
                dF += l * w * (fr.J[j][3:].T @ dwr)
        else:
            m = link.geometry.total_mass
            com = lg.Pose(np.eye(3), np.array([link.geometry.length / 2.0, 0.0, 0.0]))
            g_com, J_com, dJ_com = _const_step(fr.base_pose, fr.J[0], fr.dJ[0], com)
            body_g = g_com.rotation.T @ gvec
            wrench = np.zeros(6)
            wrench[3:] = m * body_g
            dF += np.einsum("amk,a->mk", dJ_com, wrench)
            dwr = m * (lie.hat3(body_g) @ J_com[:3])
            dF += J_com[3:].T @ dwr
    return dF


def stiffness(asm: Assembly) -> np.ndarray:
    """Block-diagonal generalized stiffness (constant in q); cached."""
    if asm._stiffness is None:
        K = np.zeros((asm.n_d, asm.n_d))
        for i, link in enumerate(asm.links):
            if link.deformable:
                s = asm.strain_slices[i]
                K[s, s] = rod.link_stiffness(link.basis, link.geometry, asm.grid(i))
        asm._stiffness = K
    return asm._stiffness


def input_matrix(asm: Assembly) -> np.ndarray:
    """Selection matrix B mapping inputs onto actuated coordinates."""
    B = np.zeros((asm.n_d, asm.n_a))
    for col, idx in enumerate(asm.actuated_idx):
        B[idx, col] = 1.0
    return B


def assemble_global(asm: Assembly, cache: KinematicsCache, q=None):
    """(K, F, B) of the full static equilibrium condition."""
    return stiffness(asm), gravity_force(asm, cache), input_matrix(asm)


def end_effector_pose(asm: Assembly, cache: KinematicsCache) -> lg.Pose:
    ee = asm.end_effector
    g, _, _ = frame_kinematics(asm, cache, ee.link, ee.x, ee.offset)
    return g


def end_effector_jacobian(asm: Assembly, cache: KinematicsCache) -> np.ndarray:
    ee = asm.end_effector
    _, J, _ = frame_kinematics(asm, cache, ee.link, ee.x, ee.offset)
    return J

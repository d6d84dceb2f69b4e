"""Thrust allocation: pseudoinverse for the assembled airframe, tilted frame {C} for a unit."""
import math
from dataclasses import dataclass

import numpy as np

from model import build_allocation, exp_so3, _frozen
from workbench import (
    GeometryError,
    NoStaticHover,
    RankDeficient,
    SingularAllocation,
    SingularFrame,
)

PINV_CUTOFF = 1e-10
QUAD_CONDITION_LIMIT = 1e6
SINGULAR_FRAME_ANGLE = math.radians(1.0)
HOVER_TOLERANCE = 1e-3


def _svd_rank(q):
    U, s, Vt = np.linalg.svd(q, full_matrices=True)
    if s.size == 0 or s[0] == 0.0:
        return U, s, Vt, 0
    return U, s, Vt, int(np.sum(s > PINV_CUTOFF * s[0]))


def pseudoinverse(q):
    """Moore-Penrose inverse with singular values below 1e-10*s_max dropped."""
    q = np.asarray(q, dtype=float)
    U, s, Vt, rank = _svd_rank(q)
    return Vt[:rank].T @ np.diag(1.0 / s[:rank]) @ U[:, :rank].T


def allocate_fully_actuated(alloc, wrench):
    """Minimum-norm thrusts realising `wrench` ({CoG}); never clamped."""
    if wrench.frame != 'CoG':
        raise GeometryError(f"fully-actuated allocation expects a CoG wrench, got {wrench.frame}")
    q = alloc.q
    U, s, Vt, rank = _svd_rank(q)
    if rank < 6:
        missing = U[:, rank:].T
        directions = '; '.join('[' + ', '.join(f"{v:+.3f}" for v in row) + ']' for row in missing)
        err = RankDeficient(f"allocation rank {rank} < 6, unreachable wrench directions: {directions}")
        err.subspace = missing
        raise err
    pinv = Vt[:rank].T @ np.diag(1.0 / s[:rank]) @ U[:, :rank].T
    return pinv @ wrench.as_array()


@dataclass(frozen=True, eq=False)
class TiltedFrame:
    """Uniform static thrust and the rotation R_C taking {CoG} to {C}."""
    static_thrust: np.ndarray
    rotation: np.ndarray
    q_tran_c: np.ndarray
    q_rot_c: np.ndarray
    mass: float
    gravity: float
    torque_residual: float

    def __post_init__(self):
        n = len(self.static_thrust)
        object.__setattr__(self, 'static_thrust', _frozen(self.static_thrust, (n,)))
        object.__setattr__(self, 'rotation', _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, 'q_tran_c', _frozen(self.q_tran_c, (3, n)))
        object.__setattr__(self, 'q_rot_c', _frozen(self.q_rot_c, (3, n)))

    @property
    def hover_attitude(self):
        """Attitude {W}<-{CoG} at which the static thrust points straight up.

        `rotation` maps {CoG} coordinates into {C}; hovering means {C} is level.
        """
        return self.rotation

    @property
    def tilt(self):
        return math.acos(max(-1.0, min(1.0, self.rotation[2, 2])))

    @property
    def weight(self):
        return self.mass * self.gravity

    @property
    def hover_ratio(self):
        """Residual torque per newton of collective thrust."""
        return self.torque_residual / self.weight


def static_thrust_frame(model, hover_tolerance=HOVER_TOLERANCE):
    """Uniform static thrust and {C} for a 4-rotor unit.

    `hover_tolerance` bounds |Q_rot 1| / |Q_tran 1|, the torque per newton of
    collective thrust left by uniform thrust.
    """
    if model.n_rotors != 4:
        raise GeometryError(f"tilted frame needs exactly 4 rotors, got {model.n_rotors}")
    alloc = build_allocation(model)
    ones = np.ones(4)
    collective = alloc.q_tran @ ones
    norm = float(np.linalg.norm(collective))
    if norm < 1e-12:
        raise SingularFrame("rotor directions cancel, no collective thrust")
    ratio = float(np.linalg.norm(alloc.q_rot @ ones)) / norm
    if ratio > hover_tolerance:
        raise NoStaticHover(f"uniform thrust leaves {ratio:.3e} N*m per N of collective thrust "
                            f"(tolerance {hover_tolerance:.1e})")

    weight = model.mass * model.gravity
    lam = np.full(4, weight / norm)
    direction = collective / norm
    angle = math.acos(max(-1.0, min(1.0, direction[2])))
    if angle > math.pi - SINGULAR_FRAME_ANGLE:
        raise SingularFrame("collective thrust points down, minimal rotation undefined")
    axis = np.cross(direction, np.array([0.0, 0.0, 1.0]))
    axis_norm = float(np.linalg.norm(axis))
    if axis_norm < 1e-15:
        R_c = np.eye(3)
    else:
        R_c = exp_so3(axis / axis_norm * angle)

    q_tran_c = R_c @ alloc.q_tran
    q_rot_c = R_c @ alloc.q_rot
    residual = float(np.linalg.norm(q_rot_c @ lam))
    return TiltedFrame(lam, R_c, q_tran_c, q_rot_c, model.mass, model.gravity, residual)


@dataclass(frozen=True, eq=False)
class QuadAllocation:
    matrix: np.ndarray
    inverse: np.ndarray
    condition: float

    def __post_init__(self):
        object.__setattr__(self, 'matrix', _frozen(self.matrix, (4, 4)))
        object.__setattr__(self, 'inverse', _frozen(self.inverse, (4, 4)))


def build_quad_allocation(q_tran_z, q_rot):
    """Stack the vertical force row over the torque rows and invert."""
    A = np.vstack([np.asarray(q_tran_z, dtype=float).reshape(1, 4), np.asarray(q_rot, dtype=float)])
    condition = float(np.linalg.cond(A))
    if not math.isfinite(condition) or condition >= QUAD_CONDITION_LIMIT:
        raise SingularAllocation(f"4x4 allocation ill-conditioned (cond={condition:.3e})")
    inverse = np.linalg.inv(A)
    if np.max(np.abs(A @ inverse - np.eye(4))) > 1e-9:
        raise SingularAllocation("4x4 allocation inverse failed verification")
    return QuadAllocation(A, inverse, condition)


def quad_allocation(frame):
    return build_quad_allocation(frame.q_tran_c[2], frame.q_rot_c)


def allocate_under_actuated(quad, f_z, torque):
    return quad.inverse @ np.concatenate([[float(f_z)], np.asarray(torque, dtype=float)])

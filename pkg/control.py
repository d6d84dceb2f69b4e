"""PID and LQI control for a single unit ({C} frame) and the assembled airframe ({CoG})."""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from allocation import allocate_fully_actuated, pseudoinverse, static_thrust_frame
from model import WrenchVector, build_allocation, euler_zyx, rot_z, wrap_angle
from workbench import (
    ConfigError,
    RiccatiError,
    ThrustTooLow,
    WeightError,
    load_section,
    log,
)

# LQI state: e, e_dot per axis, then the three integrals
ERROR_ROWS = (0, 2, 4)
RATE_ROWS = (1, 3, 5)
INTEGRAL_ROWS = (6, 7, 8)
RICCATI_RESIDUAL_LIMIT = 1e-8
FREE_FALL_RATIO = 0.1


def _vec3(values, name, allow_inf=False):
    arr = np.broadcast_to(np.asarray(values, dtype=float), (3,)).copy()
    valid = ~np.isnan(arr) if allow_inf else np.isfinite(arr)
    if np.any(arr < 0.0) or not np.all(valid):
        bound = "non-negative" if allow_inf else "finite and non-negative"
        raise ConfigError(f"{name} must be {bound}, got {values}")
    return arr


@dataclass(frozen=True, eq=False)
class PidGains:
    kp: np.ndarray
    ki: np.ndarray
    kd: np.ndarray
    integral_limit: np.ndarray = field(default_factory=lambda: np.full(3, np.inf))

    def __post_init__(self):
        for name in ('kp', 'ki', 'kd'):
            object.__setattr__(self, name, _vec3(getattr(self, name), name))
        # no limit: +inf
        object.__setattr__(self, 'integral_limit', _vec3(self.integral_limit, 'integral_limit', allow_inf=True))

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(data['kp'], data['ki'], data['kd'], data.get('integral_limit', np.inf))
        except KeyError as e:
            raise ConfigError(f"gain set missing {e}") from e


@dataclass
class PidState:
    integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    previous_error: np.ndarray = None

    def extract_integral(self):
        return self.integral.copy()

    def inject_integral(self, integral, limit=None):
        value = np.asarray(integral, dtype=float).copy()
        if limit is not None:
            value = np.clip(value, -limit, limit)
        self.integral = value

    def reset(self):
        self.integral = np.zeros(3)
        self.previous_error = None


def _pid_terms(error, state, dt, gains, error_rate):
    if not dt > 0.0:
        raise ConfigError(f"dt must be positive, got {dt}")
    error = np.asarray(error, dtype=float)
    if error_rate is None:
        if state.previous_error is None:
            error_rate = np.zeros(3)
        else:
            error_rate = (error - state.previous_error) / dt
    state.previous_error = error.copy()
    state.integral = np.clip(state.integral + error * dt, -gains.integral_limit, gains.integral_limit)
    return gains.kp * error + gains.ki * state.integral + gains.kd * np.asarray(error_rate, dtype=float)


def pid_position(e_r, state, R, m, dt, gains, e_dot=None):
    """Desired force in the frame given by R: m R^T (Kp e + Ki int(e) + Kd e_dot)."""
    return m * np.asarray(R).T @ _pid_terms(e_r, state, dt, gains, e_dot)


def pid_attitude(e_att, state, inertia, omega, dt, gains, e_dot=None):
    I = np.asarray(inertia, dtype=float)
    w = np.asarray(omega, dtype=float)
    return I @ _pid_terms(e_att, state, dt, gains, e_dot) + np.cross(w, I @ w)


def underactuated_position_pipeline(f_des, R, frame, m):
    """(roll target, pitch target, collective thrust share) for a tilted unit.

    `f_des` and `R` are expressed in the heading frame.
    """
    f = np.asarray(f_des, dtype=float)
    weight = m * frame.gravity
    if np.linalg.norm(f) <= FREE_FALL_RATIO * weight:
        raise ThrustTooLow(f"desired force {np.linalg.norm(f):.3f} N below {FREE_FALL_RATIO:.0%} of weight")
    theta = math.atan2(-f[1], math.hypot(f[0], f[2]))
    phi = math.atan2(f[0], f[2])
    f_z = float(np.asarray(R)[:, 2] @ f)
    return theta, phi, (f_z / weight) * frame.static_thrust


@dataclass(frozen=True, eq=False)
class LqiSystem:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    P: np.ndarray
    K: np.ndarray
    residual: float
    eigenvalues: np.ndarray


@dataclass(frozen=True, eq=False)
class LqiDesign:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    M: np.ndarray
    N: np.ndarray
    P: np.ndarray
    K: np.ndarray
    residual: float
    eigenvalues: np.ndarray

    @property
    def feedback_gain(self):
        """Gain G with lambda_rot = G x (apart from the gyroscopic term)."""
        return -self.K


def frame_inertia(model, frame):
    return frame.rotation @ model.inertia @ frame.rotation.T


def build_lqi_system(model, frame):
    I_c = frame_inertia(model, frame)
    I_inv = np.linalg.inv(I_c)
    A = np.zeros((9, 9))
    B = np.zeros((9, 4))
    D = np.zeros((9, 3))
    for axis, (e_row, rate_row, int_row) in enumerate(zip(ERROR_ROWS, RATE_ROWS, INTEGRAL_ROWS)):
        A[e_row, rate_row] = 1.0
        A[int_row, e_row] = 1.0
    # e = target - attitude, so thrust that speeds the body up slows the error down
    B[list(RATE_ROWS), :] = -I_inv @ frame.q_rot_c
    D[list(RATE_ROWS), :] = I_inv
    return LqiSystem(A, B, np.eye(9), D)


def _diag(values, size, name):
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        return np.eye(size) * float(arr)
    if arr.ndim == 1:
        if arr.shape != (size,):
            raise WeightError(f"{name} needs {size} entries, got {arr.shape[0]}")
        return np.diag(arr)
    if arr.shape != (size, size) or np.any(arr != np.diag(np.diag(arr))):
        raise WeightError(f"{name} must be diagonal {size}x{size}")
    return arr.copy()


def lqi_weight_N(W1, W2, q_tran_c):
    """N = W1 + Q_tran'^T W2 Q_tran', penalising the net force of the attitude thrusts."""
    q = np.asarray(q_tran_c, dtype=float)
    w1 = _diag(W1, q.shape[1], 'W1')
    w2 = _diag(W2, q.shape[0], 'W2')
    if np.any(np.diag(w1) <= 0.0):
        raise WeightError("W1 must be positive on the diagonal")
    if np.any(np.diag(w2) < 0.0):
        raise WeightError("W2 must be non-negative on the diagonal")
    N = w1 + q.T @ w2 @ q
    N = 0.5 * (N + N.T)
    if np.min(np.linalg.eigvalsh(N)) <= 0.0:
        raise WeightError("N is not positive-definite")
    return N


def solve_lqi_gain(A, B, M, N):
    A, B, M, N = (np.atleast_2d(np.asarray(v, dtype=float)) for v in (A, B, M, N))
    if B.shape[0] != A.shape[0]:
        B = B.T
    try:
        P = linalg.solve_continuous_are(A, B, M, N)
    except (linalg.LinAlgError, ValueError) as e:
        raise RiccatiError(f"Riccati equation has no stabilising solution: {e}") from e
    P = 0.5 * (P + P.T)
    K = np.linalg.solve(N, B.T @ P)
    pb = P @ B @ K
    residual_matrix = A.T @ P + P @ A - pb + M
    scale = max(np.linalg.norm(A.T @ P) + np.linalg.norm(P @ A) + np.linalg.norm(pb) + np.linalg.norm(M), 1e-300)
    residual = float(np.linalg.norm(residual_matrix) / scale)
    if not np.isfinite(residual) or residual >= RICCATI_RESIDUAL_LIMIT:
        raise RiccatiError(f"Riccati residual {residual:.3e} too large")
    eigenvalues = np.linalg.eigvals(A - B @ K)
    if np.max(eigenvalues.real) >= 0.0:
        raise RiccatiError(f"closed loop not stable (max real part {np.max(eigenvalues.real):.3e})")
    return RiccatiSolution(P, K, residual, eigenvalues)


def design_lqi(model, frame, m_weights, w1, w2):
    system = build_lqi_system(model, frame)
    M = _diag(m_weights, 9, 'M')
    N = lqi_weight_N(w1, w2, frame.q_tran_c)
    sol = solve_lqi_gain(system.A, system.B, M, N)
    log(f"lqi '{model.name}': residual={sol.residual:.2e}, "
        f"slowest pole={np.max(sol.eigenvalues.real):.3f}", 'DEBUG')
    return LqiDesign(system.A, system.B, system.C, system.D, M, N, sol.P, sol.K,
                     sol.residual, sol.eigenvalues)


def lqi_attitude_output(x, design, frame, omega_c, inertia_c):
    w = np.asarray(omega_c, dtype=float)
    gyro = np.cross(w, np.asarray(inertia_c) @ w)
    return design.feedback_gain @ np.asarray(x, dtype=float) + pseudoinverse(frame.q_rot_c) @ gyro


@dataclass(frozen=True)
class Reference:
    position: tuple = (0.0, 0.0, 0.0)
    velocity: tuple = (0.0, 0.0, 0.0)
    yaw: float = 0.0


@dataclass
class ControlOutput:
    thrusts: np.ndarray
    wrench: WrenchVector
    telemetry: dict


class UnitController:
    """Position PID -> roll/pitch targets of {C} -> LQI attitude, one tilted unit."""

    def __init__(self, model, config=None, frame=None, design=None):
        cfg = load_section('control', config)
        alloc_cfg = load_section('allocation', config)
        self.model = model
        self.frame = frame or static_thrust_frame(model, alloc_cfg['hover_tolerance'])
        self.inertia_c = frame_inertia(model, self.frame)
        self.design = design or design_lqi(model, self.frame, cfg['lqi_m'], cfg['lqi_w1'], cfg['lqi_w2'])
        self.position_gains = PidGains.from_dict(cfg['unit_position'])
        self.integral_limit = float(cfg['lqi_integral_limit'])
        self.dt = 1.0 / float(cfg['rate_hz'])
        self.position_state = PidState()
        self.attitude_integral = np.zeros(3)
        self._targets = (0.0, 0.0)

    def warm_start_hover(self):
        """Preload the vertical integral so the first command already carries the weight."""
        ki = self.position_gains.ki[2]
        if ki > 0.0:
            self.position_state.integral[2] = self.model.gravity / ki

    def extract_integrals(self):
        return {'position': self.position_state.extract_integral(),
                'attitude': self.attitude_integral.copy()}

    def inject_integrals(self, integrals):
        self.position_state.inject_integral(integrals['position'], self.position_gains.integral_limit)
        self.attitude_integral = np.clip(np.asarray(integrals['attitude'], dtype=float),
                                         -self.integral_limit, self.integral_limit)

    def step(self, state, reference):
        R_wc = state.rotation @ self.frame.rotation.T
        roll, pitch, yaw = euler_zyx(R_wc)
        heading = rot_z(yaw)

        e_r = np.asarray(reference.position, dtype=float) - state.position
        e_v = np.asarray(reference.velocity, dtype=float) - state.velocity
        f_des = pid_position(e_r, self.position_state, heading, self.model.mass, self.dt,
                             self.position_gains, e_v)
        try:
            theta, phi, lam_z = underactuated_position_pipeline(f_des, heading.T @ R_wc,
                                                                self.frame, self.model.mass)
            self._targets = (theta, phi)
        except ThrustTooLow:
            # hold the last attitude targets, no collective
            log("unit controller: desired force near free fall, holding attitude", 'DEBUG')
            theta, phi = self._targets
            lam_z = np.zeros(4)

        e_att = np.array([wrap_angle(theta - roll), wrap_angle(phi - pitch),
                          wrap_angle(reference.yaw - yaw)])
        omega_c = self.frame.rotation @ state.angular_velocity
        self.attitude_integral = np.clip(self.attitude_integral + e_att * self.dt,
                                         -self.integral_limit, self.integral_limit)
        x = np.empty(9)
        x[list(ERROR_ROWS)] = e_att
        x[list(RATE_ROWS)] = -omega_c
        x[list(INTEGRAL_ROWS)] = self.attitude_integral
        lam_rot = lqi_attitude_output(x, self.design, self.frame, omega_c, self.inertia_c)
        thrusts = lam_z + lam_rot

        alloc = build_allocation(self.model)
        wrench = WrenchVector(alloc.q_tran @ thrusts, alloc.q_rot @ thrusts, 'CoG')
        telemetry = {'e': e_r, 'e_dot': e_v, 'e_int': self.position_state.integral.copy(),
                     'att_e': e_att, 'att_int': self.attitude_integral.copy(),
                     'target_roll': theta, 'target_pitch': phi, 'lambda': thrusts}
        return ControlOutput(thrusts, wrench, telemetry)


class AssembledController:
    """Position and attitude PID on the combined airframe with pseudoinverse allocation.

    Every unit runs its own copy and applies only `rotor_slice`; all copies
    compute the same thrust vector.
    """

    def __init__(self, model, config=None, rotor_slice=None):
        cfg = load_section('control', config)
        self.model = model
        self.alloc = build_allocation(model)
        self.position_gains = PidGains.from_dict(cfg['assembled_position'])
        self.attitude_gains = PidGains.from_dict(cfg['assembled_attitude'])
        self.dt = 1.0 / float(cfg['rate_hz'])
        self.rotor_slice = rotor_slice if rotor_slice is not None else slice(0, model.n_rotors)
        self.position_state = PidState()
        self.attitude_state = PidState()

    def warm_start_hover(self):
        ki = self.position_gains.ki[2]
        if ki > 0.0:
            self.position_state.integral[2] = self.model.gravity / ki

    def extract_integrals(self):
        return {'position': self.position_state.extract_integral(),
                'attitude': self.attitude_state.extract_integral()}

    def inject_integrals(self, integrals):
        self.position_state.inject_integral(integrals['position'], self.position_gains.integral_limit)
        self.attitude_state.inject_integral(integrals['attitude'], self.attitude_gains.integral_limit)

    def full_command(self, state, reference):
        roll, pitch, yaw = euler_zyx(state.rotation)
        e_r = np.asarray(reference.position, dtype=float) - state.position
        e_v = np.asarray(reference.velocity, dtype=float) - state.velocity
        f_des = pid_position(e_r, self.position_state, state.rotation, self.model.mass, self.dt,
                             self.position_gains, e_v)
        e_att = np.array([wrap_angle(-roll), wrap_angle(-pitch), wrap_angle(reference.yaw - yaw)])
        omega = np.asarray(state.angular_velocity, dtype=float)
        tau_des = pid_attitude(e_att, self.attitude_state, self.model.inertia, omega, self.dt,
                               self.attitude_gains, -omega)
        wrench = WrenchVector(f_des, tau_des, 'CoG')
        thrusts = allocate_fully_actuated(self.alloc, wrench)
        telemetry = {'e': e_r, 'e_dot': e_v, 'e_int': self.position_state.integral.copy(),
                     'att_e': e_att, 'att_int': self.attitude_state.integral.copy(),
                     'target_roll': 0.0, 'target_pitch': 0.0, 'lambda': thrusts}
        return ControlOutput(thrusts, wrench, telemetry)

    def step(self, state, reference):
        out = self.full_command(state, reference)
        own = out.thrusts[self.rotor_slice]
        out.telemetry['lambda'] = own
        return ControlOutput(own, out.wrench, out.telemetry)

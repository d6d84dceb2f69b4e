"""Rigid-body kinematics, rotor geometry and allocation matrices.

All angles are radians, all frames right-handed and z-up. Arrays held by the
value types below are made read-only on construction.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from workbench import (
    DEFAULTS,
    SCHEMA_VERSION,
    ConfigError,
    GeometryError,
    check_schema,
    read_structured,
    require_schema_version,
    write_structured,
)

GRAVITY = 9.8
FRAMES = ('CoG', 'C', 'W')
ROTOR_OVERLAP = 1e-3

# Optimised unit angles (alpha, beta) per rotor
REFERENCE_ANGLES = ((0.45, 0.73), (0.52, -2.1), (0.52, 2.1), (0.45, -0.73))
# Rotor i sits on the diagonal opposite to its spin partner: (1,2) and (3,4)
UNIT_ROTOR_POSITIONS = ((0.12, -0.12, 0.0), (-0.12, 0.12, 0.0), (-0.12, -0.12, 0.0), (0.12, 0.12, 0.0))
SPIN_SIGNS = (1.0, 1.0, -1.0, -1.0)


def _frozen(values, shape):
    arr = np.array(values, dtype=float)
    if arr.shape != shape:
        raise GeometryError(f"expected shape {shape}, got {arr.shape}")
    arr.flags.writeable = False
    return arr


# --- rotations -------------------------------------------------------------

def skew(w):
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def exp_so3(w):
    """Rodrigues formula for exp([w]x)."""
    w = np.asarray(w, dtype=float)
    theta = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    K = skew(w)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + (math.sin(theta) / theta) * K + ((1.0 - math.cos(theta)) / theta ** 2) * (K @ K)


def rot_x(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def is_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(np.max(np.abs(R.T @ R - np.eye(3))) <= tol and abs(np.linalg.det(R) - 1.0) <= tol)


def orthonormalize(R):
    """Closest rotation in the Frobenius sense (SVD polar factor)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    Q = U @ Vt
    if np.linalg.det(Q) < 0.0:
        U[:, -1] *= -1.0
        Q = U @ Vt
    return Q


def euler_zyx(R):
    """(roll, pitch, yaw) of R = Rz(yaw) Ry(pitch) Rx(roll)."""
    yaw, pitch, roll = Rotation.from_matrix(np.asarray(R, dtype=float)).as_euler('ZYX')
    return np.array([roll, pitch, yaw])


def from_euler_zyx(roll, pitch, yaw):
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def wrap_angle(angle):
    """Wrap to (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True, eq=False)
class Pose:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        object.__setattr__(self, 'position', _frozen(self.position, (3,)))
        object.__setattr__(self, 'rotation', _frozen(self.rotation, (3, 3)))
        if not is_rotation(self.rotation):
            raise GeometryError("pose rotation is not orthonormal")

    def compose(self, other):
        """self ∘ other: `other` is expressed in this pose's frame."""
        return Pose(self.rotation @ other.position + self.position, self.rotation @ other.rotation)

    def inverse(self):
        Rt = self.rotation.T
        return Pose(-Rt @ self.position, Rt)

    def apply(self, point):
        return self.rotation @ np.asarray(point, dtype=float) + self.position


# --- rotors and airframes ------------------------------------------------------

def rotor_direction_from_angles(alpha, beta):
    """Spherical convention shared by every module: (sin a cos b, sin a sin b, cos a)."""
    sa = math.sin(alpha)
    return np.array([sa * math.cos(beta), sa * math.sin(beta), math.cos(alpha)])


def angles_from_direction(direction):
    ux, uy, uz = direction
    alpha = math.atan2(math.hypot(ux, uy), uz)
    beta = math.atan2(uy, ux) if math.hypot(ux, uy) > 0.0 else 0.0
    return alpha, beta


@dataclass(frozen=True, eq=False)
class RotorGeometry:
    position: np.ndarray
    direction: np.ndarray
    alpha: float
    beta: float
    sigma: float = 0.0
    max_thrust: float = 7.0

    def __post_init__(self):
        object.__setattr__(self, 'position', _frozen(self.position, (3,)))
        object.__setattr__(self, 'direction', _frozen(self.direction, (3,)))
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-12:
            raise GeometryError("rotor direction must be a unit vector")
        if not self.max_thrust > 0.0:
            raise GeometryError(f"max_thrust must be positive, got {self.max_thrust}")
        expected = rotor_direction_from_angles(self.alpha, self.beta)
        if np.max(np.abs(expected - self.direction)) > 1e-9:
            raise GeometryError("rotor direction inconsistent with (alpha, beta)")

    @classmethod
    def from_angles(cls, position, alpha, beta, sigma=0.0, max_thrust=7.0):
        return cls(position, rotor_direction_from_angles(alpha, beta), alpha, beta, sigma, max_thrust)

    @classmethod
    def from_direction(cls, position, direction, sigma=0.0, max_thrust=7.0):
        u = np.asarray(direction, dtype=float)
        u = u / np.linalg.norm(u)
        alpha, beta = angles_from_direction(u)
        return cls(position, u, alpha, beta, sigma, max_thrust)

    @property
    def moment_arm(self):
        return np.cross(self.position, self.direction)


@dataclass(frozen=True, eq=False)
class AirframeModel:
    mass: float
    inertia: np.ndarray
    rotors: tuple
    gravity: float = GRAVITY
    name: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'inertia', _frozen(self.inertia, (3, 3)))
        object.__setattr__(self, 'rotors', tuple(self.rotors))
        if not self.mass > 0.0:
            raise GeometryError(f"mass must be positive, got {self.mass}")
        if np.max(np.abs(self.inertia - self.inertia.T)) > 1e-12:
            raise GeometryError("inertia must be symmetric")
        if np.min(np.linalg.eigvalsh(self.inertia)) <= 0.0:
            raise GeometryError("inertia must be positive-definite")
        if len(self.rotors) < 1:
            raise GeometryError("an airframe needs at least one rotor")

    @property
    def n_rotors(self):
        return len(self.rotors)

    @property
    def positions(self):
        return np.array([r.position for r in self.rotors])

    @property
    def directions(self):
        return np.array([r.direction for r in self.rotors])

    @property
    def max_thrusts(self):
        return np.array([r.max_thrust for r in self.rotors])

    @property
    def sigmas(self):
        return np.array([r.sigma for r in self.rotors])

    @property
    def weight(self):
        return np.array([0.0, 0.0, self.mass * self.gravity])

    def scaled(self, mass_scale=1.0, inertia_scale=1.0, thrust_gain=None):
        """Copy with scaled mass/inertia and optionally scaled rotor limits."""
        rotors = self.rotors
        if thrust_gain is not None:
            gains = np.broadcast_to(np.asarray(thrust_gain, dtype=float), (self.n_rotors,))
            rotors = tuple(replace(r, max_thrust=r.max_thrust * g) for r, g in zip(self.rotors, gains))
        return replace(self, mass=self.mass * mass_scale,
                       inertia=np.asarray(self.inertia) * inertia_scale, rotors=rotors)


@dataclass(frozen=True, eq=False)
class AllocationMatrices:
    q_tran: np.ndarray
    q_rot: np.ndarray

    def __post_init__(self):
        n = np.shape(self.q_tran)[1]
        object.__setattr__(self, 'q_tran', _frozen(self.q_tran, (3, n)))
        object.__setattr__(self, 'q_rot', _frozen(self.q_rot, (3, n)))

    @property
    def n_rotors(self):
        return self.q_tran.shape[1]

    @property
    def q(self):
        return np.vstack([self.q_tran, self.q_rot])


def build_allocation(model, counter_torque=False):
    """Q_tran columns u_i, Q_rot columns p_i x u_i (+ sigma_i u_i when asked)."""
    U = model.directions
    q_rot = np.cross(model.positions, U)
    if counter_torque:
        q_rot = q_rot + model.sigmas[:, None] * U
    return AllocationMatrices(U.T, q_rot.T)


@dataclass(frozen=True, eq=False)
class WrenchVector:
    force: np.ndarray
    torque: np.ndarray
    frame: str = 'CoG'

    def __post_init__(self):
        object.__setattr__(self, 'force', _frozen(self.force, (3,)))
        object.__setattr__(self, 'torque', _frozen(self.torque, (3,)))
        if self.frame not in FRAMES:
            raise GeometryError(f"unknown frame '{self.frame}'")

    def _same_frame(self, other):
        if self.frame != other.frame:
            raise GeometryError(f"cannot combine wrenches in {self.frame} and {other.frame}")

    def __add__(self, other):
        self._same_frame(other)
        return WrenchVector(self.force + other.force, self.torque + other.torque, self.frame)

    def __sub__(self, other):
        self._same_frame(other)
        return WrenchVector(self.force - other.force, self.torque - other.torque, self.frame)

    def __mul__(self, scalar):
        return WrenchVector(self.force * scalar, self.torque * scalar, self.frame)

    __rmul__ = __mul__

    def as_array(self):
        return np.concatenate([self.force, self.torque])

    @classmethod
    def from_array(cls, values, frame='CoG'):
        values = np.asarray(values, dtype=float)
        return cls(values[:3], values[3:], frame)


def wrench_from_thrusts(alloc, thrusts):
    thrusts = np.asarray(thrusts, dtype=float)
    if thrusts.shape != (alloc.n_rotors,):
        raise GeometryError(f"expected {alloc.n_rotors} thrusts, got {thrusts.shape}")
    return WrenchVector(alloc.q_tran @ thrusts, alloc.q_rot @ thrusts, 'CoG')


@dataclass(frozen=True, eq=False)
class BodyState:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, 'position', _frozen(self.position, (3,)))
        object.__setattr__(self, 'rotation', _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, 'velocity', _frozen(self.velocity, (3,)))
        object.__setattr__(self, 'angular_velocity', _frozen(self.angular_velocity, (3,)))
        if not is_rotation(self.rotation):
            raise GeometryError("body rotation is not orthonormal")

    @property
    def pose(self):
        return Pose(self.position, self.rotation)


def cuboid_inertia(mass, size_x, size_y, size_z):
    return np.diag([
        mass * (size_y ** 2 + size_z ** 2) / 12.0,
        mass * (size_x ** 2 + size_z ** 2) / 12.0,
        mass * (size_x ** 2 + size_y ** 2) / 12.0,
    ])


def _transfer(inertia, mass, offset):
    d = np.asarray(offset, dtype=float)
    return inertia + mass * (np.dot(d, d) * np.eye(3) - np.outer(d, d))


def combined_model(unit_a, unit_b, relative, name='assembled'):
    """Rigidly join two airframes; `relative` is unit B's pose in unit A's {CoG}.

    The result is expressed in a frame with unit A's axes and origin at the joint CoG.
    """
    if unit_a.gravity != unit_b.gravity:
        raise GeometryError("units disagree on gravity")
    mass = unit_a.mass + unit_b.mass
    t = relative.position
    Rb = relative.rotation
    cog = unit_b.mass * t / mass

    rotors = [replace(r, position=r.position - cog) for r in unit_a.rotors]
    for r in unit_b.rotors:
        rotors.append(RotorGeometry.from_direction(Rb @ r.position + t - cog, Rb @ r.direction,
                                                   r.sigma, r.max_thrust))

    positions = np.array([r.position for r in rotors])
    for i in range(len(positions)):
        gaps = np.linalg.norm(positions[i + 1:] - positions[i], axis=1)
        if gaps.size and np.min(gaps) < ROTOR_OVERLAP:
            j = i + 1 + int(np.argmin(gaps))
            raise GeometryError(f"rotors {i + 1} and {j + 1} overlap ({np.min(gaps) * 1e3:.3f} mm apart)")

    inertia = _transfer(unit_a.inertia, unit_a.mass, -cog)
    inertia = inertia + _transfer(Rb @ unit_b.inertia @ Rb.T, unit_b.mass, t - cog)
    inertia = 0.5 * (inertia + inertia.T)
    return AirframeModel(mass, inertia, tuple(rotors), unit_a.gravity, name)


def default_mounting(separation=None):
    """Face-to-face mounting: unit B ahead of unit A along +x, yawed by pi."""
    if separation is None:
        separation = DEFAULTS['airframe']['separation']
    Rz = rot_z(math.pi)
    Rz[np.abs(Rz) < 1e-15] = 0.0
    return Pose(np.array([separation, 0.0, 0.0]), Rz)


# --- airframe description files -------------------------------------------------

ROTOR_KEYS = ('x', 'y', 'z', 'alpha', 'beta', 'sigma', 'lambda_max')
AIRFRAME_SCHEMA = {
    'schema_version': None,
    'name': None,
    'mass': None,
    'gravity': None,
    'inertia': None,
    'size': None,
    'rotor': {key: None for key in ROTOR_KEYS},
}


def _rotor_entry(raw):
    entry = {}
    for key in ROTOR_KEYS:
        if key in raw:
            entry[key] = float(raw[key])
        elif key in ('z', 'sigma'):
            entry[key] = 0.0
        else:
            raise KeyError(f"rotor.{key}")
    return entry


@dataclass
class AirframeDescription:
    """File-level airframe: keeps the inertia spec as written so files round-trip."""
    mass: float
    rotors: list
    inertia: object = 'cuboid'
    size: list = None
    gravity: float = GRAVITY
    name: str = ''

    @classmethod
    def from_dict(cls, data, where='airframe'):
        check_schema(data, AIRFRAME_SCHEMA, '')
        require_schema_version(data, where)
        try:
            mass = float(data['mass'])
            rotors = [_rotor_entry(r) for r in data['rotor']]
        except KeyError as e:
            raise ConfigError(f"{where}: missing key {e}") from e
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{where}: {e}") from e
        inertia = data.get('inertia', 'cuboid')
        if inertia != 'cuboid':
            if not isinstance(inertia, list) or len(inertia) != 9:
                raise ConfigError(f"{where}: inertia must be 'cuboid' or 9 numbers")
            inertia = [float(v) for v in inertia]
        size = data.get('size')
        if inertia == 'cuboid':
            size = [float(v) for v in (size or DEFAULTS['airframe']['body_size'])]
            if len(size) != 3:
                raise ConfigError(f"{where}: size must have 3 entries")
        return cls(mass=mass, rotors=rotors, inertia=inertia, size=size,
                   gravity=float(data.get('gravity', GRAVITY)), name=str(data.get('name', '')))

    def to_dict(self):
        data = {'schema_version': SCHEMA_VERSION, 'name': self.name, 'mass': self.mass,
                'gravity': self.gravity, 'inertia': self.inertia}
        if self.inertia == 'cuboid':
            data['size'] = list(self.size)
        data['rotor'] = [dict(r) for r in self.rotors]
        return data

    def inertia_matrix(self):
        if self.inertia == 'cuboid':
            return cuboid_inertia(self.mass, *self.size)
        return np.array(self.inertia, dtype=float).reshape(3, 3)

    def to_model(self):
        rotors = tuple(
            RotorGeometry.from_angles((r['x'], r['y'], r['z']), r['alpha'], r['beta'],
                                      r['sigma'], r['lambda_max'])
            for r in self.rotors
        )
        return AirframeModel(self.mass, self.inertia_matrix(), rotors, self.gravity, self.name)

    @classmethod
    def from_model(cls, model):
        rotors = [{'x': float(r.position[0]), 'y': float(r.position[1]), 'z': float(r.position[2]),
                   'alpha': float(r.alpha), 'beta': float(r.beta), 'sigma': float(r.sigma),
                   'lambda_max': float(r.max_thrust)} for r in model.rotors]
        return cls(mass=float(model.mass), rotors=rotors,
                   inertia=[float(v) for v in np.asarray(model.inertia).ravel()],
                   gravity=float(model.gravity), name=model.name)


def read_airframe(path):
    return AirframeDescription.from_dict(read_structured(path), path)


def write_airframe(path, description):
    return write_structured(path, description.to_dict())


def reference_description(angles=REFERENCE_ANGLES, airframe=None, name='tilted-unit',
                          positions=UNIT_ROTOR_POSITIONS):
    """Unit with the standard rotor layout, given tilt angles and airframe defaults."""
    cfg = dict(DEFAULTS['airframe'])
    cfg.update(airframe or {})
    if len(angles) != len(positions):
        raise GeometryError(f"expected {len(positions)} angle pairs, got {len(angles)}")
    rotors = []
    for (x, y, *rest), (alpha, beta), spin in zip(positions, angles, SPIN_SIGNS):
        z = float(rest[0]) if rest else 0.0
        rotors.append({'x': float(x), 'y': float(y), 'z': z, 'alpha': float(alpha), 'beta': float(beta),
                       'sigma': -spin * float(cfg['sigma']), 'lambda_max': float(cfg['max_thrust'])})
    return AirframeDescription(mass=float(cfg['mass']), rotors=rotors, inertia='cuboid',
                               size=[float(v) for v in cfg['body_size']],
                               gravity=float(cfg['gravity']), name=name)


def reference_unit(angles=REFERENCE_ANGLES, airframe=None):
    return reference_description(angles, airframe).to_model()


def assembled_reference(unit=None, separation=None):
    unit = unit if unit is not None else reference_unit()
    return combined_model(unit, unit, default_mounting(separation))

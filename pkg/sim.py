"""Rigid-body world for one or two units: integration, docking joints, sensors and scenario runs."""
import math
import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from model import (
    BodyState,
    Pose,
    build_allocation,
    combined_model,
    default_mounting,
    euler_zyx,
    exp_so3,
    orthonormalize,
)
from workbench import (
    SCHEMA_VERSION,
    CaptureMiss,
    ConfigError,
    GeometryError,
    SimDiverged,
    TiltdockError,
    check_numeric_overlay,
    check_schema,
    load_section,
    log,
    require_schema_version,
    write_structured,
)

MAX_DT = 0.01
FACTOR_RANGE = (0.5, 1.5)
UNIT_ROTORS = 4

TELEMETRY_COLUMNS = (
    'time', 'variant', 'state', 'x', 'y', 'z', 'ref_x', 'ref_y', 'ref_z',
    'roll', 'pitch', 'yaw', 'male_x', 'male_y', 'male_z', 'male_yaw',
    'thrust_total', 'W', 'S_unit', 'S_assem', 'scale', 'load_torque',
)
FLOAT_FORMAT = '%.6f'


@dataclass(frozen=True)
class ModelErrorInjection:
    """Model error carried by one unit's controller copy of the assembled airframe.

    `thrust_gain` scales that unit's own thrust commands (miscalibrated rotors),
    either one factor for all its rotors or one per rotor.
    """
    mass_scale: float = 1.0
    thrust_gain: tuple = 1.0
    inertia_scale: float = 1.0
    unit: int = 1

    def __post_init__(self):
        try:
            gains = np.broadcast_to(np.asarray(self.thrust_gain, dtype=float), (UNIT_ROTORS,))
        except ValueError as e:
            raise ConfigError(f"thrust_gain needs 1 or {UNIT_ROTORS} factors, got {self.thrust_gain}") from e
        object.__setattr__(self, 'thrust_gain', tuple(float(g) for g in gains))
        lo, hi = FACTOR_RANGE
        for name, values in (('mass_scale', [self.mass_scale]), ('thrust_gain', self.thrust_gain),
                             ('inertia_scale', [self.inertia_scale])):
            for value in values:
                if not lo <= value <= hi:
                    raise ConfigError(f"model error {name}={value} outside [{lo}, {hi}]")
        if self.unit not in (0, 1):
            raise ConfigError(f"model error unit must be 0 or 1, got {self.unit}")

    @property
    def gains(self):
        return np.array(self.thrust_gain)

    @property
    def is_identity(self):
        return self.mass_scale == 1.0 and all(g == 1.0 for g in self.thrust_gain) and self.inertia_scale == 1.0

    def apply(self, model):
        return model.scaled(mass_scale=self.mass_scale, inertia_scale=self.inertia_scale)


@dataclass(frozen=True)
class SensorModel:
    position_sigma: float = 0.0
    attitude_sigma: float = 0.0
    latency_ticks: int = 0

    def __post_init__(self):
        if self.position_sigma < 0.0 or self.attitude_sigma < 0.0 or self.latency_ticks < 0:
            raise ConfigError("sensor noise and latency must be non-negative")


class Sensor:
    """Noisy, delayed copy of a body state."""

    def __init__(self, model, rng):
        self.model = model
        self.rng = rng
        self.buffer = deque(maxlen=model.latency_ticks + 1)

    def measure(self, state):
        position = state.position
        rotation = state.rotation
        if self.model.position_sigma > 0.0:
            position = position + self.rng.normal(0.0, self.model.position_sigma, 3)
        if self.model.attitude_sigma > 0.0:
            rotation = rotation @ exp_so3(self.rng.normal(0.0, self.model.attitude_sigma, 3))
        self.buffer.append(BodyState(position, rotation, state.velocity, state.angular_velocity))
        return self.buffer[0]


@dataclass
class Body:
    id: str
    model: object
    position: np.ndarray
    rotation: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    thrust_gain: np.ndarray = None
    external_force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    external_torque: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).copy()
        self.rotation = np.asarray(self.rotation, dtype=float).copy()
        self.velocity = np.asarray(self.velocity, dtype=float).copy()
        self.angular_velocity = np.asarray(self.angular_velocity, dtype=float).copy()
        if self.thrust_gain is None:
            self.thrust_gain = np.ones(self.model.n_rotors)
        self._alloc = build_allocation(self.model)
        self._alloc_sigma = build_allocation(self.model, counter_torque=True)
        self._inertia_inv = np.linalg.inv(self.model.inertia)

    @property
    def state(self):
        return BodyState(self.position, self.rotation, self.velocity, self.angular_velocity)

    @property
    def linear_momentum(self):
        return self.model.mass * self.velocity

    def angular_momentum(self, about=None):
        """World-frame angular momentum about `about` (origin by default)."""
        origin = np.zeros(3) if about is None else np.asarray(about, dtype=float)
        spin = self.rotation @ (self.model.inertia @ self.angular_velocity)
        return spin + self.model.mass * np.cross(self.position - origin, self.velocity)


@dataclass
class Joint:
    id: str
    female: str
    male: str
    body: str
    female_model: object
    male_model: object
    female_pose: Pose
    male_pose: Pose
    female_gain: np.ndarray = None
    male_gain: np.ndarray = None


@dataclass
class WorldState:
    bodies: dict = field(default_factory=dict)
    joints: dict = field(default_factory=dict)
    time: float = 0.0
    steps: int = 0
    gravity: float = 9.8

    def add(self, body):
        if body.id in self.bodies:
            raise GeometryError(f"body '{body.id}' already exists")
        self.bodies[body.id] = body
        return body

    @property
    def linear_momentum(self):
        return sum((b.linear_momentum for b in self.bodies.values()), np.zeros(3))

    def angular_momentum(self, about=None):
        return sum((b.angular_momentum(about) for b in self.bodies.values()), np.zeros(3))


def _body_wrench(body, thrusts, counter_torque):
    lam = np.clip(np.asarray(thrusts, dtype=float), 0.0, body.model.max_thrusts) * body.thrust_gain
    alloc = body._alloc_sigma if counter_torque else body._alloc
    return alloc.q_tran @ lam, alloc.q_rot @ lam


def _omega_dot(body, omega, torque):
    I = body.model.inertia
    return body._inertia_inv @ (torque - np.cross(omega, I @ omega))


def step_dynamics(world, commands, dt, counter_torque=False, orthonormalize_every=1000):
    """Advance every body by dt; `commands` maps body id -> rotor thrusts (missing: zero)."""
    if not 0.0 < dt <= MAX_DT:
        raise ConfigError(f"physics dt must be in (0, {MAX_DT}], got {dt}")
    g = np.array([0.0, 0.0, -world.gravity])
    for body in world.bodies.values():
        thrusts = commands.get(body.id)
        if thrusts is None:
            thrusts = np.zeros(body.model.n_rotors)
        force_b, torque_b = _body_wrench(body, thrusts, counter_torque)
        # force is held over the step; this closed form is what RK4 gives for (p, v)
        accel = (body.rotation @ force_b + body.external_force) / body.model.mass + g
        body.position = body.position + body.velocity * dt + 0.5 * accel * dt * dt
        body.velocity = body.velocity + accel * dt

        torque = torque_b + body.rotation.T @ body.external_torque
        w0 = body.angular_velocity
        k1 = _omega_dot(body, w0, torque)
        k2 = _omega_dot(body, w0 + 0.5 * dt * k1, torque)
        k3 = _omega_dot(body, w0 + 0.5 * dt * k2, torque)
        k4 = _omega_dot(body, w0 + dt * k3, torque)
        w1 = w0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        body.rotation = body.rotation @ exp_so3(0.5 * (w0 + w1) * dt)
        body.angular_velocity = w1
        if not (np.all(np.isfinite(body.position)) and np.all(np.isfinite(body.angular_velocity))):
            raise SimDiverged(f"body '{body.id}' diverged at t={world.time:.3f}s")
    world.steps += 1
    world.time = world.steps * dt
    if orthonormalize_every and world.steps % orthonormalize_every == 0:
        for body in world.bodies.values():
            body.rotation = orthonormalize(body.rotation)
    return world


def docking_event(world, female_id, male_id, mounting=None, capture_radius=0.025,
                  mechanism_mass=0.0, female_frame=None, joint_id=None):
    """Replace the pair by one rigid body, conserving linear and angular momentum.

    Capture is judged in the female {C} frame against the docked offset; the
    male is then snapped onto the nominal mounting.
    """
    female = world.bodies.get(female_id)
    male = world.bodies.get(male_id)
    if female is None or male is None:
        raise GeometryError(f"unknown body in docking pair ({female_id}, {male_id})")
    mounting = mounting or default_mounting()
    level = female.rotation @ (np.eye(3) if female_frame is None else np.asarray(female_frame).T)
    offset = level.T @ (male.position - female.position)
    lateral = float(np.hypot(offset[1], offset[2]))
    if lateral > capture_radius:
        raise CaptureMiss(f"lateral misalignment {lateral * 100:.1f} cm exceeds {capture_radius * 100:.1f} cm")

    f_model, m_model = female.model, male.model
    if mechanism_mass > 0.0:
        # mechanism mass is distributed like the airframe, so inertia grows with it
        k_f = (f_model.mass + mechanism_mass) / f_model.mass
        k_m = (m_model.mass + mechanism_mass) / m_model.mass
        f_model = f_model.scaled(mass_scale=k_f, inertia_scale=k_f)
        m_model = m_model.scaled(mass_scale=k_m, inertia_scale=k_m)
    merged_model = combined_model(f_model, m_model, mounting, name='assembled')
    total = f_model.mass + m_model.mass
    cog_offset = m_model.mass * mounting.position / total

    pair_cog = (female.model.mass * female.position + male.model.mass * male.position) / (
        female.model.mass + male.model.mass)
    momentum = world.bodies[female_id].linear_momentum + world.bodies[male_id].linear_momentum
    spin = female.angular_momentum(pair_cog) + male.angular_momentum(pair_cog)

    rotation = female.rotation
    velocity = momentum / merged_model.mass
    inertia_world = rotation @ merged_model.inertia @ rotation.T
    omega_world = np.linalg.solve(inertia_world, spin)

    body_id = f"{female_id}+{male_id}"
    gain = np.concatenate([female.thrust_gain, male.thrust_gain])
    combined = Body(body_id, merged_model, pair_cog, rotation, velocity, rotation.T @ omega_world, gain)
    joint_id = joint_id or f"joint-{len(world.joints)}"
    world.joints[joint_id] = Joint(joint_id, female_id, male_id, body_id, female.model, male.model,
                                   Pose(-cog_offset, np.eye(3)),
                                   Pose(mounting.position - cog_offset, mounting.rotation),
                                   female.thrust_gain, male.thrust_gain)
    del world.bodies[female_id]
    del world.bodies[male_id]
    world.add(combined)
    log(f"docked '{male_id}' to '{female_id}' at t={world.time:.3f}s (lateral {lateral * 100:.2f} cm)")
    return world


def undock(world, joint_id):
    """Split a joint back into its units, each moving with the rigid velocity field."""
    joint = world.joints.get(joint_id)
    if joint is None:
        raise GeometryError(f"unknown joint '{joint_id}'")
    body = world.bodies.pop(joint.body)
    omega_world = body.rotation @ body.angular_velocity
    for unit_id, model, pose, gain in ((joint.female, joint.female_model, joint.female_pose, joint.female_gain),
                                       (joint.male, joint.male_model, joint.male_pose, joint.male_gain)):
        position = body.position + body.rotation @ pose.position
        velocity = body.velocity + np.cross(omega_world, position - body.position)
        rotation = body.rotation @ pose.rotation
        world.add(Body(unit_id, model, position, rotation, velocity,
                       rotation.T @ omega_world, gain))
    del world.joints[joint_id]
    log(f"undocked '{joint_id}' at t={world.time:.3f}s")
    return world


# --- scenario plumbing ----------------------------------------------------------

SCENARIO_SCHEMA = {
    'schema_version': None,
    'scenario': None,
    'duration': None,
    'seed': None,
    'airframe': None,
    'transition': None,
    'counter_torque': None,
    'circle': {'radius': None, 'altitude': None, 'period': None},
    'noise': {'position_sigma': None, 'attitude_sigma': None, 'latency_ticks': None},
    'model_error': {'mass_scale': None, 'thrust_gain': None, 'inertia_scale': None, 'unit': None},
    'load': {'torque': None, 'ramp': None, 'start': None},
    'config': None,
}


@dataclass
class ScenarioRun:
    name: str
    telemetry: pd.DataFrame
    summary: dict
    fsm_log: object = None


def telemetry_row(**values):
    row = {c: math.nan for c in TELEMETRY_COLUMNS}
    row['variant'] = 'main'
    row['state'] = ''
    unknown = set(values) - set(row)
    if unknown:
        raise ConfigError(f"unknown telemetry columns {sorted(unknown)}")
    row.update(values)
    return row


def telemetry_frame(rows):
    return pd.DataFrame(rows, columns=list(TELEMETRY_COLUMNS))


def attitude_columns(rotation):
    roll, pitch, yaw = euler_zyx(rotation)
    return {'roll': roll, 'pitch': pitch, 'yaw': yaw}


def rmse(errors):
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        return math.nan
    return float(np.sqrt(np.mean(np.sum(errors ** 2, axis=-1))))


_NUMERIC_SECTIONS = ('circle', 'noise', 'model_error', 'load')


def _check_number(value, key):
    try:
        np.asarray(value, dtype=float)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"scenario: invalid value for '{key}': {value!r}") from e


def validate_scenario(spec):
    check_schema(spec, SCENARIO_SCHEMA)
    require_schema_version(spec, 'scenario')
    if 'scenario' not in spec:
        raise ConfigError("scenario spec needs a 'scenario' name")
    for key in ('duration', 'seed'):
        if spec.get(key) is not None:
            _check_number(spec[key], key)
    for section in _NUMERIC_SECTIONS:
        block = spec.get(section) or {}
        if not isinstance(block, dict):
            raise ConfigError(f"scenario: '{section}' must be a mapping, got {block!r}")
        for key, value in block.items():
            if value is not None:
                _check_number(value, f"{section}.{key}")
    if spec.get('config') is not None:
        if not isinstance(spec['config'], dict):
            raise ConfigError("scenario: 'config' must be a mapping")
        check_numeric_overlay(spec['config'])
    duration = spec.get('duration')
    if duration is not None and not float(duration) > 0.0:
        raise ConfigError(f"duration must be positive, got {duration}")
    return spec


def run_scenario(spec, seed=None, out_dir=None, plots=False):
    """Run a registered scenario; write telemetry.csv and summary.json when `out_dir` is given."""
    from scenarios import get_scenario

    validate_scenario(spec)
    name = spec['scenario']
    seed = int(spec.get('seed', 0) if seed is None else seed)
    scenario = get_scenario(name)
    log(f"scenario '{name}' seed={seed} starting")
    try:
        run = scenario.run(spec, seed)
    except TiltdockError as e:
        if isinstance(e, ConfigError):
            raise
        log(f"scenario '{name}' failed: {e}", 'ERROR')
        run = ScenarioRun(name, telemetry_frame([]), {'success': False, 'cause': f"{type(e).__name__}: {e}"})

    summary = {'schema_version': SCHEMA_VERSION, 'scenario': name, 'seed': seed}
    summary.update(run.summary)
    summary.setdefault('cause', None)
    run.summary = summary
    log(f"scenario '{name}' done: success={summary.get('success')}")

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        run.telemetry.to_csv(os.path.join(out_dir, 'telemetry.csv'), index=False,
                             float_format=FLOAT_FORMAT, lineterminator='\n')
        write_structured(os.path.join(out_dir, 'summary.json'), summary)
        if run.fsm_log is not None:
            run.fsm_log.write(os.path.join(out_dir, 'fsm_events.jsonl'))
        if plots and not run.telemetry.empty:
            from plots import plot_telemetry
            plot_telemetry(run.telemetry, out_dir, name)
    return run


def sim_settings(config=None):
    cfg = load_section('sim', config)
    control = load_section('control', config)
    dt = float(cfg['dt'])
    per_tick = int(round(1.0 / (float(control['rate_hz']) * dt)))
    if per_tick < 1:
        raise ConfigError("control period shorter than the physics step")
    return dt, per_tick, int(cfg['orthonormalize_every'])

"""Helpers shared by the scenario modules."""
import math
from dataclasses import dataclass

import numpy as np

from control import AssembledController, Reference, UnitController
from model import (
    BodyState,
    assembled_reference,
    default_mounting,
    euler_zyx,
    read_airframe,
    reference_unit,
    rot_z,
)
from motion import PoseFilter, Tolerances, near_contact_disturbance, relative_pose
from sim import (
    Body,
    ModelErrorInjection,
    ScenarioRun,
    Sensor,
    SensorModel,
    WorldState,
    attitude_columns,
    docking_event,
    rmse,
    sim_settings,
    step_dynamics,
    telemetry_frame,
    telemetry_row,
    undock,
)
from switching import ModelSwitch
from workbench import deep_merge, load_config, load_section


def scenario_config(spec):
    return deep_merge(load_config(), spec.get('config') or {})


def unit_model(spec, config):
    path = spec.get('airframe')
    if path:
        return read_airframe(path).to_model()
    return reference_unit(airframe=load_section('airframe', config))


def docked_separation(config):
    return Tolerances.from_config(config).x_dock


def assembled_model(unit, config):
    return assembled_reference(unit, docked_separation(config))


def sensor_model(spec):
    noise = spec.get('noise') or {}
    return SensorModel(float(noise.get('position_sigma', 0.0)), float(noise.get('attitude_sigma', 0.0)),
                       int(noise.get('latency_ticks', 0)))


def model_error(spec, default=None):
    raw = spec.get('model_error')
    if raw is None:
        return default
    return ModelErrorInjection(float(raw.get('mass_scale', 1.0)), raw.get('thrust_gain', 1.0),
                               float(raw.get('inertia_scale', 1.0)), int(raw.get('unit', 1)))


def hover_rotation(frame, yaw):
    """Body attitude with {C} level and heading `yaw`."""
    return rot_z(yaw) @ frame.hover_attitude


def part_state(body, pose):
    """State of a unit rigidly held at `pose` inside a combined body."""
    position = body.position + body.rotation @ pose.position
    omega_world = body.rotation @ body.angular_velocity
    velocity = body.velocity + np.cross(omega_world, position - body.position)
    rotation = body.rotation @ pose.rotation
    return BodyState(position, rotation, velocity, rotation.T @ omega_world)


def unit_axes(config):
    """Rotations from each unit's frame into the combined frame (female first)."""
    return [np.eye(3), default_mounting(docked_separation(config)).rotation]


@dataclass(frozen=True)
class Circle:
    radius: float = 0.5
    altitude: float = 1.0
    period: float = 30.0

    @classmethod
    def from_spec(cls, spec):
        raw = spec.get('circle') or {}
        return cls(float(raw.get('radius', 0.5)), float(raw.get('altitude', 1.0)),
                   float(raw.get('period', 30.0)))

    def reference(self, t):
        w = 2.0 * math.pi / self.period
        c, s = math.cos(w * t), math.sin(w * t)
        return Reference((self.radius * c, self.radius * s, self.altitude),
                         (-self.radius * w * s, self.radius * w * c, 0.0), 0.0)


class Clock:
    """Control ticks on top of the fixed physics step."""

    def __init__(self, spec, config, default_duration):
        self.dt, self.per_tick, self.orthonormalize_every = sim_settings(config)
        self.period = self.dt * self.per_tick
        self.duration = float(spec.get('duration', default_duration))
        self.ticks = int(round(self.duration / self.period))
        self.counter_torque = bool(spec.get('counter_torque', False))

    def advance(self, world, commands, before_step=None):
        """`before_step(world)` runs ahead of every physics step."""
        for _ in range(self.per_tick):
            if before_step is not None:
                before_step(world)
            step_dynamics(world, commands, self.dt, self.counter_torque, self.orthonormalize_every)


def altitude_excursion(z, reference):
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        return math.nan
    return float(np.max(np.abs(z - reference)))


def track_circle(name, spec, seed, assembled):
    """Fly the circle with one unit, or with the assembled body under distributed control."""
    config = scenario_config(spec)
    clock = Clock(spec, config, 60.0)
    circle = Circle.from_spec(spec)
    rng = np.random.default_rng(seed)
    unit = unit_model(spec, config)
    start = circle.reference(0.0)

    if assembled:
        model = assembled_model(unit, config)
        controllers = [AssembledController(model, config, rotor_slice=slice(4 * i, 4 * i + 4)) for i in range(2)]
        rotation = np.eye(3)
    else:
        model = unit
        controllers = [UnitController(model, config)]
        rotation = hover_rotation(controllers[0].frame, 0.0)
    for ctrl in controllers:
        ctrl.warm_start_hover()

    world = WorldState(gravity=model.gravity)
    body = world.add(Body('body', model, start.position, rotation))
    sensor = Sensor(sensor_model(spec), rng)
    rows, errors = [], []
    for _ in range(clock.ticks):
        ref = circle.reference(world.time)
        measured = sensor.measure(body.state)
        thrusts = np.concatenate([ctrl.step(measured, ref).thrusts for ctrl in controllers])
        error = np.asarray(ref.position) - body.position
        errors.append(error)
        rows.append(telemetry_row(time=world.time, state='tracking', x=body.position[0], y=body.position[1],
                                  z=body.position[2], ref_x=ref.position[0], ref_y=ref.position[1],
                                  ref_z=ref.position[2], thrust_total=float(np.sum(thrusts)),
                                  **attitude_columns(body.rotation)))
        clock.advance(world, {'body': thrusts})

    settle = int(len(errors) * 0.1)
    score = rmse(errors[settle:])
    summary = {'rmse': score, 'max_altitude_excursion': altitude_excursion(
                   [r['z'] for r in rows], circle.altitude),
               'success': bool(np.isfinite(score) and score < circle.radius)}
    return ScenarioRun(name, telemetry_frame(rows), summary)


class DockingRig:
    """Two units ('female', 'male') that fly alone, dock, fly joined and separate again."""

    UNITS = ('female', 'male')

    def __init__(self, spec, seed, transition=True, error=None, default_duration=60.0):
        self.config = scenario_config(spec)
        self.clock = Clock(spec, self.config, default_duration)
        self.rng = np.random.default_rng(seed)
        self.unit = unit_model(spec, self.config)
        self.tol = Tolerances.from_config(self.config)
        self.mounting = default_mounting(self.tol.x_dock)
        self.assembled = assembled_reference(self.unit, self.tol.x_dock)
        sim_cfg = load_section('sim', self.config)
        self.capture_radius = float(sim_cfg['capture_radius'])
        self.mechanism_mass = float(load_section('airframe', self.config)['mechanism_mass'])
        self.disturbance = (float(sim_cfg['disturbance_peak']), float(sim_cfg['disturbance_range']))
        self.sensors = {u: Sensor(sensor_model(spec), self.rng) for u in self.UNITS + ('joined',)}
        self.pose_filter = PoseFilter(float(load_section('motion', self.config)['filter_alpha']))
        self.filtered = None
        self.switch = ModelSwitch(self.config, transition)
        self.error = error
        self.world = None
        self.controllers = {}
        self.references = {}
        self.last = {}
        self.joint_id = None
        self.mode = 'units'
        self.frame = None

    # --- setup ------------------------------------------------------------------

    def place_units(self, female_position, female_yaw, male_position, male_yaw):
        self.world = WorldState(gravity=self.unit.gravity)
        for uid, position, yaw in (('female', female_position, female_yaw), ('male', male_position, male_yaw)):
            ctrl = UnitController(self.unit, self.config)
            ctrl.warm_start_hover()
            self.frame = ctrl.frame
            self.controllers[uid] = ctrl
            self.world.add(Body(uid, self.unit, position, hover_rotation(ctrl.frame, yaw)))
            self.references[uid] = Reference(tuple(position), (0.0, 0.0, 0.0), yaw)
            self.last[uid] = ctrl.frame.static_thrust.copy()

    def docked_male_position(self):
        female = self.world.bodies['female']
        level = female.rotation @ self.frame.rotation.T
        return female.position + rot_z(euler_yaw(level)) @ np.array([self.tol.x_dock, 0.0, 0.0])

    # --- state access -------------------------------------------------------------

    @property
    def joined(self):
        return self.joint_id is not None

    def unit_state(self, uid):
        if not self.joined:
            return self.world.bodies[uid].state
        joint = self.world.joints[self.joint_id]
        pose = joint.female_pose if uid == 'female' else joint.male_pose
        return part_state(self.world.bodies[joint.body], pose)

    def relative(self):
        return relative_pose(self.unit_state('female'), self.unit_state('male'), self.frame.rotation,
                             self.frame.rotation)

    def measured_relative(self):
        female = self.sensors['female'].measure(self.unit_state('female'))
        male = self.sensors['male'].measure(self.unit_state('male'))
        return relative_pose(female, male, self.frame.rotation, self.frame.rotation)

    def filtered_relative(self):
        """Low-passed measured relative pose; raw measurement before the first tick."""
        return self.filtered if self.filtered is not None else self.measured_relative()

    # --- mode changes ---------------------------------------------------------------

    def dock(self):
        """Join the pair; raises CaptureMiss when the male is outside the drogue."""
        self.world = docking_event(self.world, 'female', 'male', self.mounting, self.capture_radius,
                                   self.mechanism_mass, self.frame.rotation, joint_id='dock')
        self.joint_id = 'dock'
        body = self.world.bodies[self.world.joints['dock'].body]
        models = []
        for i in range(2):
            model = body.model
            if self.error is not None and self.error.unit == i:
                model = self.error.apply(model)
            models.append(model)
        outgoing = [self.controllers[u] for u in self.UNITS]
        incoming = self.switch.to_assembled(outgoing, [self.last[u] for u in self.UNITS], models,
                                            [np.eye(3), self.mounting.rotation])
        self.controllers = dict(zip(self.UNITS, incoming))
        hold = Reference(tuple(body.position), (0.0, 0.0, 0.0), euler_yaw(body.rotation))
        self.references = {u: hold for u in self.UNITS}
        self.mode = 'assembled'

    def to_units(self):
        outgoing = [self.controllers[u] for u in self.UNITS]
        incoming = self.switch.to_units(outgoing, [self.last[u] for u in self.UNITS], [self.unit, self.unit],
                                        [np.eye(3), self.mounting.rotation.T])
        self.controllers = dict(zip(self.UNITS, incoming))
        for uid in self.UNITS:
            state = self.unit_state(uid)
            yaw = euler_yaw(state.rotation @ self.frame.rotation.T)
            self.references[uid] = Reference(tuple(state.position), (0.0, 0.0, 0.0), yaw)
        self.mode = 'units'

    def release(self):
        self.world = undock(self.world, self.joint_id)
        self.joint_id = None

    # --- stepping ---------------------------------------------------------------------

    def _gain(self, i):
        if self.mode == 'assembled' and self.error is not None and self.error.unit == i:
            return self.error.gains
        return 1.0

    def tick(self, disturbance=False):
        per_unit = []
        if self.mode == 'assembled':
            body_id = self.world.joints[self.joint_id].body
            measured = self.sensors['joined'].measure(self.world.bodies[body_id].state)
            for i, uid in enumerate(self.UNITS):
                own = self.controllers[uid].step(measured, self.references[uid]).thrusts * self._gain(i)
                per_unit.append(self.switch.apply(i, own))
        else:
            measured = {uid: self.sensors[uid].measure(self.unit_state(uid)) for uid in self.UNITS}
            for i, uid in enumerate(self.UNITS):
                own = self.controllers[uid].step(measured[uid], self.references[uid]).thrusts
                per_unit.append(self.switch.apply(i, own))
            self.filtered = self.pose_filter.update(relative_pose(
                measured['female'], measured['male'], self.frame.rotation, self.frame.rotation))
        for uid, lam in zip(self.UNITS, per_unit):
            self.last[uid] = np.asarray(lam, dtype=float)

        before_step = None
        if self.joined:
            commands = {self.world.joints[self.joint_id].body: np.concatenate(per_unit)}
        else:
            commands = dict(zip(self.UNITS, per_unit))
            if disturbance:
                before_step = self._shake
        self.clock.advance(self.world, commands, before_step)

    def _shake(self, world):
        # rotor wash, redrawn every physics step; the gap is the face clearance
        gap = float(self.relative().position[0]) - self.tol.x_dock
        for uid in self.UNITS:
            world.bodies[uid].external_force = near_contact_disturbance(gap, self.rng, *self.disturbance)

    def telemetry(self, state, **extra):
        anchor = self.world.bodies[self.world.joints[self.joint_id].body] if self.joined else self.world.bodies['female']
        ref = self.references['female'].position
        rel = self.relative()
        switch0 = self.switch.telemetry(0)
        switch1 = self.switch.telemetry(1)
        values = dict(time=self.world.time, state=state, x=anchor.position[0], y=anchor.position[1],
                      z=anchor.position[2], ref_x=ref[0], ref_y=ref[1], ref_z=ref[2],
                      male_x=rel.position[0], male_y=rel.position[1], male_z=rel.position[2], male_yaw=rel.yaw,
                      thrust_total=float(sum(np.sum(v) for v in self.last.values())),
                      W=switch0['W'], S_unit=switch0['S_unit'] + switch1['S_unit'],
                      S_assem=switch0['S_assem'] + switch1['S_assem'], scale=switch0['scale'],
                      **attitude_columns(anchor.rotation))
        values.update(extra)
        return telemetry_row(**values)


def euler_yaw(rotation):
    return euler_zyx(rotation)[2]

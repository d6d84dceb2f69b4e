import json

import numpy as np
import pytest

from allocation import static_thrust_frame
from model import BodyState, build_allocation, rot_x, rot_z
from sim import (
    TELEMETRY_COLUMNS,
    Body,
    ModelErrorInjection,
    Sensor,
    SensorModel,
    WorldState,
    docking_event,
    rmse,
    run_scenario,
    step_dynamics,
    telemetry_row,
    undock,
    validate_scenario,
)
from workbench import DEFAULTS, CaptureMiss, ConfigError, GeometryError, SimDiverged

FLIGHT_TOLERANCE = DEFAULTS['allocation']['hover_tolerance']


def _pair(unit, lateral=0.01):
    frame = static_thrust_frame(unit, FLIGHT_TOLERANCE)
    world = WorldState()
    female = world.add(Body('female', unit, (0.0, 0.0, 1.0), frame.hover_attitude, velocity=(0.1, 0.0, 0.0)))
    male = world.add(Body('male', unit, (0.6, lateral, 1.0), rot_z(np.pi) @ frame.hover_attitude,
                          velocity=(-0.05, 0.02, 0.0), angular_velocity=(0.0, 0.0, 0.2)))
    return world, frame, female, male


def test_model_error_range(unit):
    with pytest.raises(ConfigError):
        ModelErrorInjection(mass_scale=1.6)
    with pytest.raises(ConfigError):
        ModelErrorInjection(thrust_gain=0.4)
    with pytest.raises(ConfigError):
        ModelErrorInjection(unit=2)
    assert ModelErrorInjection().is_identity
    scaled = ModelErrorInjection(mass_scale=1.08).apply(unit)
    assert scaled.mass == pytest.approx(1.1 * 1.08)


def test_model_error_per_rotor_gain():
    uniform = ModelErrorInjection(thrust_gain=1.1)
    assert uniform.thrust_gain == (1.1, 1.1, 1.1, 1.1)
    skewed = ModelErrorInjection(thrust_gain=[1.0, 1.2, 0.9, 1.0])
    np.testing.assert_array_equal(skewed.gains, [1.0, 1.2, 0.9, 1.0])
    assert not skewed.is_identity
    assert ModelErrorInjection(thrust_gain=[1.0] * 4).is_identity
    with pytest.raises(ConfigError, match="1 or 4"):
        ModelErrorInjection(thrust_gain=[1.0, 1.1])
    with pytest.raises(ConfigError, match="thrust_gain"):
        ModelErrorInjection(thrust_gain=[1.0, 1.0, 1.6, 1.0])


def test_sensor_latency():
    sensor = Sensor(SensorModel(latency_ticks=2), np.random.default_rng(0))
    seen = [sensor.measure(BodyState(np.array([k, 0.0, 0.0]))).position[0] for k in range(5)]
    assert seen == [0.0, 0.0, 0.0, 1.0, 2.0]


def test_sensor_noise(rng):
    sensor = Sensor(SensorModel(position_sigma=0.01, attitude_sigma=0.01), rng)
    truth = BodyState(np.array([1.0, 2.0, 3.0]))
    samples = np.array([sensor.measure(truth).position for _ in range(2000)])
    assert samples.std(axis=0) == pytest.approx([0.01] * 3, rel=0.1)
    assert samples.mean(axis=0) == pytest.approx([1.0, 2.0, 3.0], abs=2e-3)
    with pytest.raises(ConfigError):
        SensorModel(position_sigma=-0.1)


def test_free_fall_is_exact(unit):
    world = WorldState()
    body = world.add(Body('u', unit, (0.0, 0.0, 1.0), np.eye(3)))
    for _ in range(100):
        step_dynamics(world, {}, 0.001)
    assert world.time == pytest.approx(0.1)
    assert body.position[2] == pytest.approx(1.0 - 0.5 * 9.8 * 0.01, abs=1e-12)
    assert body.velocity[2] == pytest.approx(-0.98, abs=1e-12)


def test_torque_free_motion_conserves_momentum(unit):
    world = WorldState(gravity=0.0)
    body = world.add(Body('u', unit, (0.0, 0.0, 1.0), rot_z(0.3) @ rot_x(0.2), velocity=(0.2, -0.1, 0.05),
                          angular_velocity=(0.0, 0.0, 2.0)))
    linear = world.linear_momentum.copy()
    angular = world.angular_momentum().copy()
    for _ in range(10_000):
        step_dynamics(world, {}, 0.001)
    assert world.linear_momentum == pytest.approx(linear, abs=1e-9)
    assert world.angular_momentum() == pytest.approx(angular, abs=1e-9)
    assert body.position == pytest.approx([2.0, -1.0, 1.5], abs=1e-9)


def test_step_rejects_large_dt(unit):
    world = WorldState()
    world.add(Body('u', unit, (0.0, 0.0, 1.0), np.eye(3)))
    with pytest.raises(ConfigError):
        step_dynamics(world, {}, 0.02)
    with pytest.raises(ConfigError):
        step_dynamics(world, {}, 0.0)


def test_divergence_is_reported(unit):
    world = WorldState()
    world.add(Body('u', unit, (0.0, 0.0, 1.0), np.eye(3), velocity=(np.nan, 0.0, 0.0)))
    with pytest.raises(SimDiverged):
        step_dynamics(world, {}, 0.001)


def test_static_thrust_holds_altitude(unit):
    frame = static_thrust_frame(unit, FLIGHT_TOLERANCE)
    world = WorldState()
    body = world.add(Body('u', unit, (0.0, 0.0, 1.0), frame.hover_attitude))
    for _ in range(100):
        step_dynamics(world, {'u': frame.static_thrust}, 0.001)
    # only the small residual torque disturbs the hover within 0.1 s
    assert abs(body.velocity[2]) < 1e-3
    assert body.position[2] == pytest.approx(1.0, abs=1e-4)


def test_external_torque_is_world_frame(unit):
    world = WorldState()
    body = world.add(Body('u', unit, (0.0, 0.0, 1.0), rot_z(0.7)))
    body.external_torque = np.array([0.0, 0.0, 0.01])
    step_dynamics(world, {}, 0.001)
    omega_world = body.rotation @ body.angular_velocity
    assert omega_world[0] == pytest.approx(0.0, abs=1e-9)
    assert omega_world[1] == pytest.approx(0.0, abs=1e-9)
    assert omega_world[2] > 0.0


def test_docking_conserves_momentum(unit):
    world, frame, female, male = _pair(unit)
    pair_cog = 0.5 * (female.position + male.position)
    linear = world.linear_momentum.copy()
    angular = world.angular_momentum(pair_cog).copy()
    docking_event(world, 'female', 'male', female_frame=frame.rotation)
    assert list(world.bodies) == ['female+male']
    assert 'joint-0' in world.joints
    body = world.bodies['female+male']
    assert body.model.mass == pytest.approx(2.2)
    assert body.model.n_rotors == 8
    assert world.linear_momentum == pytest.approx(linear, abs=1e-12)
    assert world.angular_momentum(pair_cog) == pytest.approx(angular, abs=1e-10)


def test_docking_capture_miss(unit):
    world, frame, _, _ = _pair(unit, lateral=0.03)
    with pytest.raises(CaptureMiss):
        docking_event(world, 'female', 'male', female_frame=frame.rotation)
    assert set(world.bodies) == {'female', 'male'}
    with pytest.raises(GeometryError):
        docking_event(world, 'female', 'nobody')


def test_undock_restores_units(unit):
    world, frame, _, _ = _pair(unit)
    docking_event(world, 'female', 'male', female_frame=frame.rotation)
    linear = world.linear_momentum.copy()
    with pytest.raises(GeometryError):
        undock(world, 'joint-7')
    undock(world, 'joint-0')
    assert set(world.bodies) == {'female', 'male'}
    assert not world.joints
    assert world.bodies['female'].model is unit and world.bodies['male'].model is unit
    assert world.linear_momentum == pytest.approx(linear, abs=1e-12)
    separation = world.bodies['male'].position - world.bodies['female'].position
    assert np.linalg.norm(separation) == pytest.approx(0.6)


def _level_pair(unit):
    world = WorldState(gravity=0.0)
    world.add(Body('female', unit, (0.0, 0.0, 1.0), np.eye(3)))
    world.add(Body('male', unit, (0.6, 0.0, 1.0), rot_z(np.pi)))
    return world


def test_undock_spinning_pair_gives_tangential_velocities(unit):
    world = _level_pair(unit)
    docking_event(world, 'female', 'male')
    body = world.bodies['female+male']
    body.angular_velocity = body.rotation.T @ np.array([0.0, 0.0, 1.0])
    undock(world, 'joint-0')
    female, male = world.bodies['female'], world.bodies['male']
    # omega * d / 2 about the joint CoG
    np.testing.assert_allclose(female.velocity, [0.0, -0.3, 0.0], atol=1e-12)
    np.testing.assert_allclose(male.velocity, [0.0, 0.3, 0.0], atol=1e-12)
    for part in (female, male):
        np.testing.assert_allclose(part.rotation @ part.angular_velocity, [0.0, 0.0, 1.0], atol=1e-12)


def test_mechanism_mass_scales_inertia(unit):
    bare = _level_pair(unit)
    docking_event(bare, 'female', 'male')
    heavy = _level_pair(unit)
    docking_event(heavy, 'female', 'male', mechanism_mass=0.11)
    light, loaded = bare.bodies['female+male'].model, heavy.bodies['female+male'].model
    assert loaded.mass == pytest.approx(2.42)
    # 10 % more mass, spread like the airframe
    np.testing.assert_allclose(loaded.inertia, 1.1 * np.asarray(light.inertia), rtol=1e-12)


def test_translation_step_matches_rk4(unit):
    world = WorldState()
    body = world.add(Body('u', unit, (0.1, -0.2, 1.0), rot_x(0.3) @ rot_z(0.5), velocity=(0.4, 0.1, -0.2)))
    body.external_force = np.array([0.05, 0.0, -0.1])
    thrusts = np.array([3.0, 3.5, 2.5, 3.2])
    dt = 0.002
    accel = (body.rotation @ build_allocation(unit).q_tran @ thrusts + body.external_force) / unit.mass
    accel = accel + np.array([0.0, 0.0, -world.gravity])
    p, v = body.position.copy(), body.velocity.copy()
    k1p, k1v = v, accel
    k2p, k2v = v + 0.5 * dt * k1v, accel
    k3p, k3v = v + 0.5 * dt * k2v, accel
    k4p, k4v = v + dt * k3v, accel
    p_rk4 = p + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    v_rk4 = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    step_dynamics(world, {'u': thrusts}, dt)
    np.testing.assert_allclose(body.position, p_rk4, atol=1e-12)
    np.testing.assert_allclose(body.velocity, v_rk4, atol=1e-12)


def test_telemetry_row():
    row = telemetry_row(time=0.1, x=1.0)
    assert list(row) == list(TELEMETRY_COLUMNS)
    assert row['variant'] == 'main' and np.isnan(row['y'])
    with pytest.raises(ConfigError):
        telemetry_row(altitude=1.0)


def test_rmse():
    assert rmse([[3.0, 4.0, 0.0], [0.0, 0.0, 0.0]]) == pytest.approx(np.sqrt(12.5))
    assert np.isnan(rmse([]))


def test_validate_scenario():
    validate_scenario({'scenario': 'circle_unit', 'circle': {'radius': 0.4}})
    with pytest.raises(ConfigError, match="circle.speed"):
        validate_scenario({'scenario': 'circle_unit', 'circle': {'speed': 1.0}})
    with pytest.raises(ConfigError):
        validate_scenario({'duration': 1.0})
    with pytest.raises(ConfigError):
        validate_scenario({'scenario': 'circle_unit', 'duration': -1.0})
    with pytest.raises(ConfigError):
        validate_scenario({'scenario': 'circle_unit', 'schema_version': 2})


def test_unknown_scenario():
    with pytest.raises(ConfigError, match='unknown scenario'):
        run_scenario({'scenario': 'barrel_roll'})


def test_run_scenario_writes_outputs(tmp_path):
    spec = {'scenario': 'circle_unit', 'duration': 0.5, 'noise': {'position_sigma': 0.002}}
    first = run_scenario(spec, seed=3, out_dir=str(tmp_path / 'a'))
    run_scenario(spec, seed=3, out_dir=str(tmp_path / 'b'))
    csv_a = (tmp_path / 'a' / 'telemetry.csv').read_bytes()
    assert csv_a == (tmp_path / 'b' / 'telemetry.csv').read_bytes()
    assert csv_a.decode('utf-8').splitlines()[0] == ','.join(TELEMETRY_COLUMNS)
    assert b'\r' not in csv_a
    summary = json.loads((tmp_path / 'a' / 'summary.json').read_text(encoding='utf-8'))
    assert summary['scenario'] == 'circle_unit'
    assert summary['seed'] == 3
    assert summary['schema_version'] == 1
    assert 'success' in summary
    assert len(first.telemetry) == 20

import numpy as np
import pytest

from cli import YAW_RATIO_TARGET
from feasibility import (
    axis_torque_capability,
    face_normals,
    feasibility_report,
    fibonacci_sphere,
    force_face_distances,
    guaranteed_min_force,
    guaranteed_min_torque,
    hover_torque_capability,
    is_flat,
    oracle_min_wrench,
    support,
)
from model import AirframeModel, RotorGeometry, assembled_reference, exp_so3, reference_unit, rot_z
from workbench import ConfigError, DegenerateForcePolytope

# Referenzwerte der veröffentlichten Rotorwinkel (Einheit / Verbund)
PUBLISHED_UNIT_FORCE = 3.1
PUBLISHED_ASSEMBLED_FORCE = 7.5
PUBLISHED_ASSEMBLED_TORQUE = 2.8


def test_reference_unit_values(unit):
    assert guaranteed_min_force(unit) == pytest.approx(2.851, rel=5e-3)
    assert guaranteed_min_torque(unit) == pytest.approx(0.861, rel=5e-3)
    assert guaranteed_min_force(unit) == pytest.approx(PUBLISHED_UNIT_FORCE, rel=0.10)


def test_reference_assembled_values(assembled):
    assert guaranteed_min_force(assembled) == pytest.approx(6.8457, rel=5e-3)
    assert guaranteed_min_torque(assembled) == pytest.approx(2.662, rel=5e-3)
    assert guaranteed_min_force(assembled) == pytest.approx(PUBLISHED_ASSEMBLED_FORCE, rel=0.10)
    assert guaranteed_min_torque(assembled) == pytest.approx(PUBLISHED_ASSEMBLED_TORQUE, rel=0.10)


def test_face_normals_pairs():
    gens = np.eye(3)
    normals, pairs = face_normals(gens)
    assert normals.shape == (6, 3)
    assert pairs.tolist()[:3] == [[0, 1], [0, 2], [1, 2]]
    assert normals[0] == pytest.approx([0.0, 0.0, 1.0])
    assert normals[3] == pytest.approx(-normals[0])


def test_face_normals_skip_parallel():
    gens = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 2.0], [1.0, 0.0, 0.0]])
    normals, pairs = face_normals(gens)
    assert len(normals) == 4
    assert [0, 1] not in pairs.tolist()


def test_support_function(unit):
    up = np.array([[0.0, 0.0, 1.0]])
    expected = 7.0 * np.sum(np.clip(unit.directions[:, 2], 0.0, None))
    assert support(unit, 'force', up)[0] == pytest.approx(expected)
    assert support(unit, 'force', -up)[0] == pytest.approx(0.0)


def test_hover_inside_force_polytope(unit, assembled):
    for model in (unit, assembled):
        distances, pairs = force_face_distances(model)
        assert np.min(distances) > 0.0
        assert len(distances) == len(pairs)


def test_report(unit):
    report = feasibility_report(unit)
    data = report.to_dict()
    assert data['f_min'] == pytest.approx(guaranteed_min_force(unit))
    assert data['faces_inspected'] == 24
    assert all(1 <= i <= 4 for i in data['force_pair'] + data['torque_pair'])
    assert data['degenerate'] == []
    assert data['yaw_capability'] == pytest.approx(axis_torque_capability(unit, (0, 0, 1)))


def test_vertical_rotors_are_degenerate():
    vertical = reference_unit(((0.0, 0.0),) * 4)
    assert is_flat(vertical, 'force')
    assert is_flat(vertical, 'torque')
    with pytest.raises(DegenerateForcePolytope):
        guaranteed_min_force(vertical)
    assert guaranteed_min_torque(vertical) == pytest.approx(0.0, abs=1e-12)


def test_yaw_amplification(unit, assembled):
    unit_yaw = axis_torque_capability(unit, (0.0, 0.0, 1.0))
    assembled_yaw = axis_torque_capability(assembled, (0.0, 0.0, 1.0))
    assert unit_yaw == pytest.approx(1.087, rel=5e-3)
    assert assembled_yaw == pytest.approx(3.130, rel=5e-3)
    # short of the 4x amplification target; `feasibility --check` reports it
    assert assembled_yaw / unit_yaw == pytest.approx(2.88, abs=0.01)
    assert assembled_yaw / unit_yaw < YAW_RATIO_TARGET


def test_hover_torque_capability(unit, assembled):
    unit_hover = hover_torque_capability(unit, (0.0, 0.0, 1.0))
    assembled_hover = hover_torque_capability(assembled, (0.0, 0.0, 1.0))
    assert 0.0 < unit_hover <= axis_torque_capability(unit, (0.0, 0.0, 1.0)) + 1e-9
    assert assembled_hover > unit_hover


def test_fibonacci_sphere():
    points = fibonacci_sphere(5000)
    assert np.linalg.norm(points, axis=1) == pytest.approx(np.ones(5000))
    assert np.abs(points.mean(axis=0)).max() < 1e-3


def test_oracle_agrees(unit):
    for which, geometric in (('force', guaranteed_min_force(unit)), ('torque', guaranteed_min_torque(unit))):
        sampled = oracle_min_wrench(unit, which, 1_000_000)
        assert sampled >= geometric * (1.0 - 1e-9)
        assert sampled == pytest.approx(geometric, rel=0.02)


def test_oracle_sample_floor(unit):
    with pytest.raises(ConfigError):
        oracle_min_wrench(unit, 'force', 999)


@pytest.mark.slow
def test_oracle_random_designs():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 100:
        angles = [(rng.uniform(0.1, 0.8), rng.uniform(-np.pi, np.pi)) for _ in range(4)]
        unit = reference_unit(angles)
        model = unit if checked % 2 == 0 else assembled_reference(unit, 0.6)
        try:
            f_min, tau_min = guaranteed_min_force(model), guaranteed_min_torque(model)
        except DegenerateForcePolytope:
            continue
        if np.min(force_face_distances(model)[0]) <= 0.0 or f_min < 1.0 or tau_min < 0.3:
            continue
        assert oracle_min_wrench(model, 'force', 2_000_000) == pytest.approx(f_min, rel=0.02)
        assert oracle_min_wrench(model, 'torque', 2_000_000) == pytest.approx(tau_min, rel=0.02)
        checked += 1


def _rotated(model, R):
    rotors = tuple(RotorGeometry.from_direction(R @ r.position, R @ r.direction, r.sigma, r.max_thrust)
                   for r in model.rotors)
    return AirframeModel(model.mass, R @ model.inertia @ R.T, rotors, model.gravity, model.name)


@pytest.mark.parametrize('which', ['unit', 'assembled'])
def test_margins_invariant_under_rotation(which, unit, assembled):
    model = unit if which == 'unit' else assembled
    f_min, tau_min = guaranteed_min_force(model), guaranteed_min_torque(model)
    yawed = _rotated(model, rot_z(0.9))
    assert guaranteed_min_force(yawed) == pytest.approx(f_min, rel=1e-9)
    assert guaranteed_min_torque(yawed) == pytest.approx(tau_min, rel=1e-9)
    # the torque set has no gravity offset, so any rotation keeps it
    tumbled = _rotated(model, exp_so3([0.4, -1.1, 0.7]))
    assert guaranteed_min_torque(tumbled) == pytest.approx(tau_min, rel=1e-9)


@pytest.mark.parametrize('k', [0.5, 2.0, 3.0])
def test_margins_scale_with_thrust_limit(unit, k):
    tau_min = guaranteed_min_torque(unit)
    f_min = guaranteed_min_force(unit)
    stronger = unit.scaled(thrust_gain=k)
    assert guaranteed_min_torque(stronger) == pytest.approx(k * tau_min, rel=1e-9)
    # with the weight scaled too the whole force set scales
    both = unit.scaled(mass_scale=k, thrust_gain=k)
    assert guaranteed_min_force(both) == pytest.approx(k * f_min, rel=1e-9)

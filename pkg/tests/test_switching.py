import math

import numpy as np
import pytest

from control import AssembledController, Reference, UnitController
from model import BodyState, rot_z
from switching import (
    ModelSwitch,
    TransitionState,
    begin_switch,
    rotate_integrals,
    transition_scale,
    transition_weight,
)
from workbench import ConfigError, SwitchError


def test_transition_weight():
    assert transition_weight(0, 0.9) == 0.0
    assert transition_weight(120, 0.9) == pytest.approx(0.99, abs=1e-3)
    values = [transition_weight(t, 0.9) for t in range(300)]
    assert all(b > a for a, b in zip(values, values[1:]))
    with pytest.raises(ConfigError):
        transition_weight(-1, 0.9)
    with pytest.raises(ConfigError):
        transition_weight(1, 0.0)


def test_begin_switch_keeps_integrals():
    integrals = {'position': np.array([0.1, 0.2, 4.9]), 'attitude': np.zeros(3)}
    ts, out = begin_switch([3.0, 3.0, 3.0, 3.0], integrals)
    assert ts.s_unit == pytest.approx(12.0)
    assert ts.active and ts.ticks == 0
    assert out is integrals


def test_begin_switch_errors():
    with pytest.raises(SwitchError):
        begin_switch([0.0, 0.0, 0.0, 0.0], {})
    with pytest.raises(SwitchError):
        begin_switch([1.0, np.nan, 1.0, 1.0], {})


def test_first_tick_keeps_total_thrust():
    ts = TransitionState(s_unit=12.0)
    lam = np.array([2.0, 3.0, 4.0, 5.0])
    out = transition_scale(lam, ts)
    assert np.sum(out) == pytest.approx(12.0, abs=1e-9)
    # shape of the new command is preserved
    assert out / np.sum(out) == pytest.approx(lam / np.sum(lam))
    assert ts.ticks == 1


def test_blend_converges_and_finishes():
    ts = TransitionState(s_unit=10.0, a=0.9)
    lam = np.full(4, 3.0)
    totals = []
    while ts.active:
        totals.append(np.sum(transition_scale(lam, ts)))
    assert ts.ticks == 222
    assert totals[0] == pytest.approx(10.0)
    assert all(b >= a for a, b in zip(totals, totals[1:]))
    assert totals[-1] == pytest.approx(12.0, rel=6e-3)
    assert transition_scale(lam, ts) == pytest.approx(lam)


def test_blend_error_shrinks_with_weight():
    ts = TransitionState(s_unit=10.0, a=0.9)
    lam = np.array([2.0, 3.0, 3.0, 4.0])
    s_assem = float(np.sum(lam))
    for n in range(200):
        w = transition_weight(n, 0.9)
        out = transition_scale(lam, ts)
        gap = np.linalg.norm(out - lam) / np.linalg.norm(lam)
        assert gap == pytest.approx((1.0 - w) * abs(10.0 - s_assem) / s_assem, abs=1e-12)


def test_zero_command_holds_last_output():
    ts = TransitionState(s_unit=8.0)
    first = transition_scale(np.full(4, 1.0), ts)
    held = transition_scale(np.zeros(4), ts)
    assert held == pytest.approx(first)
    assert ts.held


def test_rotate_integrals():
    integrals = {'position': np.array([1.0, 2.0, 3.0]), 'attitude': np.array([0.1, 0.2, 0.3])}
    out = rotate_integrals(integrals, rot_z(math.pi))
    assert out['position'] is integrals['position']
    assert out['attitude'] == pytest.approx([-0.1, -0.2, 0.3])


def test_model_switch_to_assembled(unit, assembled):
    units = [UnitController(unit, {}) for _ in range(2)]
    for ctrl in units:
        ctrl.warm_start_hover()
        ctrl.attitude_integral = np.array([0.1, 0.05, 0.0])
    switch = ModelSwitch({}, transition=True)
    prev = [np.full(4, 3.0), np.full(4, 3.2)]
    incoming = switch.to_assembled(units, prev, [assembled, assembled], [np.eye(3), rot_z(math.pi)])
    assert all(isinstance(c, AssembledController) for c in incoming)
    assert incoming[1].rotor_slice == slice(4, 8)
    assert incoming[0].position_state.integral[2] == pytest.approx(units[0].position_state.integral[2])
    assert incoming[1].attitude_state.integral == pytest.approx([-0.1, -0.05, 0.0])
    assert switch.active

    state = BodyState(np.array([0.0, 0.0, 1.0]), np.eye(3))
    ref = Reference((0.0, 0.0, 1.0))
    total = sum(np.sum(switch.apply(i, c.step(state, ref).thrusts)) for i, c in enumerate(incoming))
    # no jump in total thrust at the switch
    assert total == pytest.approx(np.sum(prev[0]) + np.sum(prev[1]), abs=1e-9)
    assert switch.telemetry(0)['W'] == pytest.approx(transition_weight(1, 0.9))


def test_model_switch_without_transition(unit, assembled):
    units = [UnitController(unit, {}) for _ in range(2)]
    switch = ModelSwitch({}, transition=False)
    incoming = switch.to_assembled(units, [np.full(4, 3.0)] * 2, [assembled] * 2, [np.eye(3), rot_z(math.pi)])
    lam = np.arange(4.0)
    assert switch.apply(0, lam) == pytest.approx(lam)
    assert not switch.active
    assert switch.telemetry(0)['scale'] == 1.0
    assert len(incoming) == 2


def test_model_switch_to_units(unit, assembled):
    assembled_ctrls = [AssembledController(assembled, {}, rotor_slice=slice(4 * i, 4 * i + 4)) for i in range(2)]
    for ctrl in assembled_ctrls:
        ctrl.warm_start_hover()
    switch = ModelSwitch({})
    incoming = switch.to_units(assembled_ctrls, [np.full(4, 2.7)] * 2, [unit, unit], [np.eye(3), rot_z(math.pi)])
    assert all(isinstance(c, UnitController) for c in incoming)
    assert incoming[0].position_state.integral[2] == pytest.approx(assembled_ctrls[0].position_state.integral[2])

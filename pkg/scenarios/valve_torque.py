"""Yaw torque capability: polytope figures plus a hover that carries a ramped yaw load."""
import math

import numpy as np

from control import AssembledController, Reference
from feasibility import axis_torque_capability, hover_torque_capability
from scenarios import register_scenario
from scenarios.common import Clock, assembled_model, scenario_config, unit_model
from sim import Body, ScenarioRun, WorldState, attitude_columns, telemetry_frame, telemetry_row
from workbench import log

register_scenario(__name__, name='valve_torque', title='Ventil drehen (Giermoment)')

YAW_AXIS = (0.0, 0.0, 1.0)
HOLD_TOLERANCE = 0.1


def run(spec, seed):
    config = scenario_config(spec)
    clock = Clock(spec, config, 10.0)
    load = spec.get('load') or {}
    required = float(load.get('torque', 2.4))
    ramp = float(load.get('ramp', 3.0))
    load_start = float(load.get('start', 2.0))

    unit = unit_model(spec, config)
    model = assembled_model(unit, config)
    capability = {
        'unit_yaw': axis_torque_capability(unit, YAW_AXIS),
        'assembled_yaw': axis_torque_capability(model, YAW_AXIS),
        'unit_yaw_hover': hover_torque_capability(unit, YAW_AXIS),
        'assembled_yaw_hover': hover_torque_capability(model, YAW_AXIS),
    }
    ratio = capability['assembled_yaw'] / capability['unit_yaw']
    log(f"valve_torque: yaw capability unit={capability['unit_yaw']:.3f} "
        f"assembled={capability['assembled_yaw']:.3f} N*m (x{ratio:.2f})")

    controllers = [AssembledController(model, config, rotor_slice=slice(4 * i, 4 * i + 4)) for i in range(2)]
    for ctrl in controllers:
        ctrl.warm_start_hover()
    hold = Reference((0.0, 0.0, 1.0), (0.0, 0.0, 0.0), 0.0)
    world = WorldState(gravity=model.gravity)
    body = world.add(Body('body', model, hold.position, np.eye(3)))

    rows = []
    peak = 0.0
    yaw_errors = []
    for _ in range(clock.ticks):
        t = world.time
        torque = required * min(1.0, max(0.0, (t - load_start) / ramp))
        # the valve resists the turning direction
        body.external_torque = np.array([0.0, 0.0, -torque])
        thrusts = np.concatenate([c.step(body.state, hold).thrusts for c in controllers])
        attitude = attitude_columns(body.rotation)
        yaw_errors.append(abs(attitude['yaw']))
        if abs(attitude['yaw']) <= HOLD_TOLERANCE:
            peak = max(peak, torque)
        rows.append(telemetry_row(time=t, state='hovering', x=body.position[0], y=body.position[1],
                                  z=body.position[2], ref_x=hold.position[0], ref_y=hold.position[1],
                                  ref_z=hold.position[2], thrust_total=float(np.sum(thrusts)),
                                  load_torque=torque, **attitude))
        clock.advance(world, {'body': thrusts})

    final_error = yaw_errors[-1] if yaw_errors else math.nan
    held = bool(np.isfinite(final_error) and final_error <= HOLD_TOLERANCE)
    summary = {
        'required_torque': required,
        'peak_torque': peak,
        'yaw_capability_unit': capability['unit_yaw'],
        'yaw_capability_assembled': capability['assembled_yaw'],
        'yaw_capability_unit_hover': capability['unit_yaw_hover'],
        'yaw_capability_assembled_hover': capability['assembled_yaw_hover'],
        'torque_ratio': ratio,
        'final_yaw_error': final_error,
        'success': bool(held and peak >= required and capability['assembled_yaw'] >= required),
        'cause': None if held and peak >= required else f"held {peak:.2f} of {required:.2f} N*m",
    }
    return ScenarioRun('valve_torque', telemetry_frame(rows), summary)

"""In-flight separation: hovering -> transition -> release, then both units hold position."""
import numpy as np

from control import Reference
from motion import FsmContext, FsmEventLog, FsmStateId, fsm_step
from scenarios import register_scenario
from scenarios.common import DockingRig, model_error
from sim import ScenarioRun, telemetry_frame

register_scenario(__name__, name='disassembly', title='Trennung im Flug')

REQUEST_AT = 2.0
MAX_EXCURSION = 0.3


def run(spec, seed):
    rig = DockingRig(spec, seed, transition=bool(spec.get('transition', True)), error=model_error(spec),
                     default_duration=8.0)
    ctx = FsmContext.from_config(rig.config)
    fsm_every = max(1, int(round(1.0 / (ctx.rate_hz * rig.clock.period))))

    start = np.array([0.0, 0.0, 1.0])
    rig.place_units(start, 0.0, start, np.pi)
    male = rig.world.bodies['male']
    male.position = rig.docked_male_position()
    rig.references['male'] = Reference(tuple(male.position), (0.0, 0.0, 0.0), np.pi)
    rig.dock()
    rig.switch.states.clear()
    ctx.state = FsmStateId.HOVERING
    ctx.joined = True

    events_log = FsmEventLog()
    rows = []
    pending = set()
    released_at = None
    scale_band = [1.0, 1.0]
    heights = {}
    excursion = 0.0

    for k in range(rig.clock.ticks):
        now = rig.world.time
        if now >= REQUEST_AT and ctx.state == FsmStateId.HOVERING:
            pending.add('disassemble')
        if k % fsm_every == 0:
            state, cmd, conditions = fsm_step(ctx, rig.measured_relative(), now, pending)
            pending.clear()
            events_log.record(now, state, conditions, cmd)
            if cmd.switch == 'units':
                rig.to_units()
                heights = {u: rig.references[u].position[2] for u in rig.UNITS}
            if cmd.actuate == 'release' and rig.joined:
                rig.release()
                released_at = now
                pending.add('released')

        rig.tick()
        if rig.switch.states:
            scale = rig.switch.telemetry(0)['scale']
            scale_band = [min(scale_band[0], scale), max(scale_band[1], scale)]
        rows.append(rig.telemetry(ctx.state.value))
        if released_at is not None:
            for uid in rig.UNITS:
                excursion = max(excursion, abs(rig.unit_state(uid).position[2] - heights[uid]))

    success = bool(ctx.state == FsmStateId.SEPARATED and np.isfinite(excursion) and excursion < MAX_EXCURSION)
    summary = {
        'success': success,
        'released_at': released_at,
        'max_altitude_excursion': excursion,
        'scale_min': scale_band[0],
        'scale_max': scale_band[1],
        'cause': None if success else f"final state {ctx.state.value}, excursion {excursion}",
    }
    return ScenarioRun('disassembly', telemetry_frame(rows), summary, events_log)

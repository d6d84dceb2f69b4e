"""In-flight docking driven by the state machine."""
import math

import numpy as np

from control import Reference
from motion import FsmContext, FsmEventLog, FsmStateId, fsm_step
from scenarios import register_scenario
from scenarios.common import DockingRig, model_error
from sim import ScenarioRun, telemetry_frame
from workbench import CaptureMiss, load_section, log

register_scenario(__name__, name='assembly', title='Zusammenbau im Flug')

HOVER_AFTER_SWITCH = 3.0


def run(spec, seed):
    rig = DockingRig(spec, seed, transition=bool(spec.get('transition', True)), error=model_error(spec))
    motion = load_section('motion', rig.config)
    ctx = FsmContext.from_config(rig.config)
    tol = ctx.tol
    actuation_time = float(motion['dock_actuation_time'])
    fsm_every = max(1, int(round(1.0 / (ctx.rate_hz * rig.clock.period))))

    start = np.array([0.0, 0.0, 1.0])
    offset = rig.rng.uniform(-1.0, 1.0, 3) * np.array([0.1, 0.08, 0.05])
    rig.place_units(start, 0.0, start + np.array([tol.d_st + 0.25, 0.0, 0.0]) + offset,
                    math.pi + rig.rng.uniform(-0.2, 0.2))
    female_hold = rig.references['female']

    events_log = FsmEventLog()
    rows = []
    pending = set()
    actuating_since = None
    capture_misses = 0
    assembled_at = None

    for k in range(rig.clock.ticks):
        now = rig.world.time
        if k % fsm_every == 0:
            state, cmd, conditions = fsm_step(ctx, rig.filtered_relative(), now, pending)
            pending.clear()
            events_log.record(now, state, conditions, cmd)
            if cmd.male_target is not None and not rig.joined:
                x, y, z, yaw = cmd.male_target
                target = np.asarray(female_hold.position) + np.array([x, y, z])
                rig.references['female'] = female_hold
                rig.references['male'] = Reference(tuple(target), (0.0, 0.0, 0.0), female_hold.yaw + yaw)
            if cmd.actuate == 'join' and actuating_since is None:
                actuating_since = now
            elif cmd.actuate == 'abort':
                actuating_since = None
            if state == FsmStateId.HOVERING and assembled_at is None:
                assembled_at = now

        if actuating_since is not None and not rig.joined and now - actuating_since >= actuation_time:
            try:
                rig.dock()
                pending.add('joined')
            except CaptureMiss as e:
                capture_misses += 1
                log(f"assembly: {e}", 'WARNING')
            actuating_since = None
        if ctx.state == FsmStateId.TRANSITION and rig.joined and not rig.switch.active:
            pending.add('switch_done')

        rig.tick(disturbance=not rig.joined)
        rows.append(rig.telemetry(ctx.state.value))
        if assembled_at is not None and rig.world.time - assembled_at >= HOVER_AFTER_SWITCH:
            break

    summary = {
        'success': assembled_at is not None,
        'assembly_time': assembled_at,
        'capture_misses': capture_misses,
        'standby_reentries': sum(1 for a, b in zip(events_log.records, events_log.records[1:])
                                 if a['state'] == 'approach' and b['state'] == 'standby'),
        'cause': None if assembled_at is not None else f"not docked within {rig.clock.duration:.0f}s",
    }
    return ScenarioRun('assembly', telemetry_frame(rows), summary, events_log)

"""Same docking switch flown twice, with and without the thrust transition."""
import numpy as np

from control import Reference
from scenarios import register_scenario
from scenarios.common import DockingRig, model_error
from sim import ModelErrorInjection, ScenarioRun, telemetry_frame
from workbench import CaptureMiss, log

register_scenario(__name__, name='transition_ablation', title='Übergang mit/ohne Schubüberblendung')

SETTLE = 3.0
TARGET_RATIO = 0.25
DEFAULT_ERROR = ModelErrorInjection(mass_scale=1.08, thrust_gain=1.10, unit=1)


def _variant(spec, seed, transition, error):
    rig = DockingRig(spec, seed, transition=transition, error=error, default_duration=12.0)
    start = np.array([0.0, 0.0, 1.0])
    rig.place_units(start, 0.0, start, np.pi)
    male = rig.world.bodies['male']
    male.position = rig.docked_male_position()
    rig.references['male'] = Reference(tuple(male.position), (0.0, 0.0, 0.0), np.pi)

    label = 'transition' if transition else 'no_transition'
    rows = []
    switch_height = None
    excursion = 0.0
    for _ in range(rig.clock.ticks):
        if switch_height is None and rig.world.time >= SETTLE:
            rig.dock()
            switch_height = float(rig.world.bodies[rig.world.joints[rig.joint_id].body].position[2])
        rig.tick()
        rows.append(rig.telemetry('assembled' if rig.joined else 'units', variant=label))
        if switch_height is not None:
            excursion = max(excursion, abs(rows[-1]['z'] - switch_height))
    return rows, excursion


def run(spec, seed):
    error = model_error(spec, DEFAULT_ERROR)
    try:
        rows_with, with_transition = _variant(spec, seed, True, error)
        rows_without, without_transition = _variant(spec, seed, False, error)
    except CaptureMiss as e:
        log(f"transition_ablation: {e}", 'ERROR')
        return ScenarioRun('transition_ablation', telemetry_frame([]),
                           {'success': False, 'cause': f"CaptureMiss: {e}"})

    ratio = with_transition / without_transition if without_transition > 0.0 else float('nan')
    summary = {
        'excursion_with_transition': with_transition,
        'excursion_without_transition': without_transition,
        'max_altitude_excursion': with_transition,
        'ratio': ratio,
        'target_ratio': TARGET_RATIO,
        'meets_target': bool(np.isfinite(ratio) and ratio < TARGET_RATIO),
        'success': bool(np.isfinite(ratio) and ratio < TARGET_RATIO),
        'cause': None if np.isfinite(ratio) and ratio < TARGET_RATIO else f"excursion ratio {ratio:.3f}, target {TARGET_RATIO}",
        'model_error': {'mass_scale': error.mass_scale, 'thrust_gain': list(error.thrust_gain),
                        'inertia_scale': error.inertia_scale, 'unit': error.unit},
    }
    return ScenarioRun('transition_ablation', telemetry_frame(rows_with + rows_without), summary)

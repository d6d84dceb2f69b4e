"""Controller hand-over between the unit and the assembled airframe.

Only integral terms survive the switch. Right after it the new controller's
thrust is rescaled so the total thrust starts at what the old controller was
commanding and blends into the new one with W(t) = 1 - 1/(a t + 1), t counted
in control ticks.
"""
from dataclasses import dataclass

import numpy as np

from control import AssembledController, UnitController
from workbench import ConfigError, SwitchError, load_section, log


def transition_weight(t, a):
    if t < 0 or not a > 0.0:
        raise ConfigError(f"transition weight needs t >= 0 and a > 0 (t={t}, a={a})")
    return 1.0 - 1.0 / (a * t + 1.0)


@dataclass
class TransitionState:
    s_unit: float
    a: float = 0.9
    ticks: int = 0
    period: float = 0.025
    active: bool = True
    done_weight: float = 0.995
    s_assem: float = 0.0
    scale: float = 1.0
    held: bool = False
    last_output: np.ndarray = None

    @property
    def weight(self):
        return transition_weight(self.ticks, self.a)

    @property
    def elapsed(self):
        return self.ticks * self.period

    def telemetry(self):
        return {'W': self.weight if self.active else 1.0, 'S_unit': self.s_unit,
                'S_assem': self.s_assem, 'scale': self.scale}


def begin_switch(prev_thrusts, integrals, a=0.9, period=0.025, done_weight=0.995):
    """Capture the outgoing total thrust; integrals pass through untouched."""
    thrusts = np.asarray(prev_thrusts, dtype=float)
    if not np.all(np.isfinite(thrusts)):
        raise SwitchError("thrusts at switch are not finite")
    s_unit = float(np.sum(np.abs(thrusts)))
    if not s_unit > 0.0:
        raise SwitchError("total thrust at switch is zero")
    return TransitionState(s_unit, a, 0, period, True, done_weight), integrals


def transition_scale(lam_des, ts):
    """Scale one tick's command; advances the tick counter."""
    lam = np.asarray(lam_des, dtype=float)
    if not ts.active:
        ts.scale = 1.0
        ts.s_assem = float(np.sum(np.abs(lam)))
        ts.last_output = lam.copy()
        return lam
    s_assem = float(np.sum(np.abs(lam)))
    ts.s_assem = s_assem
    if s_assem <= 0.0:
        ts.held = True
        out = ts.last_output if ts.last_output is not None else lam
    else:
        w = ts.weight
        s_trans = w * s_assem + (1.0 - w) * ts.s_unit
        ts.scale = s_trans / s_assem
        out = lam * ts.scale
        ts.last_output = out.copy()
    ts.ticks += 1
    if ts.weight > ts.done_weight:
        ts.active = False
        log(f"transition finished after {ts.ticks} ticks ({ts.elapsed:.2f} s)", 'DEBUG')
    return out


def rotate_integrals(integrals, axes):
    """Attitude integrals expressed in new axes; position integrals are world-frame already."""
    out = dict(integrals)
    out['attitude'] = np.asarray(axes, dtype=float) @ np.asarray(integrals['attitude'], dtype=float)
    return out


class ModelSwitch:
    """Hands every unit from one controller type to the other, one blend per unit."""

    def __init__(self, config=None, transition=True):
        cfg = load_section('switching', config)
        self.config = config
        self.a = float(cfg['a'])
        self.done_weight = float(cfg['done_weight'])
        self.period = 1.0 / float(load_section('control', config)['rate_hz'])
        self.transition = transition
        self.states = {}

    def _begin(self, unit_id, prev_thrusts, integrals):
        ts, integrals = begin_switch(prev_thrusts, integrals, self.a, self.period, self.done_weight)
        self.states[unit_id] = ts if self.transition else None
        return ts, integrals

    def to_assembled(self, outgoing, prev_thrusts, models, axes):
        """`outgoing`, `prev_thrusts`, `models` and `axes` are per-unit sequences.

        `models[i]` is unit i's own copy of the combined airframe model and
        `axes[i]` rotates unit i's frame into the combined frame.
        """
        incoming = []
        for i, (ctrl, thrusts, model, R) in enumerate(zip(outgoing, prev_thrusts, models, axes)):
            ts, integrals = self._begin(i, thrusts, ctrl.extract_integrals())
            new = AssembledController(model, self.config, rotor_slice=slice(4 * i, 4 * i + 4))
            new.inject_integrals(rotate_integrals(integrals, R))
            incoming.append(new)
            log(f"switch unit {i} -> assembled: S_unit={ts.s_unit:.3f} N, transition={self.transition}")
        return incoming

    def to_units(self, outgoing, prev_thrusts, models, axes):
        """Disassembly; `axes[i]` rotates the combined frame into unit i's frame."""
        incoming = []
        for i, (ctrl, thrusts, model, R) in enumerate(zip(outgoing, prev_thrusts, models, axes)):
            ts, integrals = self._begin(i, thrusts, ctrl.extract_integrals())
            new = UnitController(model, self.config)
            new.inject_integrals(rotate_integrals(integrals, R))
            incoming.append(new)
            log(f"switch unit {i} -> unit control: S_unit={ts.s_unit:.3f} N, transition={self.transition}")
        return incoming

    def apply(self, unit_id, lam_des):
        ts = self.states.get(unit_id)
        if ts is None:
            return np.asarray(lam_des, dtype=float)
        return transition_scale(lam_des, ts)

    @property
    def active(self):
        return any(ts is not None and ts.active for ts in self.states.values())

    def telemetry(self, unit_id):
        ts = self.states.get(unit_id)
        if ts is None:
            return {'W': 1.0, 'S_unit': 0.0, 'S_assem': 0.0, 'scale': 1.0}
        return ts.telemetry()

"""Docking / undocking state machine and a reduced-order docking harness.

Relative poses are the male unit's {C} frame seen from the female unit's {C}
frame ({F}). The male parks at (d_st, 0, 0) facing the female (yaw -pi),
closes in along -x and docks at x_dock.
"""
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from model import euler_zyx, wrap_angle
from workbench import ConfigError, load_section, log

FACING_YAW = -math.pi


class FsmStateId(str, Enum):
    STANDBY = 'standby'
    APPROACH = 'approach'
    ASSEMBLY = 'assembly'
    TRANSITION = 'transition'
    HOVERING = 'hovering'
    DISASSEMBLY = 'disassembly'
    SEPARATED = 'separated'


@dataclass(frozen=True)
class Tolerances:
    e1_y: float = 0.02
    e1_z: float = 0.02
    e1_psi: float = 0.13
    e2_x: float = 0.005
    e2_y: float = 0.01
    e2_z: float = 0.01
    e2_psi: float = 0.01
    d_st: float = 0.9
    x_dock: float = 0.6

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0.0:
                raise ConfigError(f"tolerance {name} must be positive, got {value}")
        for tight, loose in (('e2_y', 'e1_y'), ('e2_z', 'e1_z'), ('e2_psi', 'e1_psi')):
            if getattr(self, tight) > getattr(self, loose):
                raise ConfigError(f"{tight} must not exceed {loose}")
        if self.x_dock > self.d_st:
            raise ConfigError(f"x_dock ({self.x_dock}) beyond the standby distance ({self.d_st})")

    @classmethod
    def from_config(cls, config=None):
        cfg = load_section('motion', config)
        x_dock = cfg.get('x_dock') or load_section('airframe', config)['separation']
        keys = ('e1_y', 'e1_z', 'e1_psi', 'e2_x', 'e2_y', 'e2_z', 'e2_psi', 'd_st')
        return cls(**{k: float(cfg[k]) for k in keys}, x_dock=float(x_dock))


@dataclass(frozen=True, eq=False)
class RelativePose:
    position: np.ndarray
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, 'position', np.asarray(self.position, dtype=float).reshape(3).copy())
        object.__setattr__(self, 'yaw', wrap_angle(float(self.yaw)))


def relative_pose(female, male, female_frame=None, male_frame=None):
    """Male {C} pose in female {C}; `*_frame` is the unit's {CoG}->{C} rotation."""
    Rf = female.rotation @ (np.eye(3) if female_frame is None else np.asarray(female_frame).T)
    Rm = male.rotation @ (np.eye(3) if male_frame is None else np.asarray(male_frame).T)
    position = Rf.T @ (male.position - female.position)
    yaw = euler_zyx(Rf.T @ Rm)[2]
    return RelativePose(position, yaw)


def standby_targets(tol):
    """Male target (position, yaw) in {F}; the female holds where it started."""
    return np.array([tol.d_st, 0.0, 0.0]), FACING_YAW


def condition_check(rel, tol, which):
    y, z = abs(rel.position[1]), abs(rel.position[2])
    yaw_error = abs(wrap_angle(rel.yaw - FACING_YAW))
    if which in (1, '#1'):
        return bool(y <= tol.e1_y and z <= tol.e1_z and yaw_error <= tol.e1_psi)
    if which in (2, '#2'):
        return bool(abs(rel.position[0] - tol.x_dock) <= tol.e2_x and y <= tol.e2_y
                    and z <= tol.e2_z and yaw_error <= tol.e2_psi)
    raise ConfigError(f"unknown condition '{which}'")


@dataclass
class FsmCommands:
    male_target: tuple = None
    female_hold: bool = True
    actuate: str = None
    switch: str = None
    diagnostic: str = None

    @property
    def summary(self):
        parts = [p for p in (self.actuate, self.switch and f"switch:{self.switch}", self.diagnostic) if p]
        return ','.join(parts) or ('target' if self.male_target is not None else 'none')


@dataclass
class FsmContext:
    tol: Tolerances = field(default_factory=Tolerances)
    state: FsmStateId = FsmStateId.STANDBY
    approach_speed: float = 0.1
    rate_hz: float = 10.0
    dock_timeout: float = 5.0
    entered_at: float = 0.0
    approach_x: float = None
    disassembling: bool = False
    joined: bool = False

    @classmethod
    def from_config(cls, config=None):
        cfg = load_section('motion', config)
        return cls(Tolerances.from_config(config), approach_speed=float(cfg['approach_speed']),
                   rate_hz=float(cfg['fsm_rate_hz']), dock_timeout=float(cfg['dock_timeout']))


def _enter(ctx, state, now):
    if state != ctx.state:
        log(f"fsm {ctx.state.value} -> {state.value} at t={now:.2f}s", 'DEBUG')
    ctx.state = state
    ctx.entered_at = now


def fsm_step(ctx, rel, now, events=()):
    """One FSM tick. `events` may contain 'joined', 'switch_done', 'disassemble', 'released'."""
    events = set(events)
    tol = ctx.tol
    c1 = condition_check(rel, tol, 1)
    c2 = condition_check(rel, tol, 2)
    cmd = FsmCommands()
    state = ctx.state

    if state == FsmStateId.STANDBY:
        if c1:
            _enter(ctx, FsmStateId.APPROACH, now)
            ctx.approach_x = max(tol.x_dock, min(tol.d_st, float(rel.position[0])))
            cmd.male_target = (ctx.approach_x, 0.0, 0.0, FACING_YAW)
        else:
            position, yaw = standby_targets(tol)
            cmd.male_target = (*position, yaw)

    elif state == FsmStateId.APPROACH:
        if not c1:
            _enter(ctx, FsmStateId.STANDBY, now)
            position, yaw = standby_targets(tol)
            cmd.male_target = (*position, yaw)
        elif c2:
            _enter(ctx, FsmStateId.ASSEMBLY, now)
            cmd.male_target = (tol.x_dock, 0.0, 0.0, FACING_YAW)
            cmd.actuate = 'join'
        else:
            ctx.approach_x = max(tol.x_dock, ctx.approach_x - ctx.approach_speed / ctx.rate_hz)
            cmd.male_target = (ctx.approach_x, 0.0, 0.0, FACING_YAW)

    elif state == FsmStateId.ASSEMBLY:
        if 'joined' in events:
            ctx.joined = True
            _enter(ctx, FsmStateId.TRANSITION, now)
            cmd.switch = 'assembled'
        elif not c2:
            _enter(ctx, FsmStateId.APPROACH, now)
            ctx.approach_x = max(tol.x_dock, min(tol.d_st, float(rel.position[0])))
            cmd.male_target = (ctx.approach_x, 0.0, 0.0, FACING_YAW)
            cmd.actuate = 'abort'
        elif now - ctx.entered_at > ctx.dock_timeout:
            _enter(ctx, FsmStateId.APPROACH, now)
            ctx.approach_x = tol.d_st
            cmd.male_target = (ctx.approach_x, 0.0, 0.0, FACING_YAW)
            cmd.actuate = 'abort'
            cmd.diagnostic = 'dock_timeout'
            log(f"fsm: dock actuation timed out after {ctx.dock_timeout:.1f}s", 'WARNING')
        else:
            cmd.male_target = (tol.x_dock, 0.0, 0.0, FACING_YAW)
            cmd.actuate = 'join'

    elif state == FsmStateId.TRANSITION:
        if ctx.disassembling:
            _enter(ctx, FsmStateId.DISASSEMBLY, now)
            cmd.actuate = 'release'
        elif 'switch_done' in events:
            _enter(ctx, FsmStateId.HOVERING, now)

    elif state == FsmStateId.HOVERING:
        if 'disassemble' in events:
            ctx.disassembling = True
            _enter(ctx, FsmStateId.TRANSITION, now)
            cmd.switch = 'units'

    elif state == FsmStateId.DISASSEMBLY:
        if 'released' in events:
            ctx.joined = False
            _enter(ctx, FsmStateId.SEPARATED, now)
        else:
            cmd.actuate = 'release'

    return ctx.state, cmd, (c1, c2)


class FsmEventLog:
    """FSM trace as JSON lines: time, state, #1, #2, command."""

    def __init__(self):
        self.records = []

    def record(self, now, state, conditions, command):
        self.records.append({'time': round(float(now), 6), 'state': state.value,
                             'c1': bool(conditions[0]), 'c2': bool(conditions[1]),
                             'command': command.summary})

    def dumps(self):
        return ''.join(json.dumps(r) + '\n' for r in self.records)

    def write(self, path):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(self.dumps())
        return path

    def states(self):
        return [r['state'] for r in self.records]


def near_contact_disturbance(gap, rng, peak=0.3, reach=0.3):
    """Zero-mean rotor-wash force, growing linearly to `peak` as the gap closes below `reach`."""
    scale = peak * min(1.0, max(0.0, (reach - gap) / reach))
    if scale == 0.0:
        return np.zeros(3)
    return scale * rng.uniform(-1.0, 1.0, 3)


class PoseFilter:
    """First-order low-pass on the relative pose; yaw is averaged on the circle."""

    def __init__(self, alpha):
        if not 0.0 < alpha <= 1.0:
            raise ConfigError(f"filter alpha must be in (0, 1], got {alpha}")
        self.alpha = alpha
        self.position = None
        self.heading = None

    def update(self, rel):
        h = np.array([math.cos(rel.yaw), math.sin(rel.yaw)])
        if self.position is None:
            self.position, self.heading = rel.position.copy(), h
        else:
            self.position = self.position + self.alpha * (rel.position - self.position)
            self.heading = self.heading + self.alpha * (h - self.heading)
        return RelativePose(self.position, math.atan2(self.heading[1], self.heading[0]))


@dataclass
class EpisodeResult:
    assembled: bool
    disassembled: bool
    assembly_time: float
    standby_reentries: int
    join_violations: int
    log: FsmEventLog = field(repr=False, default=None)


class DockingEpisode:
    """Relative-motion docking run: second-order tracking of the FSM targets.

    The male position in {F} follows its target like a tuned position loop, the
    magnet pulls it onto the docked pose while actuating and the rotor wash of
    both units shakes it near contact. Observations are noisy and filtered.
    """

    def __init__(self, config=None, position_sigma=0.005, yaw_sigma=0.01, seed=0,
                 tracking_hz=0.6, magnet_hz=2.0, mass=1.1, horizon=60.0):
        motion = load_section('motion', config)
        sim = load_section('sim', config)
        self.config = config
        self.position_sigma = position_sigma
        self.yaw_sigma = yaw_sigma
        self.rng = np.random.default_rng(seed)
        self.omega = 2.0 * math.pi * tracking_hz
        self.omega_magnet = 2.0 * math.pi * magnet_hz
        self.mass = mass
        self.horizon = horizon
        self.control_rate = float(load_section('control', config)['rate_hz'])
        self.actuation_time = float(motion['dock_actuation_time'])
        self.filter_alpha = float(motion.get('filter_alpha', 0.1))
        self.capture_radius = float(sim['capture_radius'])
        self.disturbance_peak = float(sim['disturbance_peak'])
        self.disturbance_range = float(sim['disturbance_range'])
        self.transition_ticks = _transition_ticks(config)

    def _initial(self, tol):
        offset = self.rng.uniform(-1.0, 1.0, 3) * np.array([0.15, 0.1, 0.1])
        position = np.array([tol.d_st + 0.2, 0.0, 0.0]) + offset
        return position, FACING_YAW + self.rng.uniform(-0.3, 0.3)

    def run(self):
        ctx = FsmContext.from_config(self.config)
        tol = ctx.tol
        dt = 1.0 / self.control_rate
        fsm_every = max(1, int(round(self.control_rate / ctx.rate_hz)))
        position, yaw = self._initial(tol)
        velocity = np.zeros(3)
        yaw_rate = 0.0
        target = (*standby_targets(tol)[0], FACING_YAW)
        flt = PoseFilter(self.filter_alpha)
        events_log = FsmEventLog()
        actuating_since = None
        transition_left = None
        result = EpisodeResult(False, False, math.nan, 0, 0, events_log)
        pending = set()

        steps = int(round(self.horizon / dt))
        for k in range(steps):
            now = k * dt
            observed = RelativePose(position + self.rng.normal(0.0, self.position_sigma, 3),
                                    yaw + self.rng.normal(0.0, self.yaw_sigma))
            filtered = flt.update(observed)

            if k % fsm_every == 0:
                previous = ctx.state
                state, cmd, conditions = fsm_step(ctx, filtered, now, pending)
                pending.clear()
                events_log.record(now, state, conditions, cmd)
                if previous == FsmStateId.APPROACH and state == FsmStateId.STANDBY:
                    result.standby_reentries += 1
                if cmd.actuate == 'join':
                    if not conditions[1]:
                        result.join_violations += 1
                    actuating_since = now if actuating_since is None else actuating_since
                elif cmd.actuate in ('abort', 'release'):
                    actuating_since = None
                if cmd.male_target is not None:
                    target = cmd.male_target
                if cmd.switch == 'assembled':
                    transition_left = self.transition_ticks
                if state == FsmStateId.HOVERING and not result.assembled:
                    result.assembled = True
                    result.assembly_time = now
                    pending.add('disassemble')
                if cmd.switch == 'units':
                    transition_left = None
                if cmd.actuate == 'release':
                    pending.add('released')
                if state == FsmStateId.SEPARATED:
                    result.disassembled = True
                    break

            if ctx.joined:
                position = np.array([tol.x_dock, 0.0, 0.0])
                velocity = np.zeros(3)
                yaw, yaw_rate = FACING_YAW, 0.0
                if transition_left is not None:
                    transition_left -= 1
                    if transition_left <= 0:
                        pending.add('switch_done')
                        transition_left = None
                continue

            if actuating_since is not None and now - actuating_since >= self.actuation_time:
                miss = np.abs(position - np.array([tol.x_dock, 0.0, 0.0]))
                if np.max(miss) <= self.capture_radius:
                    pending.add('joined')
                actuating_since = None

            goal = np.array(target[:3], dtype=float)
            omega = self.omega_magnet if actuating_since is not None else self.omega
            gap = position[0] - tol.x_dock
            force = near_contact_disturbance(gap, self.rng, self.disturbance_peak, self.disturbance_range)
            accel = omega ** 2 * (goal - position) - 2.0 * omega * velocity + force / self.mass
            velocity = velocity + accel * dt
            position = position + velocity * dt
            yaw_accel = omega ** 2 * wrap_angle(target[3] - yaw) - 2.0 * omega * yaw_rate
            yaw_rate += yaw_accel * dt
            yaw = wrap_angle(yaw + yaw_rate * dt)

        return result


def _transition_ticks(config=None):
    cfg = load_section('switching', config)
    a, done = float(cfg['a']), float(cfg['done_weight'])
    # first tick with W > done
    return int(math.floor((1.0 / (1.0 - done) - 1.0) / a)) + 1


def _scenario_outcome(job):
    """(success, join commands issued while #2 was false) of one scenario run."""
    from sim import run_scenario

    scenario, seed, noise, config = job
    run = run_scenario({'scenario': scenario, 'noise': noise, 'config': config}, seed)
    records = run.fsm_log.records if run.fsm_log is not None else []
    violations = sum(1 for r in records if 'join' in r['command'].split(',') and not r['c2'])
    return bool(run.summary.get('success')), violations


def docking_reliability(runs, config=None, position_sigma=0.005, yaw_sigma=0.01, seed=0,
                        harness='episode', workers=1):
    """Monte-Carlo success rates over `runs` seeded runs.

    `harness='episode'` uses the reduced-order DockingEpisode; `harness='sim'`
    flies the full-physics 'assembly' and 'disassembly' scenarios on seeds
    seed .. seed + runs - 1. The disassembly rate is NaN when nothing assembled.
    """
    if runs < 1:
        raise ConfigError(f"runs must be at least 1, got {runs}")
    if harness == 'episode':
        seeds = np.random.SeedSequence(seed).generate_state(runs)
        results = [DockingEpisode(config, position_sigma, yaw_sigma, int(s)).run() for s in seeds]
        assembled = sum(r.assembled for r in results)
        disassembled = sum(r.disassembled for r in results)
        join_violations = sum(r.join_violations for r in results)
        disassembly_rate = disassembled / assembled if assembled else math.nan
    elif harness == 'sim':
        noise = {'position_sigma': position_sigma, 'attitude_sigma': yaw_sigma}
        jobs = [(name, seed + k, noise, config or {}) for name in ('assembly', 'disassembly') for k in range(runs)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_scenario_outcome, jobs))
        else:
            results = [_scenario_outcome(job) for job in jobs]
        assembled = sum(ok for ok, _ in results[:runs])
        disassembled = sum(ok for ok, _ in results[runs:])
        join_violations = sum(v for _, v in results)
        # disassembly runs start docked
        disassembly_rate = disassembled / runs if assembled else math.nan
    else:
        raise ConfigError(f"unknown reliability harness '{harness}'")
    log(f"docking reliability ({harness}): {assembled}/{runs} assembled, {disassembled} disassembled")
    return {'runs': runs, 'harness': harness, 'assembly_rate': assembled / runs,
            'disassembly_rate': disassembly_rate, 'join_violations': join_violations,
            'results': results}

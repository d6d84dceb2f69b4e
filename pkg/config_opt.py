"""Rotor tilt optimisation for the assembled airframe (nlopt GN_ISRES).

The search space is the eight tilt angles of one unit. Both units of the
assembly carry the same design; the second one is placed with the default
face-to-face mounting.
"""
import math
from dataclasses import dataclass, field

import nlopt
import numpy as np

from allocation import static_thrust_frame
from feasibility import force_face_distances, guaranteed_min_force, guaranteed_min_torque
from model import (
    UNIT_ROTOR_POSITIONS,
    combined_model,
    default_mounting,
    reference_description,
    rot_y,
)
from workbench import (
    SCHEMA_VERSION,
    ConfigError,
    DegenerateForcePolytope,
    DegenerateTorquePolytope,
    GeometryError,
    OptimizerError,
    SingularFrame,
    check_schema,
    load_section,
    log,
    require_schema_version,
)

N_TILTS = 4
# stand-ins for residuals that cannot be computed (singular frame)
UNDEFINED_TORQUE_RESIDUAL = 1e3
LOG_EVERY = 1000

PROBLEM_SCHEMA = {
    'schema_version': None, 'w1': None, 'w2': None, 'mass': None, 'positions': None,
    'max_thrust': None, 'sigma': None, 'desired_accel': None, 'gravity': None,
    'separation': None, 'body_size': None, 'seed': None, 'population': None,
    'max_evals': None, 'alpha_bounds': None, 'beta_bounds': None,
    'hover_tolerance': None, 'frame_tolerance': None,
}


@dataclass(frozen=True)
class DesignVector:
    alphas: tuple
    betas: tuple

    def __post_init__(self):
        object.__setattr__(self, 'alphas', tuple(float(a) for a in self.alphas))
        object.__setattr__(self, 'betas', tuple(float(b) for b in self.betas))
        if len(self.alphas) != N_TILTS or len(self.betas) != N_TILTS:
            raise ConfigError(f"design needs {N_TILTS} alpha and {N_TILTS} beta values")

    def as_array(self):
        return np.array(self.alphas + self.betas)

    @classmethod
    def from_array(cls, values):
        values = np.asarray(values, dtype=float).ravel()
        return cls(values[:N_TILTS], values[N_TILTS:])

    @property
    def angles(self):
        return tuple(zip(self.alphas, self.betas))

    def within(self, alpha_bounds, beta_bounds, tol=1e-12):
        return (all(alpha_bounds[0] - tol <= a <= alpha_bounds[1] + tol for a in self.alphas)
                and all(beta_bounds[0] - tol <= b <= beta_bounds[1] + tol for b in self.betas))


@dataclass(frozen=True)
class OptProblem:
    w1: float = 1.0
    w2: float = 1.0
    mass: float = 1.1
    positions: tuple = UNIT_ROTOR_POSITIONS
    max_thrust: float = 7.0
    sigma: float = 0.011
    desired_accel: float = 1.0
    gravity: float = 9.8
    separation: float = 0.6
    body_size: tuple = (0.24, 0.24, 0.08)
    seed: int = 0
    population: int = 60
    max_evals: int = 20000
    alpha_bounds: tuple = (0.0, 0.9)
    beta_bounds: tuple = (-math.pi, math.pi)
    hover_tolerance: float = 1e-3
    frame_tolerance: float = 1e-2

    def __post_init__(self):
        if not (self.w1 > 0.0 and self.w2 > 0.0):
            raise ConfigError(f"weights must be positive (w1={self.w1}, w2={self.w2})")
        if int(self.max_evals) < 1:
            raise ConfigError(f"max_evals must be at least 1, got {self.max_evals}")
        if int(self.population) < 1:
            raise ConfigError(f"population must be at least 1, got {self.population}")
        if not (self.mass > 0.0 and self.max_thrust > 0.0):
            raise ConfigError(f"mass and max_thrust must be positive (mass={self.mass}, max_thrust={self.max_thrust})")
        if not self.gravity > 0.0:
            raise ConfigError("gravity must be positive")
        for name in ('alpha_bounds', 'beta_bounds'):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigError(f"{name} must be increasing, got [{lo}, {hi}]")
        if len(self.positions) != N_TILTS:
            raise ConfigError(f"positions needs {N_TILTS} entries")

    @property
    def airframe(self):
        return {'mass': self.mass, 'gravity': self.gravity, 'max_thrust': self.max_thrust,
                'sigma': self.sigma, 'body_size': list(self.body_size)}

    @classmethod
    def from_dict(cls, data, where='problem'):
        check_schema(data, PROBLEM_SCHEMA)
        require_schema_version(data, where)
        values = {}
        for key, raw in data.items():
            if key == 'schema_version':
                continue
            try:
                if key == 'positions':
                    values[key] = tuple(tuple(float(v) for v in p) for p in raw)
                elif key in ('alpha_bounds', 'beta_bounds', 'body_size'):
                    values[key] = tuple(float(v) for v in raw)
                elif key in ('seed', 'population', 'max_evals'):
                    values[key] = int(raw)
                else:
                    values[key] = float(raw)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"{where}: invalid value for '{key}': {raw!r}") from e
        return cls(**values)

    @classmethod
    def from_config(cls, config=None, **overrides):
        """Problem from the `airframe` and `optimizer` config sections."""
        opt = load_section('optimizer', config)
        air = load_section('airframe', config)
        values = dict(
            w1=float(opt['w1']), w2=float(opt['w2']), mass=float(air['mass']),
            max_thrust=float(air['max_thrust']), sigma=float(air['sigma']),
            desired_accel=float(opt['desired_accel']), gravity=float(air['gravity']),
            separation=float(air['separation']), body_size=tuple(air['body_size']),
            population=int(opt['population']), max_evals=int(opt['max_evals']),
            alpha_bounds=tuple(opt['alpha_bounds']), beta_bounds=tuple(opt['beta_bounds']),
            hover_tolerance=float(opt['hover_tolerance']),
            frame_tolerance=float(opt['frame_tolerance']),
        )
        values.update(overrides)
        return cls(**values)

    def to_dict(self):
        return {
            'schema_version': SCHEMA_VERSION,
            'w1': self.w1, 'w2': self.w2, 'mass': self.mass,
            'positions': [list(p) for p in self.positions],
            'max_thrust': self.max_thrust, 'sigma': self.sigma,
            'desired_accel': self.desired_accel, 'gravity': self.gravity,
            'separation': self.separation, 'body_size': list(self.body_size),
            'seed': self.seed, 'population': self.population, 'max_evals': self.max_evals,
            'alpha_bounds': list(self.alpha_bounds), 'beta_bounds': list(self.beta_bounds),
            'hover_tolerance': self.hover_tolerance, 'frame_tolerance': self.frame_tolerance,
        }


@dataclass(frozen=True)
class Evaluation:
    objective: float
    residuals: dict
    unit: dict
    assembled: dict
    feasible: bool
    penalty: float


@dataclass(frozen=True)
class OptResult:
    design: DesignVector
    objective: float
    unit: dict
    assembled: dict
    residuals: dict
    feasible: bool
    evaluations: int
    seed: int
    history: tuple = field(default=(), compare=False, repr=False)

    def to_dict(self):
        return {
            'schema_version': SCHEMA_VERSION,
            'design': {'alpha': list(self.design.alphas), 'beta': list(self.design.betas)},
            'objective': self.objective,
            'unit': dict(self.unit),
            'assembled': dict(self.assembled),
            'residuals': dict(self.residuals),
            'feasible': self.feasible,
            'evaluations': self.evaluations,
            'seed': self.seed,
        }

    @classmethod
    def from_dict(cls, data, where='result'):
        require_schema_version(data, where)
        try:
            design = DesignVector(data['design']['alpha'], data['design']['beta'])
            return cls(design, float(data['objective']), dict(data['unit']), dict(data['assembled']),
                       dict(data['residuals']), bool(data['feasible']), int(data['evaluations']),
                       int(data['seed']))
        except KeyError as e:
            raise ConfigError(f"{where}: missing key {e}") from e


def gamma_for_acceleration(accel, gravity):
    if not gravity > 0.0:
        raise ConfigError(f"gravity must be positive, got {gravity}")
    return -math.atan(accel / gravity)


def rotation_angle(Ra, Rb):
    """Geodesic distance between two rotations."""
    c = (np.trace(np.asarray(Ra).T @ np.asarray(Rb)) - 1.0) / 2.0
    return math.acos(max(-1.0, min(1.0, c)))


def design_models(design, prob):
    unit = reference_description(design.angles, prob.airframe, positions=prob.positions).to_model()
    assembled = combined_model(unit, unit, default_mounting(prob.separation))
    return unit, assembled


def _polytope_metrics(model):
    """(signed force margin, f_min, tau_min); degenerate polytopes give zeros."""
    try:
        distances, _ = force_face_distances(model)
        if len(distances) == 0:
            raise DegenerateForcePolytope("no force faces")
        margin = float(np.min(distances))
        f_min = guaranteed_min_force(model)
    except DegenerateForcePolytope:
        margin, f_min = 0.0, 0.0
    try:
        tau_min = guaranteed_min_torque(model)
    except DegenerateTorquePolytope:
        tau_min = 0.0
    return margin, f_min, tau_min


def evaluate_design(design, prob):
    if not design.within(prob.alpha_bounds, prob.beta_bounds):
        raise ConfigError("design outside the search bounds")
    unit, assembled = design_models(design, prob)
    margin, f_assem, tau_assem = _polytope_metrics(assembled)
    _, f_unit, tau_unit = _polytope_metrics(unit)

    q_tran = unit.directions.T
    q_rot = np.cross(unit.positions, unit.directions).T
    collective = q_tran @ np.ones(N_TILTS)
    weight = unit.mass * unit.gravity
    norm = float(np.linalg.norm(collective))
    if norm > 1e-12:
        lam_s = weight / norm
        r3 = abs(norm * lam_s - weight)
        r4 = float(np.linalg.norm(q_rot @ np.ones(N_TILTS))) * lam_s
    else:
        r3, r4 = weight, UNDEFINED_TORQUE_RESIDUAL
    target = rot_y(gamma_for_acceleration(prob.desired_accel, prob.gravity))
    try:
        frame = static_thrust_frame(unit, hover_tolerance=math.inf)
        r5 = rotation_angle(frame.rotation, target)
    except (SingularFrame, GeometryError):
        r5 = math.pi

    r1 = max(0.0, -margin) if f_assem > 0.0 else max(1.0, -margin)
    r2 = 0.0 if tau_assem > 0.0 else 1.0
    residuals = {'r1': r1, 'r2': r2, 'r3': r3, 'r4': r4, 'r5': r5}
    feasible = (margin > 0.0 and tau_assem > 0.0
                and r4 < prob.hover_tolerance and r5 < prob.frame_tolerance)
    if f_assem == 0.0 or tau_assem == 0.0:
        objective = 0.0
    else:
        objective = prob.w1 * f_assem + prob.w2 * tau_assem
    penalty = (r1 + r2 + max(0.0, r4 - prob.hover_tolerance) / prob.hover_tolerance
               + max(0.0, r5 - prob.frame_tolerance) / prob.frame_tolerance)
    return Evaluation(objective, residuals, {'f_min': f_unit, 'tau_min': tau_unit},
                      {'f_min': f_assem, 'tau_min': tau_assem}, feasible, penalty)


def _pick(history):
    feasible = [h for h in history if h[1].feasible]
    if feasible:
        return max(feasible, key=lambda h: h[1].objective)
    return min(history, key=lambda h: (h[1].penalty, -h[1].objective))


def optimize(prob):
    """Stochastic-ranking evolution strategy; deterministic per `prob.seed`."""
    lower = np.array([prob.alpha_bounds[0]] * N_TILTS + [prob.beta_bounds[0]] * N_TILTS)
    upper = np.array([prob.alpha_bounds[1]] * N_TILTS + [prob.beta_bounds[1]] * N_TILTS)
    history = []
    cache = {}

    def evaluate(x):
        key = tuple(np.clip(x, lower, upper))
        if key not in cache:
            design = DesignVector.from_array(key)
            cache[key] = evaluate_design(design, prob)
            history.append((design, cache[key]))
            if len(history) % LOG_EVERY == 0:
                best = _pick(history)[1]
                log(f"optimize: {len(history)} evaluations, best S={best.objective:.4f} "
                    f"feasible={best.feasible}", 'DEBUG')
        return cache[key]

    def objective(x, grad):
        return evaluate(x).objective

    def constraint(name, tol=0.0):
        return lambda x, grad: evaluate(x).residuals[name] - tol

    opt = nlopt.opt(nlopt.GN_ISRES, 2 * N_TILTS)
    opt.set_lower_bounds(lower)
    opt.set_upper_bounds(upper)
    opt.set_max_objective(objective)
    opt.add_inequality_constraint(constraint('r1'), 0.0)
    opt.add_inequality_constraint(constraint('r2'), 0.0)
    opt.add_inequality_constraint(constraint('r4', prob.hover_tolerance), 0.0)
    opt.add_inequality_constraint(constraint('r5', prob.frame_tolerance), 0.0)
    opt.set_population(int(prob.population))
    opt.set_maxeval(int(prob.max_evals))

    log(f"optimize: GN_ISRES seed={prob.seed} population={prob.population} "
        f"max_evals={prob.max_evals}")
    nlopt.srand(int(prob.seed))
    x0 = 0.5 * (lower + upper)
    try:
        opt.optimize(x0)
    except nlopt.RoundoffLimited:
        log("optimize: stopped on round-off limit, using best evaluated design", 'WARNING')
    except (RuntimeError, ValueError) as e:
        if not history:
            raise OptimizerError(f"nlopt failed: {e}") from e
        log(f"optimize: nlopt stopped early ({e}), using best evaluated design", 'WARNING')
    if not history:
        raise OptimizerError("optimizer returned without evaluating a design")

    design, best = _pick(history)
    result = OptResult(design, best.objective, best.unit, best.assembled, best.residuals,
                       best.feasible, len(history), int(prob.seed), tuple(history))
    log(f"optimize: done after {len(history)} evaluations, S={best.objective:.4f} "
        f"feasible={best.feasible}")
    return result


def optimized_airframe(result, prob, name='optimized-unit'):
    return reference_description(result.design.angles, prob.airframe, name=name,
                                 positions=prob.positions)

"""Feasible force/torque polytopes: guaranteed minimum force and torque.

Both sets are zonotopes generated by the rotor columns scaled to [0, lambda_max].
Face normals come from cross products of generator pairs; the inscribed radius
is the smallest distance from the reference point (hover force, or zero torque)
to any of those faces.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from allocation import static_thrust_frame
from model import build_allocation
from workbench import (
    ConfigError,
    DegenerateForcePolytope,
    DegenerateTorquePolytope,
    NumericalError,
    log,
)

PARALLEL_TOL = 1e-9
FLAT_TOL = 1e-9
ORACLE_CHUNK = 20000


@dataclass(frozen=True)
class FeasibilityReport:
    f_min: float
    tau_min: float
    force_pair: tuple
    torque_pair: tuple
    faces_inspected: int
    degenerate: tuple = field(default_factory=tuple)
    yaw_capability: float = 0.0

    def to_dict(self):
        return {
            'f_min': self.f_min,
            'tau_min': self.tau_min,
            'force_pair': list(self.force_pair),
            'torque_pair': list(self.torque_pair),
            'faces_inspected': self.faces_inspected,
            'degenerate': list(self.degenerate),
            'yaw_capability': self.yaw_capability,
        }


def _generators(model, which):
    alloc = build_allocation(model)
    if which == 'force':
        return alloc.q_tran.T
    if which == 'torque':
        return alloc.q_rot.T
    raise ConfigError(f"which must be 'force' or 'torque', got '{which}'")


def _offset(model, which):
    return model.weight if which == 'force' else np.zeros(3)


def face_normals(generators):
    """Unit normals for every ordered non-parallel pair; (i, j) -> +h, (j, i) -> -h."""
    gens = np.asarray(generators, dtype=float)
    i_idx, j_idx = np.triu_indices(len(gens), k=1)
    crosses = np.cross(gens[i_idx], gens[j_idx])
    norms = np.linalg.norm(crosses, axis=1)
    scale = max(float(np.max(np.linalg.norm(gens, axis=1))) ** 2, 1e-300)
    valid = norms > PARALLEL_TOL * scale
    h = crosses[valid] / norms[valid, None]
    pairs = np.stack([i_idx[valid], j_idx[valid]], axis=1)
    return np.vstack([h, -h]), np.vstack([pairs, pairs[:, ::-1]])


def support(model, which, directions):
    """s(h) = sum_k max(0, lambda_max h.g_k) for each row h."""
    gens = _generators(model, which) * model.max_thrusts[:, None]
    return np.clip(np.asarray(directions, dtype=float) @ gens.T, 0.0, None).sum(axis=1)


def _signed_distances(model, which):
    gens = _generators(model, which)
    normals, pairs = face_normals(gens)
    if len(normals) == 0:
        return normals, pairs, np.zeros(0)
    distances = support(model, which, normals) - normals @ _offset(model, which)
    return normals, pairs, distances


def force_face_distances(model):
    """Signed distances from the hover force to every force face (negative: hover infeasible)."""
    _, pairs, distances = _signed_distances(model, 'force')
    return distances, pairs


def _minimum(model, which):
    normals, pairs, distances = _signed_distances(model, which)
    if len(normals) == 0:
        if which == 'force':
            raise DegenerateForcePolytope("all rotor directions are parallel")
        raise DegenerateTorquePolytope("all rotor moment arms are parallel")
    magnitudes = np.abs(distances)
    k = int(np.argmin(magnitudes))
    # 1-based rotor indices in reports
    return float(magnitudes[k]), (int(pairs[k][0]) + 1, int(pairs[k][1]) + 1), len(normals)


def is_flat(model, which):
    gens = _generators(model, which)
    s = np.linalg.svd(gens, compute_uv=False)
    return bool(s[0] == 0.0 or s[-1] <= FLAT_TOL * s[0]) if len(s) == 3 else True


def guaranteed_min_force(model):
    return _minimum(model, 'force')[0]


def guaranteed_min_torque(model):
    return _minimum(model, 'torque')[0]


def axis_torque_capability(model, axis):
    """Torque available along +/-axis from the torque polytope (smaller of both signs)."""
    e = np.asarray(axis, dtype=float)
    e = e / np.linalg.norm(e)
    both = support(model, 'torque', np.vstack([e, -e]))
    return float(np.min(both))


def hover_torque_capability(model, axis):
    """Largest |torque| along `axis` while still holding the hover thrust.

    A four-rotor unit only needs the collective along its {C} z-axis (the
    attitude loop takes care of the rest); larger airframes must hold the full
    hover force with zero torque on the other two axes.
    """
    e = np.asarray(axis, dtype=float)
    e = e / np.linalg.norm(e)
    basis = np.linalg.svd(e.reshape(1, 3))[2][1:]
    if model.n_rotors == 4:
        frame = static_thrust_frame(model, hover_tolerance=np.inf)
        q_tran, q_rot = frame.q_tran_c, frame.q_rot_c
        a_eq = np.vstack([q_tran[2:3], basis @ q_rot])
        b_eq = np.array([model.mass * model.gravity, 0.0, 0.0])
    else:
        alloc = build_allocation(model)
        q_tran, q_rot = alloc.q_tran, alloc.q_rot
        a_eq = np.vstack([q_tran, basis @ q_rot])
        b_eq = np.concatenate([model.weight, [0.0, 0.0]])
    bounds = [(0.0, float(m)) for m in model.max_thrusts]
    best = []
    for sign in (1.0, -1.0):
        res = linprog(-sign * (e @ q_rot), A_eq=a_eq, b_eq=b_eq, bounds=bounds, method='highs')
        if res.status != 0:
            return 0.0
        best.append(max(0.0, -res.fun))
    return float(min(best))


def feasibility_report(model):
    f_min, force_pair, force_faces = _minimum(model, 'force')
    degenerate = []
    try:
        tau_min, torque_pair, torque_faces = _minimum(model, 'torque')
    except DegenerateTorquePolytope:
        tau_min, torque_pair, torque_faces = 0.0, (0, 0), 0
        degenerate.append('torque')
    if is_flat(model, 'torque') and 'torque' not in degenerate:
        degenerate.append('torque')
    if is_flat(model, 'force'):
        degenerate.append('force')
    if degenerate:
        log(f"feasibility: flat polytope(s) {degenerate} for '{model.name}'", 'WARNING')
    yaw = axis_torque_capability(model, (0.0, 0.0, 1.0))
    report = FeasibilityReport(f_min, tau_min, force_pair, torque_pair,
                               force_faces + torque_faces, tuple(degenerate), yaw)
    log(f"feasibility '{model.name}': f_min={f_min:.4f} N {force_pair}, "
        f"tau_min={tau_min:.4f} N*m {torque_pair}", 'DEBUG')
    return report


def fibonacci_sphere(samples):
    k = np.arange(samples, dtype=float) + 0.5
    z = 1.0 - 2.0 * k / samples
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = k * np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def oracle_min_wrench(model, which, samples):
    """Brute-force check: min |s(h) - h.offset| over a Fibonacci sphere."""
    if samples < 1000:
        raise ConfigError(f"oracle needs at least 1000 samples, got {samples}")
    directions = fibonacci_sphere(int(samples))
    offset = _offset(model, which)
    best = np.inf
    for start in range(0, len(directions), ORACLE_CHUNK):
        chunk = directions[start:start + ORACLE_CHUNK]
        values = np.abs(support(model, which, chunk) - chunk @ offset)
        best = min(best, float(np.min(values)))
    if not np.isfinite(best):
        raise NumericalError("oracle produced no finite support value")
    return best

import math

import numpy as np
import pytest

from config_opt import (
    DesignVector,
    OptProblem,
    OptResult,
    evaluate_design,
    gamma_for_acceleration,
    optimize,
    optimized_airframe,
    rotation_angle,
)
from model import REFERENCE_ANGLES, rot_y
from workbench import ConfigError

REFERENCE_DESIGN = DesignVector([a for a, _ in REFERENCE_ANGLES], [b for _, b in REFERENCE_ANGLES])


def test_gamma_for_acceleration():
    assert gamma_for_acceleration(1.0, 9.8) == pytest.approx(-0.1017, abs=1e-4)
    assert gamma_for_acceleration(0.0, 9.8) == 0.0
    with pytest.raises(ConfigError):
        gamma_for_acceleration(1.0, 0.0)


def test_rotation_angle():
    assert rotation_angle(rot_y(0.2), rot_y(-0.1)) == pytest.approx(0.3)
    assert rotation_angle(np.eye(3), np.eye(3)) == pytest.approx(0.0)


def test_design_vector():
    design = DesignVector.from_array(np.arange(8) * 0.1)
    assert design.alphas == pytest.approx((0.0, 0.1, 0.2, 0.3))
    assert design.angles[1] == pytest.approx((0.1, 0.5))
    assert design.as_array() == pytest.approx(np.arange(8) * 0.1)
    assert design.within((0.0, 0.9), (-math.pi, math.pi))
    assert not DesignVector([1.0] * 4, [0.0] * 4).within((0.0, 0.9), (-math.pi, math.pi))
    with pytest.raises(ConfigError):
        DesignVector([0.1] * 3, [0.0] * 4)


def test_evaluate_reference_design():
    prob = OptProblem()
    ev = evaluate_design(REFERENCE_DESIGN, prob)
    assert ev.assembled['f_min'] == pytest.approx(6.8457, rel=5e-3)
    assert ev.assembled['tau_min'] == pytest.approx(2.662, rel=5e-3)
    assert ev.unit['f_min'] == pytest.approx(2.851, rel=5e-3)
    assert ev.objective == pytest.approx(ev.assembled['f_min'] + ev.assembled['tau_min'])
    assert ev.residuals['r1'] == 0.0
    assert ev.residuals['r2'] == 0.0
    assert ev.residuals['r3'] == pytest.approx(0.0, abs=1e-9)
    assert ev.residuals['r4'] == pytest.approx(0.02385, abs=2e-4)
    assert ev.residuals['r5'] == pytest.approx(0.1017 - 0.0414, abs=1e-3)
    # the published angles miss both hover tolerances
    assert not ev.feasible
    assert ev.penalty > 0.0


def test_evaluate_weights():
    a = evaluate_design(REFERENCE_DESIGN, OptProblem(w1=1.0, w2=1.0))
    b = evaluate_design(REFERENCE_DESIGN, OptProblem(w1=2.0, w2=1.0))
    assert b.objective - a.objective == pytest.approx(a.assembled['f_min'])


def test_evaluate_degenerate_design():
    vertical = DesignVector([0.0] * 4, [0.0] * 4)
    ev = evaluate_design(vertical, OptProblem())
    assert ev.objective == 0.0
    assert ev.residuals['r1'] >= 1.0
    assert not ev.feasible


def test_evaluate_outside_bounds():
    with pytest.raises(ConfigError):
        evaluate_design(DesignVector([1.2] * 4, [0.0] * 4), OptProblem())


def test_problem_validation():
    with pytest.raises(ConfigError):
        OptProblem(w1=0.0)
    with pytest.raises(ConfigError):
        OptProblem(alpha_bounds=(0.5, 0.1))
    with pytest.raises(ConfigError):
        OptProblem(max_evals=0)


def test_problem_dict_round_trip():
    prob = OptProblem(seed=3, w2=2.0)
    assert OptProblem.from_dict(prob.to_dict()) == prob
    with pytest.raises(ConfigError, match='rotr'):
        OptProblem.from_dict({'rotr': 1})


def test_problem_from_config_echoes_defaults():
    prob = OptProblem.from_config({}, seed=5)
    assert prob.mass == pytest.approx(1.1)
    assert prob.max_thrust == pytest.approx(7.0)
    assert prob.seed == 5


def test_optimize_is_deterministic():
    prob = OptProblem(seed=4, population=20, max_evals=300)
    first = optimize(prob)
    second = optimize(prob)
    assert first == second
    assert 0 < first.evaluations <= 300
    assert first.design.within(prob.alpha_bounds, prob.beta_bounds)
    assert len(first.history) == first.evaluations


def test_result_round_trip(tmp_path):
    from workbench import read_structured, write_structured
    prob = OptProblem(seed=1, population=10, max_evals=60)
    result = optimize(prob)
    path = write_structured(str(tmp_path / 'opt_result.json'), result.to_dict())
    assert OptResult.from_dict(read_structured(path)) == result
    description = optimized_airframe(result, prob)
    assert [r['alpha'] for r in description.rotors] == pytest.approx(list(result.design.alphas))
    assert description.mass == pytest.approx(prob.mass)


@pytest.mark.slow
def test_optimizer_reaches_assembled_floors():
    results = [optimize(OptProblem(seed=seed)) for seed in range(10)]
    feasible = [r for r in results if r.feasible]
    assert feasible
    best = max(feasible, key=lambda r: r.objective)
    assert best.assembled['f_min'] >= 6.75
    assert best.assembled['tau_min'] >= 2.52
    a, b = best.design.alphas, best.design.betas
    assert a[0] == pytest.approx(a[3], abs=0.05)
    assert a[1] == pytest.approx(a[2], abs=0.05)
    assert b[0] == pytest.approx(-b[3], abs=0.05)
    assert b[1] == pytest.approx(-b[2], abs=0.05)


@pytest.mark.slow
def test_optimizer_floors_at_reduced_budget():
    # a quarter of the default budget, floors relaxed by the 10 % separation allowance
    results = [optimize(OptProblem(seed=seed, max_evals=5000)) for seed in range(3)]
    feasible = [r for r in results if r.feasible]
    assert feasible
    best = max(feasible, key=lambda r: r.objective)
    assert best.assembled['f_min'] >= 0.9 * 6.75
    assert best.assembled['tau_min'] >= 0.9 * 2.52
    assert best.evaluations <= 5000

import numpy as np
import pytest

from slicetwin.nlp import (CallbackError, GridOracleResult, NlpProblem, default_starts,
                           dump_trace, grid_oracle, solve, solve_multistart)


def quad_problem():
    return NlpProblem(lower=np.array([0.0]), upper=np.array([1.0]),
                      objective=lambda x: (-(x[0] - 0.3) ** 2,
                                           np.array([-2 * (x[0] - 0.3)])))


def lp_problem():
    return NlpProblem(lower=np.zeros(2), upper=np.ones(2),
                      objective=lambda x: (x[0] + x[1], np.ones(2)),
                      linear=[(np.array([1.0, 1.0]), 1.0)])


def product_problem(bound=1.0):
    def obj(x):
        return x[0] * x[1], np.array([x[1], x[0]])

    def con(x):
        return (0.3 / x[0] + 0.2 / x[1] - bound,
                np.array([-0.3 / x[0] ** 2, -0.2 / x[1] ** 2]))

    return NlpProblem(lower=np.full(2, 0.05), upper=np.ones(2),
                      objective=obj, constraints=[con])


def test_unconstrained_quadratic():
    sol = solve(quad_problem(), np.array([0.9]))
    assert sol.converged
    assert abs(sol.x[0] - 0.3) <= 1e-6
    assert len(sol.multipliers) == 0
    assert sol.kkt_residual <= 1e-5


def test_lp_known_dual():
    sol = solve(lp_problem(), np.array([0.1, 0.1]))
    assert sol.converged
    assert abs(sol.objective - 1.0) <= 1e-6
    assert abs(sol.linear_multipliers[0] - 1.0) <= 1e-6


def test_nonlinear_vs_grid_oracle():
    p = product_problem()
    sol = solve_multistart(p)
    oracle = grid_oracle(p, 401)
    assert sol.converged and oracle.feasible
    assert abs(sol.objective - oracle.objective) <= 1e-3
    assert sol.objective >= oracle.objective - 1e-3


def binding_problem():
    """Wider box so the resource-tradeoff constraint genuinely binds at the
    optimum: max f*phi s.t. 0.3/f + 0.2/phi <= 0.3 on [0.05, 2]^2."""
    def obj(x):
        return x[0] * x[1], np.array([x[1], x[0]])

    def con(x):
        return (0.3 / x[0] + 0.2 / x[1] - 0.3,
                np.array([-0.3 / x[0] ** 2, -0.2 / x[1] ** 2]))

    return NlpProblem(lower=np.full(2, 0.05), upper=np.full(2, 2.0),
                      objective=obj, constraints=[con])


def test_binding_nonlinear_constraint_multiplier():
    p = binding_problem()
    sol = solve_multistart(p)
    oracle = grid_oracle(p, 401)
    assert sol.converged
    assert abs(sol.objective - oracle.objective) <= 1e-2  # oracle grid is coarse at the boundary
    assert sol.objective >= oracle.objective - 1e-3
    g, _ = p.constraints[0](sol.x)
    assert abs(g) <= 1e-6          # active
    assert sol.multipliers[0] > 1e-3
    assert sol.multipliers[0] * g >= -1e-5   # complementarity
    # analytic optimum: f at its 2.0 bound, phi = 4/3 from the active constraint
    assert abs(sol.x[0] - 2.0) <= 1e-6
    assert abs(sol.x[1] - 4.0 / 3.0) <= 1e-5


def test_kkt_invariants_on_all_regressions():
    for p in (quad_problem(), lp_problem(), product_problem(), binding_problem()):
        sol = solve_multistart(p)
        assert sol.converged
        assert sol.max_violation <= 1e-6
        assert sol.kkt_residual <= 1e-5
        assert np.all(sol.multipliers >= 0)
        for j, c in enumerate(p.constraints):
            g, _ = c(sol.x)
            assert sol.multipliers[j] * g >= -1e-5


def test_infeasible_constant_constraint():
    p = NlpProblem(lower=np.zeros(1), upper=np.ones(1),
                   objective=lambda x: (x[0], np.ones(1)),
                   constraints=[lambda x: (1.0, np.zeros(1))])
    sol = solve(p, np.array([0.5]))
    assert sol.status == "infeasible"
    assert sol.max_violation >= 0.9
    oracle = grid_oracle(p, 11)
    assert not oracle.feasible
    assert str(oracle) == "no feasible grid point"


def test_oracle_resolution_two_hits_endpoints():
    seen = []

    def obj(x):
        seen.append(float(x[0]))
        return x[0], np.ones(1)

    p = NlpProblem(lower=np.zeros(1), upper=np.ones(1), objective=obj)
    res = grid_oracle(p, 2)
    assert sorted(set(seen)) == [0.0, 1.0]
    assert res.objective == 1.0


def test_oracle_guards():
    p = quad_problem()
    with pytest.raises(ValueError, match="resolution"):
        grid_oracle(p, 1)
    big = NlpProblem(lower=np.zeros(5), upper=np.ones(5),
                     objective=lambda x: (0.0, np.zeros(5)))
    with pytest.raises(ValueError, match="dimension"):
        grid_oracle(big, 3)


def test_determinism():
    p = binding_problem()
    a = solve_multistart(p)
    b = solve_multistart(p)
    assert np.array_equal(a.x, b.x)
    assert a.objective == b.objective


def test_non_finite_callback_reports_point():
    def obj(x):
        return float("nan"), np.zeros(1)

    p = NlpProblem(lower=np.zeros(1), upper=np.ones(1), objective=obj)
    with pytest.raises(CallbackError, match="non-finite"):
        solve(p, np.array([0.5]))


def test_x0_clipped_into_box():
    sol = solve(quad_problem(), np.array([5.0]))
    assert sol.converged and abs(sol.x[0] - 0.3) <= 1e-6


def test_default_starts_inside_box():
    p = product_problem()
    for s in default_starts(p):
        assert np.all(s >= p.lower) and np.all(s <= p.upper)


def test_trace_dump(tmp_path):
    sol = solve(binding_problem(), np.array([0.5, 0.5]))
    path = tmp_path / "trace.csv"
    dump_trace(sol, path)
    lines = open(path).read().splitlines()
    assert lines[0] == "iteration,objective,violation,step_norm,kkt_residual"
    assert len(lines) == len(sol.trace) + 1

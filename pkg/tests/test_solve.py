import numpy as np
import pytest

from magcalderon import experiments as ex
from magcalderon.dtn_inverse import window_bump
from magcalderon.nonlinearity import linear, polynomial, scaled_expm1
from magcalderon.operator import holder_seminorm
from magcalderon.solve import (ContractionError, FactorizationError, InteriorSolver, LinearProblem,
                               SolverError, SolverOptions, calibrate_rho, equation_residual,
                               scale_to_c2, solve_J, solve_linear, solve_nonlinear,
                               verify_small_data_bound)


@pytest.fixture(scope="module")
def rho_small(small):
    return calibrate_rho(small.M, small.truth, window_bump(small.grid), solver=small.solver)


def test_zero_data_gives_zero(small):
    u, rep = solve_nonlinear(small.M, small.truth, np.zeros(small.grid.size))
    assert np.all(u == 0)
    assert rep.final_residual == 0


@pytest.mark.parametrize("seed", range(5))
def test_maximum_principle_and_sup_bound(small, seed):
    for prob in ex.random_linear_battery(small, count=10, seed=seed):
        u = solve_linear(prob, small.solver)
        assert u.min() >= -1e-12
        bound = np.max(prob.f, initial=0) / prob.c + np.max(np.abs(prob.g))
        assert np.max(np.abs(u)) <= bound + 1e-10


def test_linear_problem_validation(small):
    grid, M = small.grid, small.M
    n_int = int(grid.interior.sum())
    window = grid.window1 | grid.window2
    with pytest.raises(ValueError):
        LinearProblem(M, np.zeros(n_int), np.zeros(n_int), np.zeros(grid.size), window)
    with pytest.raises(ValueError):
        LinearProblem(M, np.ones(n_int), np.zeros(n_int), np.zeros(grid.size - 1), window)
    g = np.zeros(grid.size)
    g[grid.exterior & ~window] = 1.0
    with pytest.raises(ValueError):
        LinearProblem(M, np.ones(n_int), np.zeros(n_int), g, window)


def test_J_is_linear_and_bounded(small, rng):
    n_int = int(small.grid.interior.sum())
    a1 = small.truth.coefficient(1)
    f1, f2 = rng.normal(size=(2, n_int))
    J = lambda f: solve_J(small.solver, a1, f)
    assert np.allclose(J(2 * f1 - 3 * f2), 2 * J(f1) - 3 * J(f2), atol=1e-12)
    assert np.max(np.abs(J(f1))) <= np.max(np.abs(f1)) / a1.min() + 1e-12


def test_linear_model_matches_linear_solve(small):
    g = window_bump(small.grid)
    model = linear(small.truth.coefficient(1))
    u, rep = solve_nonlinear(small.M, model, g)
    n_int = int(small.grid.interior.sum())
    ref = solve_linear(LinearProblem(small.M, model.coefficient(1), np.zeros(n_int), g,
                                     small.grid.window1 | small.grid.window2))
    assert np.array_equal(u, ref)
    assert rep.iterations == 0


def test_fixed_point_converges_and_residual_decreases(small, rho_small):
    g = scale_to_c2(window_bump(small.grid), small.grid, rho_small)
    u, rep = solve_nonlinear(small.M, small.truth, g, SolverOptions(rho=rho_small))
    assert rep.final_residual <= 1e-8
    assert rep.contraction_factor <= 0.5
    res = [r[1] for r in rep.residual_history]
    assert all(b < a for a, b in zip(res[1:], res[2:]) if a > 1e-13)
    assert np.max(np.abs(equation_residual(small.M, small.truth, u))) == rep.final_residual


def test_tighter_tolerance_is_stable(small, rho_small):
    g = scale_to_c2(window_bump(small.grid), small.grid, rho_small / 4)
    u1, _ = solve_nonlinear(small.M, small.truth, g, SolverOptions(tol=1e-9))
    u2, _ = solve_nonlinear(small.M, small.truth, g, SolverOptions(tol=1e-10))
    assert np.max(np.abs(u1 - u2)) <= 1e-8


def test_contraction_factor_grows_with_data(small, rho_small):
    factors = []
    for k in range(4):
        g = scale_to_c2(window_bump(small.grid), small.grid, rho_small / 2 ** k)
        factors.append(solve_nonlinear(small.M, small.truth, g)[1].contraction_factor)
    assert all(b < a for a, b in zip(factors, factors[1:]))


def test_data_outside_ball_is_rejected(small):
    g = scale_to_c2(window_bump(small.grid), small.grid, 2.0)
    with pytest.raises(SolverError):
        solve_nonlinear(small.M, small.truth, g, SolverOptions(rho=1.0))


def test_large_data_fails_contraction(small, rho_small):
    g = scale_to_c2(window_bump(small.grid), small.grid, rho_small * 2 ** 12)
    model = scaled_expm1(small.truth.coefficient(1))
    with pytest.raises(ContractionError) as err:
        solve_nonlinear(small.M, model, g)
    assert err.value.report is not None


def test_calibration_respects_target(small, rho_small):
    g = scale_to_c2(window_bump(small.grid), small.grid, 2 * rho_small)
    try:
        factor = solve_nonlinear(small.M, small.truth, g)[1].contraction_factor
    except SolverError:
        factor = np.inf
    assert factor > 0.5


def test_holder_norm_stable_under_refinement():
    values = []
    for n in (201, 401):
        setup = ex.reference_setup(n_nodes=n)
        g = scale_to_c2(window_bump(setup.grid), setup.grid, 1.0)
        u, _ = solve_nonlinear(setup.M, setup.truth, g, solver=setup.solver)
        values.append(holder_seminorm(u, setup.grid, 0.5, setup.grid.interior))
    assert max(values) / min(values) <= 1.5


def test_small_data_bound(small, rho_small):
    g = window_bump(small.grid)
    battery = [scale_to_c2(g, small.grid, rho_small / 2 ** k) for k in range(4)]
    out = verify_small_data_bound(small.M, small.truth, battery, solver=small.solver)
    assert out["bounded"], out
    assert len(out["ratios"]) == 4
    # no growth trend as the data shrink
    assert out["ratios"][-1] <= out["ratios"][0] * (1 + 1e-9)


def test_fixed_point_residual_and_tolerance_stability(small, rho_small):
    g = scale_to_c2(window_bump(small.grid), small.grid, rho_small / 2)
    tol = 1e-9
    u1, rep = solve_nonlinear(small.M, small.truth, g, SolverOptions(tol=tol), small.solver)
    # one more Picard sweep moves the iterate by at most tol
    I = small.grid.interior_idx
    a1 = small.truth.coefficient(1)
    u0 = small.solver.solve(a1, np.zeros(len(I)), g)
    v = u1[I] - u0[I]
    Fv = small.solver.solve_interior(a1, -small.truth.remainder(u1[I], 1))
    assert np.max(np.abs(Fv - v)) <= tol
    u2, _ = solve_nonlinear(small.M, small.truth, g, SolverOptions(tol=tol / 10), small.solver)
    assert np.max(np.abs(u1 - u2)) <= 10 * tol


def test_factorization_error_reports_condition(small):
    solver = InteriorSolver(small.M)
    n_int = int(small.grid.interior.sum())
    with pytest.raises(FactorizationError):
        solver.factor(np.full(n_int, -1e6))


def test_solver_caches_factorization(small):
    solver = InteriorSolver(small.M)
    q = small.truth.coefficient(1)
    rhs = np.ones(len(q))
    a = solver.solve_interior(q, rhs)
    b = solver.solve_interior(q.copy(), rhs)
    assert np.array_equal(a, b)
    assert np.max(np.abs(solver.interior_residual(q, rhs, solver.solve(q, rhs, np.zeros(small.grid.size))))) < 1e-10

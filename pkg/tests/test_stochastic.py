import numpy as np
import pytest

from sovdebt.core.hamiltonian import Hamiltonian
from sovdebt.errors import NonConvergenceError
from sovdebt.models.config import SolverConfig
from sovdebt.stochastic.equilibrium import (
    GridSolution,
    StochasticSolver,
    band_edge,
    extrapolate_to_zero,
)
from sovdebt.stochastic.grid import Grid, linear_state
from sovdebt.stochastic.scheme import ParabolicScheme

from .conftest import STOCH_MODEL, make_config

SMALL = {
    "grid_nodes": 41,
    "eps_ladder": [1e-2, 3e-3, 1e-3],
    "tol_steady": 1e-8,
    "tol_pde": 1e-1,
    "extra_rungs": 0,
}


@pytest.fixture(scope="module")
def small_solution() -> GridSolution:
    config = make_config(STOCH_MODEL, solver=SMALL)
    hamiltonian = Hamiltonian.from_config(config.model, config.costs, config.solver)
    return StochasticSolver(hamiltonian, config.solver).continuation_to_zero()


def test_grid_layout():
    grid = Grid.uniform(3.0, 31)
    assert grid.xs[0] == 0.0
    assert grid.xs[-1] == 3.0
    assert grid.h == pytest.approx(0.1)
    assert grid.interior.size == 29
    with pytest.raises(ValueError):
        Grid.uniform(3.0, 2)


def test_extrapolation_is_exact_for_quadratics():
    eps = [1e-2, 5e-3, 1e-3]
    base = np.array([0.2, 0.4])
    values = [base + 3.0 * e - 50.0 * e**2 for e in eps]
    np.testing.assert_allclose(extrapolate_to_zero(eps, values), base, atol=1e-12)
    np.testing.assert_array_equal(extrapolate_to_zero(eps[:1], values[:1]), values[0])


def test_band_edge():
    xs = np.linspace(0.0, 1.0, 6)
    assert band_edge(xs, np.array([0, 0, 0, 0.1, 0.2, 0.3])) == pytest.approx(0.4)
    assert band_edge(xs, np.zeros(6)) == 1.0
    assert band_edge(xs, np.full(6, 0.1)) == 0.0


def test_single_step_keeps_the_box(stoch_hamiltonian: Hamiltonian):
    grid = Grid.uniform(3.0, 41)
    scheme = ParabolicScheme(stoch_hamiltonian, grid)
    state = linear_state(stoch_hamiltonian.params, grid, 1e-2)
    new_state, dt = scheme.advance(state)
    assert 0 < dt <= 1.0
    assert np.all((new_state.V >= 0) & (new_state.V <= 0.5))
    assert np.all(new_state.p <= 1.0)
    assert new_state.V[0] == 0.0 and new_state.V[-1] == 0.5


def test_step_rejects_nonpositive_dt(stoch_hamiltonian: Hamiltonian):
    grid = Grid.uniform(3.0, 41)
    scheme = ParabolicScheme(stoch_hamiltonian, grid)
    state = linear_state(stoch_hamiltonian.params, grid, 1e-2)
    with pytest.raises(ValueError):
        scheme.step(state, 0.0)


def test_step_cap_raises_with_history(stoch_hamiltonian: Hamiltonian):
    solver = StochasticSolver(stoch_hamiltonian, SolverConfig(grid_nodes=41, max_steps=5))
    with pytest.raises(NonConvergenceError) as info:
        solver.steady_state(1e-2)
    assert isinstance(info.value.history, list)


def test_ladder_must_decrease(stoch_hamiltonian: Hamiltonian):
    solver = StochasticSolver(stoch_hamiltonian, SolverConfig(grid_nodes=41))
    with pytest.raises(ValueError):
        solver.continuation_to_zero([1e-3, 1e-2])


def test_boundary_values(small_solution: GridSolution):
    assert small_solution.V[0] == 0.0
    assert small_solution.V[-1] == pytest.approx(0.5)
    assert small_solution.p[0] == 1.0
    assert small_solution.p[-1] == pytest.approx(0.5)


def test_solution_stays_in_box(small_solution: GridSolution):
    assert np.all((small_solution.V >= 0) & (small_solution.V <= 0.5))
    theta_min = min(0.5, 0.3 / 1.3)
    assert np.all((small_solution.p >= theta_min - 1e-12) & (small_solution.p <= 1.0))


def test_value_is_monotone(small_solution: GridSolution):
    assert small_solution.monotone_V


def test_policy_at_zero_debt(small_solution: GridSolution):
    assert small_solution.u_star[0] == 0.0
    assert small_solution.v_star[0] == 0.0
    assert np.all((small_solution.u_star >= 0) & (small_solution.u_star < 1))
    assert np.all((small_solution.v_star >= 0) & (small_solution.v_star < 1))


def test_no_devaluation_band(small_solution: GridSolution):
    diag = small_solution.diagnostics
    assert diag is not None
    assert diag.band_holds
    assert small_solution.no_dev_band > 0
    assert diag.band_edge_bound == pytest.approx(min(0.1 / diag.max_slope, 3.0))


def test_rung_history(small_solution: GridSolution):
    history = small_solution.eps_history
    assert [record.eps for record in history] == SMALL["eps_ladder"]
    assert all(record.steps > 0 for record in history)
    assert small_solution.eps == 1e-3
    assert np.all(small_solution.V_limit >= 0) and np.all(small_solution.V_limit <= 0.5)


def test_interpolated_lookups(small_solution: GridSolution):
    x = float(small_solution.xs[10])
    assert small_solution.value_at(x) == pytest.approx(float(small_solution.V[10]))
    assert small_solution.price_at(x) == pytest.approx(float(small_solution.p[10]))


def test_centred_residual_is_exact_on_a_quadratic_pair(stoch_hamiltonian: Hamiltonian):
    grid = Grid.uniform(3.0, 31)
    scheme = ParabolicScheme(stoch_hamiltonian, grid)
    pr = stoch_hamiltonian.params
    a, b = 0.05, 0.1
    V = a * grid.xs**2
    p = 1.0 - b * grid.xs

    x = grid.interior
    q = p[1:-1]
    xi = 2.0 * a * x
    ev = stoch_hamiltonian.evaluate(x, xi, q)
    expected_v = -pr.r * V[1:-1] + ev.value + 0.5 * pr.sigma**2 * x**2 * 2.0 * a
    expected_p = (pr.r + pr.lam) - (pr.r + pr.lam + ev.v_opt) * q - b * ev.grad_xi

    res_v, res_p = scheme.centred_residuals(V, p)
    np.testing.assert_allclose(res_v, expected_v, atol=1e-9)
    np.testing.assert_allclose(res_p, expected_p, atol=1e-9)

    # the upwind operator carries an O(h) discretization error on the same pair
    upwind_v, _ = scheme.residuals(V, p, 0.0)
    assert np.max(np.abs(upwind_v - expected_v)) > 1e-6


def test_consistency_residuals_are_recorded(small_solution: GridSolution):
    assert np.isfinite(small_solution.consistency_V)
    assert np.isfinite(small_solution.consistency_p)
    last = small_solution.eps_history[-1]
    assert small_solution.consistency_V == pytest.approx(last.consistency_V)
    assert small_solution.residual_V == pytest.approx(last.residual_V)


def test_ladder_is_extended_until_the_limit_residual_meets_tolerance():
    config = make_config(
        STOCH_MODEL,
        solver={
            "grid_nodes": 41,
            "eps_ladder": [1e-2, 1e-3],
            "tol_steady": 1e-8,
            "tol_pde": 1e-4,
            "extra_rungs": 3,
        },
    )
    hamiltonian = Hamiltonian.from_config(config.model, config.costs, config.solver)
    solution = StochasticSolver(hamiltonian, config.solver).continuation_to_zero()

    history = solution.eps_history
    assert len(history) > 2
    for coarse, fine in zip(history[1:], history[2:], strict=False):
        assert fine.eps == pytest.approx(coarse.eps / 10.0)
    assert max(solution.residual_V, solution.residual_p) <= 1e-4
    assert solution.eps == history[-1].eps


def test_limit_residual_above_tolerance_raises():
    config = make_config(
        STOCH_MODEL,
        solver={
            "grid_nodes": 61,
            "eps_ladder": [1e-2, 1e-3, 1e-4],
            "tol_steady": 1e-8,
            "tol_pde": 1e-6,
            "extra_rungs": 1,
        },
    )
    hamiltonian = Hamiltonian.from_config(config.model, config.costs, config.solver)
    with pytest.raises(NonConvergenceError, match="stays above tol_pde") as info:
        StochasticSolver(hamiltonian, config.solver).continuation_to_zero()
    # three ladder rungs and one extension
    assert len(info.value.history) == 4
    assert info.value.history[-1] > 1e-6


@pytest.mark.slow
def test_grid_refinement_shrinks_the_change_in_V():
    solver_settings = {
        "eps_ladder": [1e-2, 1e-3],
        "tol_steady": 1e-8,
        "tol_pde": 1e-1,
        "extra_rungs": 0,
    }
    values = {}
    for n in (101, 201, 401):
        config = make_config(STOCH_MODEL, solver={**solver_settings, "grid_nodes": n})
        hamiltonian = Hamiltonian.from_config(config.model, config.costs, config.solver)
        values[n] = StochasticSolver(hamiltonian, config.solver).continuation_to_zero().V

    coarse_change = np.max(np.abs(values[201][::2] - values[101]))
    fine_change = np.max(np.abs(values[401][::4] - values[201][::2]))
    assert fine_change < coarse_change

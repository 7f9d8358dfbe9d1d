import numpy as np
import pytest

from sovdebt.core.hamiltonian import Hamiltonian
from sovdebt.models.config import ChecksConfig, SimConfig
from sovdebt.simulation.checks import early_bankruptcy_check, monte_carlo_check
from sovdebt.simulation.stochastic import StochasticSimulator
from sovdebt.stochastic.equilibrium import GridSolution, StochasticSolver
from sovdebt.stochastic.grid import Grid

from .conftest import STOCH_MODEL, make_config

SIM = {"dt": 1e-2, "horizon": 20.0, "n_paths": 400, "block_size": 100, "seed": 7}


def linear_solution(hamiltonian: Hamiltonian, nodes: int = 31) -> GridSolution:
    """V and p interpolating between the boundary conditions"""
    pr = hamiltonian.params
    grid = Grid.uniform(pr.x_star, nodes)
    V = pr.B * grid.xs / pr.x_star
    p = 1.0 - (1.0 - pr.theta_star) * grid.xs / pr.x_star
    V_prime = np.full_like(grid.xs, pr.B / pr.x_star)
    return GridSolution(
        grid=grid,
        V=V,
        p=p,
        V_prime=V_prime,
        u_star=np.asarray(hamiltonian.u_star(V_prime, p), dtype=float),
        v_star=np.asarray(hamiltonian.v_star(grid.xs, V_prime), dtype=float),
        eps=0.0,
        residual_V=0.0,
        residual_p=0.0,
        V_limit=V,
    )


@pytest.fixture
def simulator(stoch_hamiltonian: Hamiltonian) -> StochasticSimulator:
    return StochasticSimulator(linear_solution(stoch_hamiltonian), stoch_hamiltonian, SimConfig(**SIM))


def test_start_at_threshold_is_immediate_bankruptcy(simulator: StochasticSimulator):
    report = simulator.run(x0=3.0)
    assert report.cost_mean == 0.5
    assert report.price_mean == 0.5
    assert report.bankrupt_fraction == 1.0
    assert report.cost_se == 0.0


def test_start_at_zero_is_paid_off(simulator: StochasticSimulator):
    report = simulator.run(x0=0.0)
    assert report.cost_mean == 0.0
    assert report.price_mean == 1.0
    assert report.zero_fraction == 1.0


def test_absorbing_level_below_start(simulator: StochasticSimulator):
    report = simulator.run(x0=1.5, absorb_at=1.0)
    assert report.bankrupt_fraction == 1.0
    assert report.cost_mean == 0.5


def test_estimates_are_reproducible(simulator: StochasticSimulator):
    first = simulator.run(x0=1.5)
    second = simulator.run(x0=1.5)
    assert first == second
    assert 0.0 < first.cost_mean < 1.0
    assert 0.0 < first.price_mean <= 1.0
    assert first.cost_se > 0
    assert first.bankrupt_fraction + first.zero_fraction <= 1.0


def test_worker_count_does_not_change_estimates(stoch_hamiltonian: Hamiltonian):
    solution = linear_solution(stoch_hamiltonian)
    serial = StochasticSimulator(solution, stoch_hamiltonian, SimConfig(**SIM)).run(x0=1.5)
    pooled = StochasticSimulator(solution, stoch_hamiltonian, SimConfig(**SIM, workers=3)).run(x0=1.5)
    assert serial.cost_mean == pooled.cost_mean
    assert serial.price_mean == pooled.price_mean


def test_seed_changes_estimates(stoch_hamiltonian: Hamiltonian):
    solution = linear_solution(stoch_hamiltonian)
    a = StochasticSimulator(solution, stoch_hamiltonian, SimConfig(**SIM)).run(x0=1.5)
    b = StochasticSimulator(solution, stoch_hamiltonian, SimConfig(**{**SIM, "seed": 8})).run(x0=1.5)
    assert a.cost_mean != b.cost_mean


def test_traces_keep_requested_paths(stoch_hamiltonian: Hamiltonian):
    sim = SimConfig(**SIM, trace_paths=5)
    simulator = StochasticSimulator(linear_solution(stoch_hamiltonian), stoch_hamiltonian, sim)
    simulator.run(x0=1.5)
    assert simulator.traces is not None
    assert simulator.traces.shape[0] == 5
    assert np.all(simulator.traces[:, 0] == 1.5)


@pytest.mark.slow
def test_monte_carlo_agrees_with_grid_solution():
    config = make_config(
        STOCH_MODEL,
        solver={
            "grid_nodes": 81,
            "eps_ladder": [1e-2, 3e-3, 1e-3],
            "tol_steady": 1e-8,
            "extra_rungs": 0,
            "tol_pde": 1e-1,
        },
        sim={"dt": 1e-2, "n_paths": 4_000, "block_size": 1_000, "antithetic": True, "seed": 11},
    )
    hamiltonian = Hamiltonian.from_config(config.model, config.costs, config.solver)
    solution = StochasticSolver(hamiltonian, config.solver).continuation_to_zero()
    simulator = StochasticSimulator(solution, hamiltonian, config.sim)
    [comparison] = monte_carlo_check(simulator, [1.5], config.checks)
    # coarse grid: compare loosely
    assert comparison.cost_mean == pytest.approx(comparison.solver_V, abs=0.02)
    assert comparison.price_mean == pytest.approx(comparison.solver_p, abs=0.02)

    early = early_bankruptcy_check(simulator, 1.5, ChecksConfig(early_bankruptcy_points=2, tol_sim=0.02))
    assert early.passed

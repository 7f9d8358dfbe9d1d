import math

import numpy as np
import pytest

from sovdebt.asymptotics import (
    ThresholdSweep,
    classify_trend,
    devaluation_check,
    devaluation_margins,
    eligibility,
    eligibility_threshold,
    lower_bound,
)
from sovdebt.constant import ConstantStrategies
from sovdebt.core.costs import CostModel
from sovdebt.core.hamiltonian import Hamiltonian
from sovdebt.deterministic.equilibrium import DeterministicSolver
from sovdebt.errors import ConstructionError
from sovdebt.models.config import RunConfig, load_config
from sovdebt.stochastic.equilibrium import GridSolution
from sovdebt.stochastic.grid import Grid

from .conftest import CONFIG_DIR, DET_MODEL, STOCH_MODEL, make_config

CAPPED = {"kind": "capped", "theta0": 0.5, "R": 1.0}


def costs_of(config: RunConfig) -> CostModel:
    return CostModel.from_config(config.costs, config.model.v_max)


def test_stochastic_eligibility_threshold():
    config = make_config({**STOCH_MODEL, "theta": CAPPED})
    threshold = eligibility_threshold(config.model, costs_of(config), "stoch")
    assert threshold == pytest.approx(317.0)
    record = eligibility(config.model, costs_of(config), 1.0, "stoch")
    assert not record.eligible
    assert record.margin == pytest.approx(1.0 - 317.0)
    assert record.sup_product == 1.0


def test_deterministic_eligibility_threshold():
    config = make_config({**DET_MODEL, "theta": CAPPED}, costs={"a0": 1.0})
    assert eligibility_threshold(config.model, costs_of(config), "det") == pytest.approx(250.0)
    assert eligibility(config.model, costs_of(config), 300.0, "det").eligible


def test_unbounded_recovery_is_never_eligible():
    config = make_config(DET_MODEL, costs={"a0": 1.0})
    assert eligibility_threshold(config.model, costs_of(config), "det") == math.inf
    assert eligibility_threshold(config.model, costs_of(config), "stoch") == math.inf


def test_zero_marginal_repayment_cost_is_never_eligible():
    config = make_config({**DET_MODEL, "theta": CAPPED})
    assert eligibility_threshold(config.model, costs_of(config), "det") == math.inf


def test_lower_bounds():
    stoch = make_config({**STOCH_MODEL, "theta": CAPPED}).model
    assert lower_bound(stoch, 1.0, "stoch") == pytest.approx(0.0211864, rel=1e-5)
    det = make_config({**DET_MODEL, "theta": CAPPED}).model
    assert lower_bound(det, 2.0, "det") == pytest.approx(0.5 * 0.5 ** (1.0 / 3.0))
    assert lower_bound(det, 0.5, "det") == 0.0
    assert lower_bound(make_config(DET_MODEL).model, 2.0, "det") is None


@pytest.mark.parametrize(
    ("values", "bound", "expected"),
    [
        ([0.4, 0.2, 0.05, 0.01], None, "ponzi"),
        ([0.4, 0.2, 0.1], None, "inconclusive"),
        ([0.4, 0.3, 0.31], 0.2, "non-ponzi"),
        ([0.4, 0.3, 0.25], 0.3, "inconclusive"),
        ([0.4, None, 0.01], 0.0, "inconclusive"),
        ([], 0.1, "inconclusive"),
    ],
)
def test_classify_trend(values, bound, expected):
    assert classify_trend(values, bound, ratio_threshold=0.1, bound_slack=0.05) == expected


def test_devaluation_margins():
    config = load_config(CONFIG_DIR / "devaluation.yaml")
    margins = devaluation_margins(config.model, costs_of(config))
    assert margins == pytest.approx((2.0, 0.8, 0.2))


def test_devaluation_hypotheses_fail_at_canonical_scale():
    config = make_config(DET_MODEL, costs={"a0": 1.0})
    margins = devaluation_margins(config.model, costs_of(config))
    assert margins is not None
    assert margins[0] < 0
    assert devaluation_margins(make_config(DET_MODEL).model, costs_of(make_config(DET_MODEL))) is None


def _grid_solution(x_star: float, v_star: np.ndarray) -> GridSolution:
    grid = Grid.uniform(x_star, v_star.size)
    zeros = np.zeros_like(grid.xs)
    return GridSolution(
        grid=grid,
        V=zeros,
        p=np.ones_like(grid.xs),
        V_prime=zeros,
        u_star=zeros,
        v_star=v_star,
        eps=0.0,
        residual_V=0.0,
        residual_p=0.0,
        V_limit=zeros,
    )


def test_devaluation_check_on_grid_solution():
    config = load_config(CONFIG_DIR / "devaluation.yaml")
    costs = costs_of(config)
    flat = devaluation_check(_grid_solution(8.0, np.zeros(11)), config.model, costs)
    assert flat.hypothesis_met and flat.asserted
    assert not flat.passed

    devaluing = np.zeros(11)
    devaluing[6:] = 0.3
    report = devaluation_check(_grid_solution(8.0, devaluing), config.model, costs)
    assert report.passed
    assert report.max_v_star == pytest.approx(0.3)


def test_devaluation_check_without_hypothesis_passes():
    config = make_config(DET_MODEL, costs={"a0": 1.0})
    report = devaluation_check(_grid_solution(3.0, np.zeros(11)), config.model, costs_of(config))
    assert report.well_posed
    assert not report.hypothesis_met
    assert report.passed


def test_sweep_records_failed_thresholds(monkeypatch: pytest.MonkeyPatch):
    config = make_config(
        {**DET_MODEL, "theta": CAPPED},
        costs={"a0": 1.0},
        sweep={"xstar_grid": [4.0, 2.0, 8.0], "probe_x": 1.5},
    )
    sweep = ThresholdSweep(config)

    def fake_value(x_star: float, probe_x: float, regime: str) -> float:
        if x_star == 4.0:
            raise ConstructionError("no touch")
        return 1.0 / x_star

    monkeypatch.setattr(sweep, "value_at_probe", fake_value)
    result = sweep.sweep()
    assert result.xstar_grid == [2.0, 4.0, 8.0]
    assert result.V_at_probe == [0.5, None, 0.125]
    assert result.failures == ["x*=4: no touch"]
    assert result.regime_class == "inconclusive"
    assert result.regime == "det"
    assert not result.eligibility.eligible


def test_probe_beyond_threshold_costs_bankruptcy():
    config = make_config(DET_MODEL)
    assert ThresholdSweep(config).value_at_probe(1.0, 1.5, "det") == 0.5



@pytest.mark.slow
def test_devaluation_activates_on_the_solved_equilibrium():
    config = load_config(CONFIG_DIR / "devaluation.yaml")
    hamiltonian = Hamiltonian.from_config(config.model, config.costs, config.solver)
    constants = ConstantStrategies(config.model, hamiltonian.costs)
    equilibrium = DeterministicSolver(hamiltonian, constants, config.solver).build_equilibrium()
    report = devaluation_check(equilibrium, config.model, hamiltonian.costs)
    assert report.hypothesis_met
    assert report.asserted
    assert report.max_v_star > 0
    assert report.passed


@pytest.mark.slow
def test_constant_salvage_sweep_is_ponzi():
    config = make_config(
        STOCH_MODEL,
        solver={
            "grid_nodes": 81,
            "eps_ladder": [1e-2, 1e-3],
            "tol_steady": 1e-8,
            "tol_pde": 1e-1,
            "extra_rungs": 0,
            "workers": 3,
        },
        sweep={"xstar_grid": [2.0, 4.0, 8.0], "probe_x": 1.0, "ratio_threshold": 0.9},
    )
    result = ThresholdSweep(config).sweep()
    assert result.failures == []
    assert result.lower_bound is None
    values = [value for value in result.V_at_probe if value is not None]
    assert len(values) == 3
    assert all(b < a for a, b in zip(values, values[1:], strict=False))
    assert result.regime_class == "ponzi"


@pytest.mark.slow
def test_capped_salvage_sweep_is_non_ponzi():
    config = make_config(
        {**DET_MODEL, "theta": CAPPED},
        costs={"a0": 1.0},
        solver={"workers": 3},
        sweep={"xstar_grid": [2.0, 4.0, 8.0], "probe_x": 1.5, "bound_slack": 0.5},
    )
    result = ThresholdSweep(config).sweep()
    assert result.failures == []
    assert result.lower_bound == pytest.approx(0.5 * (1.0 - 1.0 / 1.5) ** (1.0 / 3.0))
    assert result.regime_class == "non-ponzi"

import math

import numpy as np
import pytest

from sovdebt.constant import ConstantStrategies
from sovdebt.core.costs import CostModel
from sovdebt.errors import InfeasibleError
from sovdebt.models.config import CostsConfig

from .conftest import DET_MODEL, make_config


def test_non_devaluating_region(det_constants: ConstantStrategies):
    # below x_c the constant strategy repays u = (r - mu)x without devaluing
    u = 0.08
    table = det_constants.profile(1.0)
    assert table.v_c[0] == 0.0
    assert table.p_c[0] == 1.0
    assert table.w[0] == pytest.approx(u**2 / (1 - u) / 0.1, rel=1e-12)


def test_w_prime_matches_finite_differences(det_constants: ConstantStrategies):
    for x in (0.5, 1.0, 2.0, 2.9):
        step = 1e-6
        numeric = (det_constants.w(x + step) - det_constants.w(x - step)) / (2 * step)
        assert det_constants.w_prime(x) == pytest.approx(numeric, rel=1e-5)


def test_first_order_condition_agrees_with_minimization(det_constants: ConstantStrategies):
    for x in np.linspace(0.1, 3.0, 12):
        assert det_constants.w(float(x)) == pytest.approx(
            det_constants.w_by_minimization(float(x)), rel=1e-8, abs=1e-12
        )


def test_thresholds(det_constants: ConstantStrategies):
    x_flat = det_constants.x_flat()
    x_c = det_constants.x_c()
    assert 0 < x_flat < x_c
    assert x_flat == pytest.approx(0.755, abs=0.01)
    assert x_c == pytest.approx(1.40, abs=0.01)
    # v_c switches on exactly above x_c
    assert det_constants.v_c(0.99 * x_c) == 0.0
    assert det_constants.v_c(1.01 * x_c) > 0.0


def test_canonical_threshold_values(det_constants: ConstantStrategies):
    assert det_constants.p_c(3.0) == pytest.approx(0.789, abs=0.005)
    assert det_constants.w(3.0) == pytest.approx(0.587, abs=0.005)


def test_price_is_nonincreasing(det_constants: ConstantStrategies):
    table = det_constants.profile(np.linspace(0.0, 3.0, 61))
    assert np.all(np.diff(table.p_c) <= 1e-14)
    assert np.all(np.diff(table.w) > 0)


def test_zero_marginal_devaluation_cost_has_no_thresholds():
    config = make_config(DET_MODEL)
    costs = CostModel.from_config(CostsConfig(b0=0.0), config.model.v_max)
    constants = ConstantStrategies(config.model, costs)
    assert constants.x_flat() == 0.0
    assert constants.x_c() == 0.0


def test_infeasible_ratio_raises():
    model = {**DET_MODEL, "x_star": 30.0, "v_max": 0.01, "sigma": 0.1}
    config = make_config(model)
    costs = CostModel.from_config(config.costs, config.model.v_max)
    constants = ConstantStrategies(config.model, costs)
    table = constants.profile(20.0)
    assert not table.feasible[0]
    assert math.isinf(table.w[0])
    with pytest.raises(InfeasibleError):
        constants.w(20.0)

import math

import numpy as np
import pytest

from sovdebt.core.costs import BarrierCost, CostModel
from sovdebt.core.roots import bisect_array, grow_bracket
from sovdebt.models.config import CostsConfig


def test_implementing_cost_conjugate_closed_form():
    # L(u) = u^2/(1-u) has conjugate (sqrt(1+rho) - 1)^2
    L = BarrierCost(0.0, 1.0, cap=1.0)
    rhos = np.array([0.0, 0.5, 3.0, 8.0])
    expected = (np.sqrt(1.0 + rhos) - 1.0) ** 2
    np.testing.assert_allclose(L.conjugate(rhos), expected, atol=1e-14)
    assert L.conjugate(3.0) == pytest.approx(1.0)


def test_quadratic_devaluation_cost():
    c = BarrierCost(0.1, 1.0)
    assert c.value(0.5) == pytest.approx(0.3)
    assert c.deriv(0.5) == pytest.approx(1.1)
    assert c.second(2.0) == pytest.approx(2.0)
    assert c.inverse_deriv(0.05) == 0.0
    assert c.inverse_deriv(0.5) == pytest.approx(0.2)
    assert c.conjugate(0.5) == pytest.approx(0.04)
    assert c.inverse(0.05) == pytest.approx((-0.1 + math.sqrt(0.21)) / 2.0, rel=1e-10)


def test_inverse_derivative_inverts_derivative():
    cost = BarrierCost(0.3, 2.0, cap=1.5)
    zs = np.linspace(0.0, 1.4, 15)
    np.testing.assert_allclose(cost.inverse_deriv(cost.deriv(zs)), zs, atol=1e-10)


def test_barrier_outside_domain_is_infinite():
    L = BarrierCost(0.0, 1.0, cap=1.0)
    assert math.isinf(L.value(1.0))
    assert math.isinf(L.value(-0.1))
    assert math.isinf(L.deriv(1.2))


def test_invalid_coefficients_rejected():
    with pytest.raises(ValueError):
        BarrierCost(-1.0, 1.0)
    with pytest.raises(ValueError):
        BarrierCost(0.0, 0.0)


def test_cost_model_from_config():
    costs = CostModel.from_config(CostsConfig(a0=0.0, a=1.0, b0=0.1, b1=1.0), v_max=1.0)
    assert costs.L.upper == 1.0
    assert costs.c.upper == 1.0
    assert costs.c.slope_at_zero == 0.1
    assert costs.delta0 == pytest.approx(2.0)


def test_bisect_array_solves_componentwise():
    targets = np.array([0.5, 2.0, 7.0])
    roots = bisect_array(lambda s: s**2 - targets, np.zeros(3), np.full(3, 3.0))
    np.testing.assert_allclose(roots, np.sqrt(targets), atol=1e-10)


def test_grow_bracket_marks_unbounded_components():
    hi = grow_bracket(lambda s: np.array([5.0, 1e9]) - s, np.ones(2), cap=1e6)
    assert 5.0 <= hi[0] <= 10.0
    assert math.isinf(hi[1])


def test_barrier_inverse_near_the_cap():
    L = BarrierCost(0.0, 1.0, cap=1.0)
    for level in (0.5, 1e3, 1e8):
        z = L.inverse(level)
        assert 0.0 < z < 1.0
        assert z == pytest.approx(2.0 / (1.0 + math.sqrt(1.0 + 4.0 / level)), rel=1e-12)
        assert L.value(z) == pytest.approx(level, rel=1e-5)

import math

import numpy as np
import pytest

from sovdebt.core.hamiltonian import Hamiltonian
from sovdebt.errors import DomainError, NoSolutionError


def test_value_at_known_point(det_hamiltonian: Hamiltonian):
    # -L°(0.5) - c°(0.5) + 0.08*0.5 with L°(0.5) = (sqrt(1.5) - 1)^2
    expected = -((math.sqrt(1.5) - 1.0) ** 2)
    assert det_hamiltonian.value(1.0, 0.5, 1.0) == pytest.approx(expected, abs=1e-12)


def test_gradient_matches_finite_differences(stoch_hamiltonian: Hamiltonian):
    H = stoch_hamiltonian
    x, xi, p, step = 1.3, 0.4, 0.8, 1e-6
    result = H.evaluate(x, xi, p)
    assert result.grad_xi == pytest.approx(
        (H.value(x, xi + step, p) - H.value(x, xi - step, p)) / (2 * step), abs=1e-7
    )
    assert result.grad_x == pytest.approx(
        (H.value(x + step, xi, p) - H.value(x - step, xi, p)) / (2 * step), abs=1e-7
    )
    assert result.grad_p == pytest.approx(
        (H.value(x, xi, p + step) - H.value(x, xi, p - step)) / (2 * step), abs=1e-7
    )


def test_zero_adjoint_gives_zero(det_hamiltonian: Hamiltonian):
    xs = np.linspace(0.0, 3.0, 7)
    np.testing.assert_allclose(det_hamiltonian.value(xs, np.zeros_like(xs), 0.7), 0.0)


def test_bounds_bracket_the_hamiltonian(stoch_hamiltonian: Hamiltonian):
    H = stoch_hamiltonian
    rng = np.random.default_rng(7)
    x = rng.uniform(0.0, 3.0, 200)
    xi = rng.uniform(0.0, 5.0, 200)
    p = rng.uniform(0.3, 1.0, 200)
    value = H.value(x, xi, p)
    assert np.all(value <= H.upper_bound(x, xi, p) + 1e-12)
    assert np.all(value >= H.lower_bound(x, xi, p) - 1e-12)


def test_controls_vanish_below_marginal_costs(det_hamiltonian: Hamiltonian):
    H = det_hamiltonian
    assert H.u_star(0.0, 1.0) == 0.0
    # x*xi = 0.05 stays below c'(0) = 0.1
    assert H.v_star(0.5, 0.1) == 0.0
    assert H.v_star(2.0, 0.5) == pytest.approx(0.45)


def test_xi_sharp_is_the_peak(det_hamiltonian: Hamiltonian):
    H = det_hamiltonian
    point = H.xi_sharp(2.0, 0.8)
    assert H.grad_xi(2.0, point.xi_sharp, 0.8) == pytest.approx(0.0, abs=1e-9)
    for shift in (-0.01, 0.01):
        assert H.value(2.0, point.xi_sharp + shift, 0.8) <= point.h_max


def test_branches_solve_level_equation(det_hamiltonian: Hamiltonian):
    H = det_hamiltonian
    x, p = 2.0, 0.8
    eta = 0.5 * H.h_max(x, p) / H.params.r
    minus = H.f_branch(x, eta, p, "minus")
    plus = H.f_branch(x, eta, p, "plus")
    assert minus < H.xi_sharp(x, p).xi_sharp < plus
    assert H.value(x, minus, p) == pytest.approx(H.params.r * eta, abs=1e-10)
    assert H.value(x, plus, p) == pytest.approx(H.params.r * eta, abs=1e-10)


def test_level_above_peak_has_no_solution(det_hamiltonian: Hamiltonian):
    H = det_hamiltonian
    eta = 2.0 * H.h_max(2.0, 0.8) / H.params.r
    with pytest.raises(NoSolutionError):
        H.f_branch(2.0, eta, 0.8)
    assert H.f_branch(2.0, eta, 0.8, clamp=True) == pytest.approx(H.xi_sharp(2.0, 0.8).xi_sharp)


def test_price_slope_vanishes_without_devaluation(det_hamiltonian: Hamiltonian):
    assert det_hamiltonian.g_minus(0.5, 0.0, 1.0) == 0.0


def test_domain_errors(det_hamiltonian: Hamiltonian):
    with pytest.raises(DomainError):
        det_hamiltonian.value(1.0, 0.1, 0.0)
    with pytest.raises(DomainError):
        det_hamiltonian.value(-1.0, 0.1, 0.5)
    with pytest.raises(DomainError):
        det_hamiltonian.xi_sharp(0.0, 0.5)


def test_holder_constant_formula(det_hamiltonian: Hamiltonian):
    pr = det_hamiltonian.params
    expected = math.sqrt(2 * pr.r * 2.0 / min(1.0, 0.5)) + math.sqrt(2 * pr.B) * pr.r / (
        (pr.r - pr.mu) * 1.0
    )
    assert det_hamiltonian.holder_constant(1.0, 0.5) == pytest.approx(expected)

"""Cross-checks of solver output against simulated cost and price functionals."""

from collections.abc import Sequence
import logging
import math

import numpy as np

from ..models.config import ChecksConfig
from ..models.results import (
    ClosedLoopEntry,
    ClosedLoopReport,
    EarlyBankruptcyEntry,
    EarlyBankruptcyReport,
    MonteCarloComparison,
    PriceCheckEntry,
    PriceCheckReport,
    SimulationReport,
)
from .deterministic import DeterministicSimulator
from .stochastic import StochasticSimulator

logger = logging.getLogger(__name__)

Simulator = StochasticSimulator | DeterministicSimulator


def _simulate(simulator: Simulator, x0: float, absorb_at: float | None = None) -> SimulationReport:
    return simulator.run(x0=x0, absorb_at=absorb_at)


def price_fixed_point_check(
    simulator: Simulator, x0s: Sequence[float], checks: ChecksConfig
) -> PriceCheckReport:
    """Compare the solver price with the simulated lender payoff at each x0.

    Monte-Carlo estimates are allowed ``se_multiple`` standard errors on top of
    ``tol_price``.
    """
    entries = []
    passed = True
    for x0 in x0s:
        report = _simulate(simulator, x0)
        gap = abs(report.price_mean - report.solver_p)
        allowed = checks.tol_price + checks.se_multiple * report.price_se
        passed &= gap <= allowed
        entries.append(
            PriceCheckEntry(
                x0=x0, solver_p=report.solver_p, simulated_p=report.price_mean, gap=gap
            )
        )
    max_gap = max((entry.gap for entry in entries), default=0.0)
    logger.info(f"Price fixed point: max gap {max_gap:.3e} over {len(entries)} points")
    return PriceCheckReport(
        entries=entries, max_gap=max_gap, tolerance=checks.tol_price, passed=passed
    )


def monte_carlo_check(
    simulator: StochasticSimulator, x0s: Sequence[float], checks: ChecksConfig
) -> list[MonteCarloComparison]:
    """Compare Monte-Carlo cost and price with V and p.

    Each x0 is simulated at dt and dt/2; the change estimates the time-step bias
    of the finer run, which is compared within se_multiple*SE + bias + truncation.
    """
    dt = simulator.sim.dt
    comparisons = []
    for x0 in x0s:
        coarse = simulator.run(x0=x0, dt=dt)
        fine = simulator.run(x0=x0, dt=dt / 2.0)
        cost_margin = abs(fine.cost_mean - coarse.cost_mean) + fine.truncation_bias_bound
        price_margin = abs(fine.price_mean - coarse.price_mean) + math.exp(
            -(simulator.params.r + simulator.params.lam) * fine.horizon
        )
        cost_gap = abs(fine.cost_mean - fine.solver_V)
        price_gap = abs(fine.price_mean - fine.solver_p)
        comparison = MonteCarloComparison(
            x0=x0,
            solver_V=fine.solver_V,
            solver_p=fine.solver_p,
            cost_mean=fine.cost_mean,
            cost_se=fine.cost_se,
            price_mean=fine.price_mean,
            price_se=fine.price_se,
            cost_bias_margin=cost_margin,
            price_bias_margin=price_margin,
            cost_gap=cost_gap,
            price_gap=price_gap,
            cost_ok=cost_gap <= checks.se_multiple * fine.cost_se + cost_margin,
            price_ok=price_gap <= checks.se_multiple * fine.price_se + price_margin,
        )
        if not (comparison.cost_ok and comparison.price_ok):
            logger.warning(
                f"Monte-Carlo mismatch at x0={x0:g}: cost gap {cost_gap:.3e}, "
                f"price gap {price_gap:.3e}"
            )
        comparisons.append(comparison)
    return comparisons


def early_bankruptcy_check(
    simulator: Simulator, x0: float, checks: ChecksConfig, points: int | None = None
) -> EarlyBankruptcyReport:
    """Declaring bankruptcy at some x' in (x0, x*) must never beat the solver cost."""
    pr = simulator.params
    count = checks.early_bankruptcy_points if points is None else points
    levels = np.linspace(x0, pr.x_star, count + 2)[1:-1]
    entries = []
    passed = True
    for level in levels:
        report = _simulate(simulator, x0, absorb_at=float(level))
        allowed = checks.se_multiple * report.cost_se + report.truncation_bias_bound + checks.tol_sim
        margin = report.cost_mean - report.solver_V
        passed &= margin >= -allowed
        entries.append(
            EarlyBankruptcyEntry(
                x_early=float(level), cost=report.cost_mean, solver_V=report.solver_V, margin=margin
            )
        )
    return EarlyBankruptcyReport(x0=x0, entries=entries, passed=passed)


def closed_loop_asymptote_check(simulator: DeterministicSimulator) -> ClosedLoopReport:
    """Closed loops between consecutive breakpoints settle on the upper one;
    above the first breakpoint they reach x* in finite time."""
    pr = simulator.params
    points = simulator.equilibrium.breakpoints
    entries = []
    if points:
        report = simulator.run(x0=0.5 * (points[0] + pr.x_star))
        entries.append(
            ClosedLoopEntry(
                x0=report.x0,
                expected="bankrupt",
                target=pr.x_star,
                exit_time=report.exit_time,
                reached=report.bankrupt_fraction == 1.0 and report.exit_time is not None,
            )
        )
    for upper, lower in zip(points, points[1:], strict=False):
        report = simulator.run(x0=0.5 * (upper + lower))
        entries.append(
            ClosedLoopEntry(
                x0=report.x0,
                expected="settle",
                target=upper,
                exit_time=report.exit_time,
                reached=report.target == upper
                and report.bankrupt_fraction == 0.0
                and not report.inconclusive,
            )
        )
    missed = [entry.x0 for entry in entries if not entry.reached]
    if missed:
        logger.warning(f"Closed loops from {missed} miss their asymptote")
    return ClosedLoopReport(entries=entries, passed=not missed)

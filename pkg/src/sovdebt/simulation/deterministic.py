"""Closed-loop evaluation of a deterministic equilibrium.

Integrates dx/dt = H_xi(x, V*'(x), p*(x)) together with the discounted cost,
the accumulated lender discount A(t) = int (r + lambda + v) and the bond price
integral. A trajectory either reaches x* in finite time or settles on the
breakpoint above x0, where the cost and price are closed with the
constant-strategy tails e^{-rT} W(x_k) and e^{-A(T)} p_c(x_k). A trajectory
still approaching its breakpoint at the horizon is closed with V*(x(T)) and
p*(x(T)).
"""

import logging
import math
from typing import Any

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import solve_ivp

from ..constant import ConstantStrategies
from ..deterministic.equilibrium import PiecewiseEquilibrium
from ..errors import SimulationError
from ..models.config import SimConfig
from ..models.results import SimulationReport

logger = logging.getLogger(__name__)

# distance below a breakpoint at which the trajectory counts as settled
SETTLE_GAP = 1e-9
# a trajectory still short of its breakpoint at the horizon must be this close
ASYMPTOTE_TOL = 1e-4


class DeterministicSimulator:
    def __init__(
        self,
        equilibrium: PiecewiseEquilibrium,
        sim: SimConfig,
        rtol: float = 1e-10,
        atol: float = 1e-12,
    ):
        self.equilibrium = equilibrium
        self.params = equilibrium.params
        self.constants = ConstantStrategies(self.params, equilibrium.hamiltonian.costs)
        self.sim = sim
        self.rtol = rtol
        self.atol = atol

    def _rhs(self, t: float, y: NDArray[np.float64]) -> list[float]:
        pr = self.params
        costs = self.equilibrium.hamiltonian.costs
        x = min(max(y[0], 0.0), pr.x_star)
        u, v = self.equilibrium.policy(x)
        drift = self.equilibrium.drift(x)
        running = float(costs.L.value(u)) + float(costs.c.value(v))
        return [
            drift,
            math.exp(-pr.r * t) * running,
            pr.r + pr.lam + v,
            (pr.r + pr.lam) * math.exp(-y[2]),
        ]

    def run(self, x0: float | None = None, absorb_at: float | None = None) -> SimulationReport:
        """Cost and price of the closed loop from x0.

        Args:
            x0: Initial debt ratio, defaults to the configured one (or x*/2)
            absorb_at: Declare bankruptcy (cost B, controls off) on reaching this
                level instead of x*
        """
        pr = self.params
        eq = self.equilibrium
        start = self.sim.x0 if x0 is None else x0
        if start is None:
            start = pr.x_star / 2.0
        barrier = pr.x_star if absorb_at is None else absorb_at
        horizon = self.sim.horizon_for(pr.r)
        base: dict[str, Any] = {
            "regime": "det",
            "x0": start,
            "solver_V": float(eq.value(start)),
            "solver_p": float(eq.price(start)),
            "cost_se": 0.0,
            "price_se": 0.0,
            "truncation_bias_bound": math.exp(-pr.r * horizon) * pr.B,
            "horizon": horizon,
            "dt": None,
            "n_paths": 1,
        }
        if start >= barrier:
            return SimulationReport(
                cost_mean=pr.B,
                price_mean=pr.theta_star,
                bankrupt_fraction=1.0,
                zero_fraction=0.0,
                exit_time=0.0,
                **base,
            )
        if start <= 0:
            return SimulationReport(
                cost_mean=0.0, price_mean=1.0, bankrupt_fraction=0.0, zero_fraction=1.0, **base
            )

        target = eq.target_breakpoint(start)
        if target is not None and target < barrier and target - start <= SETTLE_GAP * pr.x_star:
            return self._settled(start, target, 0.0, np.array([start, 0.0, 0.0, 0.0]), base)

        def bankrupt(_t: float, y: NDArray[np.float64]) -> float:
            return y[0] - barrier

        bankrupt.terminal = True  # type: ignore[attr-defined]
        bankrupt.direction = 1  # type: ignore[attr-defined]
        events: list[Any] = [bankrupt]
        if target is not None and target < barrier:
            level = target - SETTLE_GAP * pr.x_star

            def settled(_t: float, y: NDArray[np.float64]) -> float:
                return y[0] - level

            settled.terminal = True  # type: ignore[attr-defined]
            settled.direction = 1  # type: ignore[attr-defined]
            events.append(settled)

        solution = solve_ivp(
            self._rhs,
            (0.0, horizon),
            [start, 0.0, 0.0, 0.0],
            method="RK45",
            rtol=self.rtol,
            atol=self.atol,
            events=events,
        )
        if solution.status == -1:
            raise SimulationError(f"Closed loop from x0={start:g} failed: {solution.message}")
        t_end = float(solution.t[-1])
        y_end = solution.y[:, -1]

        if len(solution.t_events[0]):
            cost = y_end[1] + math.exp(-pr.r * t_end) * pr.B
            price = y_end[3] + math.exp(-y_end[2]) * pr.theta_star
            logger.info(f"x0={start:g}: bankruptcy at t={t_end:.4f}")
            return SimulationReport(
                cost_mean=cost,
                price_mean=price,
                bankrupt_fraction=1.0,
                zero_fraction=0.0,
                exit_time=t_end,
                **base,
            )
        if len(events) > 1 and len(solution.t_events[1]):
            assert target is not None
            return self._settled(start, target, t_end, y_end, base)

        # close with the equilibrium continuation from x(T)
        x_end = min(max(float(y_end[0]), 0.0), pr.x_star)
        cost = y_end[1] + math.exp(-pr.r * t_end) * float(eq.value(x_end))
        price = y_end[3] + math.exp(-y_end[2]) * float(eq.price(x_end))
        converged = target is not None and abs(target - x_end) <= ASYMPTOTE_TOL * pr.x_star
        if not converged:
            logger.warning(
                f"x0={start:g}: no exit within horizon {horizon:.1f} (x(T)={x_end:.6g})"
            )
        return SimulationReport(
            cost_mean=cost,
            price_mean=price,
            bankrupt_fraction=0.0,
            zero_fraction=0.0,
            target=target,
            exit_time=t_end if converged else None,
            inconclusive=not converged,
            **base,
        )

    def _settled(
        self, start: float, target: float, t_end: float, y_end: NDArray[np.float64], base: dict[str, Any]
    ) -> SimulationReport:
        pr = self.params
        table = self.constants.profile(target)
        cost = y_end[1] + math.exp(-pr.r * t_end) * float(table.w[0])
        price = y_end[3] + math.exp(-y_end[2]) * float(table.p_c[0])
        logger.info(f"x0={start:g}: settles on breakpoint {target:.6g} at t={t_end:.4f}")
        return SimulationReport(
            cost_mean=cost,
            price_mean=price,
            bankrupt_fraction=0.0,
            zero_fraction=0.0,
            target=target,
            exit_time=t_end,
            **base,
        )

"""Monte-Carlo evaluation of the stochastic feedback policy.

Euler-Maruyama on

    dx = [((lambda+r)/p(x) - lambda + sigma^2 - mu - v(x)) x - u(x)/p(x)] dt - sigma x dW,

with u, v recomputed from the interpolated slope V' and price p. Paths are
absorbed at x* (cost e^{-rT} B, lender payoff theta(x*)) and at 0 (no further
cost, the bond then pays its coupon and principal in full). Exit times inside
a step are located by linear interpolation.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import logging
import math
from typing import Any

import numpy as np
from numpy.typing import NDArray

from ..core.hamiltonian import Hamiltonian
from ..errors import SimulationError
from ..models.config import SimConfig
from ..models.results import SimulationReport
from ..stochastic.equilibrium import GridSolution

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BlockTotals:
    """Per-block sums, reduced in block order"""

    count: int
    cost_sum: float
    cost_sq: float
    price_sum: float
    price_sq: float
    bankrupt: int
    zero: int


class StochasticSimulator:
    """Simulates the closed loop of a converged grid solution"""

    def __init__(self, solution: GridSolution, hamiltonian: Hamiltonian, sim: SimConfig):
        self.solution = solution
        self.hamiltonian = hamiltonian
        self.params = hamiltonian.params
        self.sim = sim
        self.traces: NDArray[np.float64] | None = None

    def controls(self, x: NDArray[np.float64]) -> tuple[NDArray[np.float64], ...]:
        """(u, v, p) at debt ratios x from the interpolated V' and p"""
        xs = self.solution.xs
        slope = np.interp(x, xs, self.solution.V_prime)
        p = np.interp(x, xs, self.solution.p)
        u = np.asarray(self.hamiltonian.u_star(slope, p), dtype=float)
        v = np.asarray(self.hamiltonian.v_star(x, slope), dtype=float)
        return u, v, p

    def _block(
        self,
        seed: np.random.SeedSequence,
        n: int,
        x0: float,
        dt: float,
        horizon: float,
        barrier: float,
        keep_traces: int,
    ) -> tuple[BlockTotals, NDArray[np.float64] | None]:
        pr = self.params
        costs = self.hamiltonian.costs
        rng = np.random.default_rng(seed)
        steps = int(math.ceil(horizon / dt))
        theta_star = pr.theta_star
        discount_rate = pr.r + pr.lam

        x = np.full(n, x0)
        cost = np.zeros(n)
        price = np.zeros(n)
        accrued = np.zeros(n)
        alive = np.ones(n, dtype=bool)
        bankrupt = np.zeros(n, dtype=bool)
        zero = np.zeros(n, dtype=bool)
        traces = np.full((keep_traces, steps + 1), np.nan) if keep_traces else None
        if traces is not None:
            traces[:, 0] = x0

        sqrt_dt = math.sqrt(dt)
        for step in range(steps):
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            t = step * dt
            xa = x[idx]
            # path i and path i + n//2 share mirrored increments
            if self.sim.antithetic:
                draws = rng.standard_normal((n + 1) // 2)
                noise = np.concatenate((draws[: n // 2], -draws[: n // 2], draws[n // 2 :]))[idx]
            else:
                noise = rng.standard_normal(n)[idx]
            u, v, p = self.controls(xa)
            drift = ((pr.lam + pr.r) / p - pr.lam + pr.sigma**2 - pr.mu - v) * xa - u / p
            x_new = xa + drift * dt - pr.sigma * xa * sqrt_dt * noise

            hit_top = x_new >= barrier
            hit_zero = x_new <= 0.0
            frac = np.ones_like(xa)
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(hit_top, (barrier - xa) / (x_new - xa), frac)
                frac = np.where(hit_zero, xa / (xa - x_new), frac)
            frac = np.clip(np.nan_to_num(frac, nan=1.0), 0.0, 1.0)

            running = np.asarray(costs.L.value(u)) + np.asarray(costs.c.value(v))
            cost[idx] += math.exp(-pr.r * t) * running * frac * dt
            price[idx] += discount_rate * np.exp(-accrued[idx]) * frac * dt
            accrued[idx] += (discount_rate + v) * frac * dt
            exit_time = t + frac * dt

            top = idx[hit_top]
            cost[top] += np.exp(-pr.r * exit_time[hit_top]) * pr.B
            price[top] += np.exp(-accrued[top]) * theta_star
            bankrupt[top] = True

            bottom = idx[hit_zero & ~hit_top]
            price[bottom] += np.exp(-accrued[bottom])
            zero[bottom] = True

            x[idx] = np.clip(x_new, 0.0, barrier)
            alive[idx[hit_top | hit_zero]] = False
            if not np.all(np.isfinite(x_new)):
                raise SimulationError(f"Non-finite debt ratio at t={t:g} (x0={x0:g})")
            if traces is not None:
                traces[:, step + 1] = np.where(alive[:keep_traces], x[:keep_traces], np.nan)

        if not (np.all(np.isfinite(cost)) and np.all(np.isfinite(price))):
            raise SimulationError(f"Non-finite cost or price along simulated paths (x0={x0:g})")
        if self.sim.antithetic and n > 1:
            pairs = n // 2
            cost_s = 0.5 * (cost[:pairs] + cost[pairs : 2 * pairs])
            price_s = 0.5 * (price[:pairs] + price[pairs : 2 * pairs])
            if n % 2:
                cost_s = np.append(cost_s, cost[-1])
                price_s = np.append(price_s, price[-1])
        else:
            cost_s, price_s = cost, price
        totals = BlockTotals(
            count=int(cost_s.size),
            cost_sum=float(np.sum(cost_s)),
            cost_sq=float(np.sum(cost_s**2)),
            price_sum=float(np.sum(price_s)),
            price_sq=float(np.sum(price_s**2)),
            bankrupt=int(np.sum(bankrupt)),
            zero=int(np.sum(zero)),
        )
        return totals, traces

    ####################
    # PUBLIC INTERFACE #
    ####################

    def run(
        self,
        x0: float | None = None,
        dt: float | None = None,
        absorb_at: float | None = None,
        n_paths: int | None = None,
    ) -> SimulationReport:
        """Estimate cost and bond price from x0.

        Args:
            x0: Initial debt ratio, defaults to the configured one (or x*/2)
            dt: Time step, defaults to the configured one
            absorb_at: Declare bankruptcy (cost B, controls off) on reaching this
                level instead of x*
            n_paths: Path count, defaults to the configured one
        """
        pr = self.params
        sim = self.sim
        start = sim.x0 if x0 is None else x0
        if start is None:
            start = pr.x_star / 2.0
        step = sim.dt if dt is None else dt
        paths = sim.n_paths if n_paths is None else n_paths
        horizon = sim.horizon_for(pr.r)
        barrier = pr.x_star if absorb_at is None else absorb_at
        bias = math.exp(-pr.r * horizon) * pr.B

        report: dict[str, Any] = {
            "regime": "stoch",
            "x0": start,
            "solver_V": self.solution.value_at(min(start, pr.x_star)),
            "solver_p": self.solution.price_at(min(start, pr.x_star)),
            "truncation_bias_bound": bias,
            "horizon": horizon,
            "dt": step,
            "n_paths": paths,
            "seed": sim.seed,
        }
        if start >= barrier:
            return SimulationReport(
                cost_mean=pr.B,
                cost_se=0.0,
                price_mean=pr.theta_star,
                price_se=0.0,
                bankrupt_fraction=1.0,
                zero_fraction=0.0,
                **report,
            )
        if start <= 0:
            return SimulationReport(
                cost_mean=0.0,
                cost_se=0.0,
                price_mean=1.0,
                price_se=0.0,
                bankrupt_fraction=0.0,
                zero_fraction=1.0,
                **report,
            )

        sizes = [sim.block_size] * (paths // sim.block_size)
        if paths % sim.block_size:
            sizes.append(paths % sim.block_size)
        seeds = np.random.SeedSequence(sim.seed).spawn(len(sizes))
        keep = min(sim.trace_paths, sizes[0])

        def job(index: int) -> tuple[BlockTotals, NDArray[np.float64] | None]:
            return self._block(
                seeds[index], sizes[index], start, step, horizon, barrier,
                keep if index == 0 else 0,
            )

        logger.info(
            f"Simulating {paths} paths from x0={start:g} in {len(sizes)} blocks "
            f"(dt={step:g}, T={horizon:.1f})"
        )
        if sim.workers > 1:
            with ThreadPoolExecutor(max_workers=sim.workers) as pool:
                results = list(pool.map(job, range(len(sizes))))
        else:
            results = [job(index) for index in range(len(sizes))]
        self.traces = results[0][1]

        count = sum(block.count for block, _ in results)
        cost_mean = sum(block.cost_sum for block, _ in results) / count
        price_mean = sum(block.price_sum for block, _ in results) / count
        cost_var = sum(block.cost_sq for block, _ in results) / count - cost_mean**2
        price_var = sum(block.price_sq for block, _ in results) / count - price_mean**2
        scale = math.sqrt(count / (count - 1)) if count > 1 else 0.0
        return SimulationReport(
            cost_mean=cost_mean,
            cost_se=math.sqrt(max(cost_var, 0.0) / count) * scale,
            price_mean=price_mean,
            price_se=math.sqrt(max(price_var, 0.0) / count) * scale,
            bankrupt_fraction=sum(block.bankrupt for block, _ in results) / paths,
            zero_fraction=sum(block.zero for block, _ in results) / paths,
            **report,
        )

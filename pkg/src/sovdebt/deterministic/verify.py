"""Dynamic-programming check of a deterministic equilibrium.

With the price frozen at p*, no admissible control started at x0 may cost less
than V*(x0). Random piecewise-constant controls are run over a finite horizon
and closed with the continuation value e^{-rT} V*(x(T)).
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import solve_ivp

from ..constant import ConstantStrategies
from ..errors import IntegrationError
from ..models.config import ChecksConfig
from .equilibrium import PiecewiseEquilibrium

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControlRun:
    """Cost of one open-loop control from x0"""

    label: str
    cost: float
    exit: str


@dataclass
class DynamicProgrammingReport:
    x0: float
    value: float
    runs: list[ControlRun] = field(default_factory=list)
    constant_cost: float = math.inf
    tolerance: float = 0.0

    @property
    def min_cost(self) -> float:
        return min((run.cost for run in self.runs), default=math.inf)

    @property
    def worst_gap(self) -> float:
        """Largest amount by which a control beats V*(x0); negative is good."""
        return self.value - self.min_cost

    @property
    def counterexamples(self) -> list[ControlRun]:
        return [run for run in self.runs if run.cost < self.value - self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.counterexamples and self.constant_cost >= self.value - self.tolerance


def run_open_loop(
    equilibrium: PiecewiseEquilibrium,
    x0: float,
    u: NDArray[np.float64],
    v: NDArray[np.float64],
    horizon: float,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> tuple[float, str]:
    """Discounted cost of piecewise-constant (u, v) on equal pieces of [0, horizon].

    Returns:
        The cost including the exit or continuation term, and the exit kind
        (``bankrupt``, ``zero`` or ``horizon``)
    """
    pr = equilibrium.params
    costs = equilibrium.hamiltonian.costs
    pieces = len(u)
    width = horizon / pieces
    x, cost, t = x0, 0.0, 0.0
    if x0 >= pr.x_star:
        return pr.B, "bankrupt"
    if x0 <= 0:
        return 0.0, "zero"

    def bankrupt(_t: float, y: NDArray[np.float64]) -> float:
        return y[0] - pr.x_star

    def paid_off(_t: float, y: NDArray[np.float64]) -> float:
        return y[0]

    bankrupt.terminal = True  # type: ignore[attr-defined]
    bankrupt.direction = 1  # type: ignore[attr-defined]
    paid_off.terminal = True  # type: ignore[attr-defined]
    paid_off.direction = -1  # type: ignore[attr-defined]

    for k in range(pieces):
        uk, vk = float(u[k]), float(v[k])
        running = float(costs.L.value(uk)) + float(costs.c.value(vk))

        def rhs(s: float, y: NDArray[np.float64], uk: float = uk, vk: float = vk) -> list[float]:
            xs = min(max(y[0], 0.0), pr.x_star)
            p = float(equilibrium.price(xs))
            dx = ((pr.lam + pr.r) / p - pr.lam - pr.mu - vk) * xs - uk / p
            return [dx, math.exp(-pr.r * s) * running]

        solution = solve_ivp(
            rhs,
            (t, t + width),
            [x, cost],
            method="RK45",
            rtol=rtol,
            atol=atol,
            events=[bankrupt, paid_off],
        )
        if solution.status == -1:
            raise IntegrationError(f"Open-loop control from x0={x0:g} failed: {solution.message}")
        t = float(solution.t[-1])
        x, cost = float(solution.y[0, -1]), float(solution.y[1, -1])
        if len(solution.t_events[0]):
            return cost + math.exp(-pr.r * t) * pr.B, "bankrupt"
        if len(solution.t_events[1]):
            return cost, "zero"
    return cost + math.exp(-pr.r * t) * float(equilibrium.value(x)), "horizon"


def verify_dynamic_programming(
    equilibrium: PiecewiseEquilibrium,
    x0: float,
    checks: ChecksConfig,
    n_controls: int | None = None,
    rng: np.random.Generator | None = None,
) -> DynamicProgrammingReport:
    """Check that random admissible controls never beat V*(x0) by more than tol_dp."""
    rng = rng or np.random.default_rng(checks.seed)
    count = checks.n_controls if n_controls is None else n_controls
    pieces = checks.control_pieces
    report = DynamicProgrammingReport(
        x0=x0, value=float(equilibrium.value(x0)), tolerance=checks.tol_dp
    )

    zero = np.zeros(pieces)
    cost, exit_kind = run_open_loop(equilibrium, x0, zero, zero, checks.control_horizon)
    report.runs.append(ControlRun(label="zero", cost=cost, exit=exit_kind))

    for index in range(count):
        u = rng.uniform(0.0, checks.dp_u_cap, size=pieces)
        v = rng.uniform(0.0, checks.dp_v_cap, size=pieces)
        cost, exit_kind = run_open_loop(equilibrium, x0, u, v, checks.control_horizon)
        report.runs.append(ControlRun(label=f"random-{index}", cost=cost, exit=exit_kind))

    report.constant_cost = _constant_cost(equilibrium, x0)
    if report.counterexamples:
        worst = min(report.counterexamples, key=lambda run: run.cost)
        logger.error(
            f"Control {worst.label} from x0={x0:g} costs {worst.cost:.8f} < V*={report.value:.8f}"
        )
    else:
        logger.info(
            f"x0={x0:g}: {len(report.runs)} controls, best cost {report.min_cost:.6f} "
            f">= V*={report.value:.6f}"
        )
    return report


def _constant_cost(equilibrium: PiecewiseEquilibrium, x0: float) -> float:
    constants = ConstantStrategies(equilibrium.params, equilibrium.hamiltonian.costs)
    table = constants.profile(x0)
    return float(table.w[0])

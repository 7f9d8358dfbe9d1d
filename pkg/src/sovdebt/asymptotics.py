"""Behavior of the equilibrium cost as the bankruptcy threshold grows.

With theta(s)*s unbounded the cost at a fixed debt ratio decays to zero as x*
grows (the debt can be rolled over indefinitely). When theta(s)*s stays below
R the cost stays above an explicit bound at eligible probes. A sweep over x*
solves each threshold independently and classifies the observed trend.
"""

from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
import logging
import math
from typing import Literal

import numpy as np

from .constant import ConstantStrategies
from .core.costs import CostModel
from .core.hamiltonian import Hamiltonian
from .deterministic.equilibrium import DeterministicSolver, PiecewiseEquilibrium
from .errors import SolverError
from .models.config import RunConfig
from .models.params import ModelParams
from .models.results import DevaluationReport, EligibilityRecord, SweepResult
from .stochastic.equilibrium import GridSolution, StochasticSolver

logger = logging.getLogger(__name__)

Regime = Literal["stoch", "det"]
TrendClass = Literal["ponzi", "non-ponzi", "inconclusive"]


####################
# CLOSED-FORM BOUNDS #
####################


def eligibility_threshold(params: ModelParams, costs: CostModel, regime: Regime) -> float:
    """Smallest probe ratio at which the non-Ponzi lower bound is asserted.

    Uses C1 = sup theta(s)*s; infinite when C1 is infinite or, for the
    deterministic regime, when L'(0) or c'(0) vanishes.
    """
    pr = params
    c1 = pr.theta.sup_product
    if not math.isfinite(c1):
        return math.inf
    if regime == "stoch":
        rate = pr.r + pr.v_max
        return 2.0 * (rate + (1.0 + c1 * rate) * (pr.r - pr.mu)) / (pr.r * (pr.r - pr.mu))
    l0 = costs.L.slope_at_zero
    c0 = costs.c.slope_at_zero
    if l0 <= 0 or c0 <= 0:
        return math.inf
    terms = (
        4.0,
        4.0 * pr.B / l0,
        4.0 * c1 * pr.B / c0,
        2.0 * c1 * costs.c.inverse(pr.r * pr.B),
    )
    return max(terms) / (pr.r - pr.mu)


def eligibility(
    params: ModelParams, costs: CostModel, probe_x: float, regime: Regime
) -> EligibilityRecord:
    threshold = eligibility_threshold(params, costs, regime)
    margin = probe_x - threshold
    return EligibilityRecord(
        regime=regime,
        probe_x=probe_x,
        threshold=threshold,
        margin=margin,
        eligible=margin >= 0,
        sup_product=params.theta.sup_product,
    )


def lower_bound(params: ModelParams, probe_x: float, regime: Regime) -> float | None:
    """Non-Ponzi lower bound on V(probe_x, x*); ``None`` when theta(s)*s is unbounded."""
    pr = params
    recovery = pr.theta.limsup_product
    if not math.isfinite(recovery):
        return None
    if regime == "stoch":
        return pr.r * pr.B / (2.0 * (2.0 * pr.r + pr.v_max - pr.mu))
    if probe_x <= recovery:
        return 0.0
    return pr.B * (1.0 - recovery / probe_x) ** (pr.r / (pr.r + pr.lam))


def classify_trend(
    values: Sequence[float | None],
    bound: float | None,
    ratio_threshold: float,
    bound_slack: float,
) -> TrendClass:
    """Ponzi when strictly decreasing with last < ratio*first; non-Ponzi when every
    value clears the bound less the relative slack. Gaps make a trend inconclusive.
    """
    if not values or any(value is None for value in values):
        return "inconclusive"
    series = [float(value) for value in values if value is not None]
    decreasing = all(b < a for a, b in zip(series, series[1:], strict=False))
    if len(series) > 1 and decreasing and series[-1] < ratio_threshold * series[0]:
        return "ponzi"
    if bound is not None and all(value >= bound * (1.0 - bound_slack) for value in series):
        return "non-ponzi"
    return "inconclusive"


#########
# SWEEP #
#########


class ThresholdSweep:
    """Solves one parameter set at every threshold of a grid and reads V at a probe"""

    def __init__(self, config: RunConfig):
        self.config = config
        self.params = config.model
        self.costs = CostModel.from_config(config.costs, config.model.v_max)

    def value_at_probe(self, x_star: float, probe_x: float, regime: Regime) -> float:
        params = self.params.with_threshold(x_star)
        if probe_x >= x_star:
            return params.B
        hamiltonian = Hamiltonian.from_config(params, self.config.costs, self.config.solver)
        if regime == "stoch":
            params.require_stochastic()
            solution = StochasticSolver(hamiltonian, self.config.solver).continuation_to_zero()
            return solution.value_at(probe_x)
        params.require_deterministic()
        constants = ConstantStrategies(params, hamiltonian.costs, tol=self.config.solver.tol_root)
        equilibrium = DeterministicSolver(hamiltonian, constants, self.config.solver).build_equilibrium()
        return float(equilibrium.value(probe_x))

    def sweep(
        self,
        xstar_grid: Sequence[float] | None = None,
        probe_x: float | None = None,
        regime: Regime | None = None,
    ) -> SweepResult:
        """V(probe_x, x*) across the grid, classified into a Ponzi or non-Ponzi trend.

        A threshold whose solve fails leaves a gap (``None``) and a failure note;
        the remaining thresholds still run.
        """
        cfg = self.config.sweep
        grid = sorted(xstar_grid or cfg.xstar_grid)
        probe = cfg.probe_x if probe_x is None else probe_x
        mode: Regime = regime or ("stoch" if self.params.is_stochastic else "det")

        def solve(x_star: float) -> float | str:
            try:
                value = self.value_at_probe(x_star, probe, mode)
            except SolverError as e:
                logger.error(f"Sweep solve at x*={x_star:g} failed: {e}", exc_info=True)
                return f"x*={x_star:g}: {e}"
            logger.info(f"x*={x_star:g}: V({probe:g}) = {value:.6g}")
            return value

        workers = self.config.solver.workers
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(solve, grid))
        else:
            outcomes = [solve(x_star) for x_star in grid]

        values: list[float | None] = [o if isinstance(o, float) else None for o in outcomes]
        failures = [o for o in outcomes if isinstance(o, str)]
        bound = lower_bound(self.params, probe, mode)
        record = eligibility(self.params.with_threshold(grid[-1]), self.costs, probe, mode)
        trend = classify_trend(values, bound, cfg.ratio_threshold, cfg.bound_slack)
        if bound is not None and not record.eligible:
            logger.warning(
                f"Probe x={probe:g} is below the eligibility threshold "
                f"{record.threshold:.4g}; the trend is compared with the bound as an observation only"
            )
        return SweepResult(
            regime=mode,
            theta_kind=self.params.theta.kind,
            xstar_grid=list(grid),
            probe_x=probe,
            V_at_probe=values,
            lower_bound=bound,
            regime_class=trend,
            eligibility=record,
            failures=failures,
            ratio_threshold=cfg.ratio_threshold,
            bound_slack=cfg.bound_slack,
        )


##############
# DEVALUATION #
##############


def devaluation_margins(
    params: ModelParams, costs: CostModel
) -> tuple[float, float, float] | None:
    """Margins of the three hypotheses under which v* cannot vanish identically.

    Returns ``None`` when L'(0) = 0 and the hypotheses are not well posed.
    """
    pr = params
    l0 = costs.L.slope_at_zero
    c0 = costs.c.slope_at_zero
    if l0 <= 0:
        return None
    threshold = pr.x_star - (l0 + pr.B * pr.r) / (l0 * (pr.r - pr.mu))
    cost = pr.B - 2.0 * (pr.r - pr.mu) * c0 / pr.r
    salvage = pr.theta_star * pr.x_star - (2.0 * (pr.r + pr.lam) * c0 / (pr.r - pr.mu)) * (
        1.0 / (pr.r * pr.B) + 1.0 / l0
    )
    return threshold, cost, salvage


def devaluation_check(
    solution: PiecewiseEquilibrium | GridSolution,
    params: ModelParams,
    costs: CostModel,
    samples: int = 2000,
) -> DevaluationReport:
    """Scan v* and assert it is somewhere positive when the hypotheses hold."""
    if isinstance(solution, GridSolution):
        v_values = solution.v_star
    else:
        xs = np.linspace(0.0, params.x_star, samples + 1)[1:-1]
        v_values = np.array([solution.policy(float(x))[1] for x in xs])
    max_v = float(np.max(v_values)) if v_values.size else 0.0

    margins = devaluation_margins(params, costs)
    if margins is None:
        return DevaluationReport(
            well_posed=False,
            margin_threshold=None,
            margin_cost=None,
            margin_salvage=None,
            hypothesis_met=False,
            max_v_star=max_v,
            asserted=False,
            passed=True,
            message="L'(0) = 0: devaluation hypotheses are not well posed",
        )
    met = all(margin > 0 for margin in margins)
    passed = not met or max_v > 0
    if not met:
        message = "hypothesis unmet; no assertion"
    elif passed:
        message = f"hypothesis met; max v* = {max_v:.4g}"
    else:
        message = "hypothesis met but v* vanishes identically"
        logger.error(message)
    return DevaluationReport(
        well_posed=True,
        margin_threshold=margins[0],
        margin_cost=margins[1],
        margin_salvage=margins[2],
        hypothesis_met=met,
        max_v_star=max_v,
        asserted=met,
        passed=passed,
        message=message,
    )

"""JSON records emitted by the CLI.

Records carry no wall-clock data so that identical inputs give byte-identical
files; timings go to the audit log instead.
"""

from typing import Literal

from pydantic import BaseModel, ConfigDict


class ResultModel(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")


class HamiltonianProbe(ResultModel):
    """Everything `eval` prints at one (x, xi, p)"""

    x: float
    xi: float
    p: float
    value: float
    grad_x: float
    grad_xi: float
    grad_p: float
    u_opt: float
    v_opt: float
    xi_sharp: float | None = None
    h_max: float | None = None


class ConstantSummary(ResultModel):
    x_c: float
    x_flat: float
    infeasible_points: int


class RungSummary(ResultModel):
    eps: float
    steps: int
    pseudo_time: float
    residual_eps: float
    residual_V: float
    residual_p: float
    consistency_V: float
    consistency_p: float
    max_slope: float


class StochasticReport(ResultModel):
    """Diagnostics of a stochastic solve"""

    grid_nodes: int
    eps: float
    residual_V: float
    residual_p: float
    consistency_V: float
    consistency_p: float
    eps_history: list[RungSummary]
    monotone_V: bool
    max_slope: float
    no_dev_band: float
    band_edge_bound: float
    band_holds: bool
    lower_barrier_c: float
    lower_barrier_gamma: float
    lower_barrier_reach: float
    lower_barrier_margin: float
    slope_peak_reach: float
    slope_peak_level: float
    slope_peak_ok: bool
    upper_barrier_margin: float | None
    extrapolation_shift: float


class ArcSummary(ResultModel):
    index: int
    x_hi: float
    x_lo: float
    stop_reason: str
    unit_price: bool
    samples: int
    residual: float
    agreement: float | None


class PreconditionSummary(ResultModel):
    w_at_threshold: float
    w_margin: float
    price_margin: float
    strict_price_bound: float
    strict_margin: float
    passed: bool


class DeterministicReport(ResultModel):
    """Breakpoints record of a deterministic solve"""

    preconditions: PreconditionSummary
    breakpoints: list[float]
    arcs: list[ArcSummary]
    x_c: float
    x_flat: float
    delta_flat: float
    breakpoint_cap: float
    residual: float
    below_w: bool
    strictly_increasing: bool
    tail_origin_value: float
    notes: list[str]


class SimulationReport(ResultModel):
    """Simulated cost and bond price from x0 against the solver values"""

    regime: Literal["stoch", "det"]
    x0: float
    cost_mean: float
    cost_se: float
    price_mean: float
    price_se: float
    solver_V: float
    solver_p: float
    bankrupt_fraction: float
    zero_fraction: float
    truncation_bias_bound: float
    horizon: float
    dt: float | None
    n_paths: int
    seed: int | None = None
    target: float | None = None
    exit_time: float | None = None
    inconclusive: bool = False


class MonteCarloComparison(ResultModel):
    x0: float
    solver_V: float
    solver_p: float
    cost_mean: float
    cost_se: float
    price_mean: float
    price_se: float
    cost_bias_margin: float
    price_bias_margin: float
    cost_gap: float
    price_gap: float
    cost_ok: bool
    price_ok: bool


class PriceCheckEntry(ResultModel):
    x0: float
    solver_p: float
    simulated_p: float
    gap: float


class PriceCheckReport(ResultModel):
    entries: list[PriceCheckEntry]
    max_gap: float
    tolerance: float
    passed: bool


class EarlyBankruptcyEntry(ResultModel):
    x_early: float
    cost: float
    solver_V: float
    margin: float


class EarlyBankruptcyReport(ResultModel):
    x0: float
    entries: list[EarlyBankruptcyEntry]
    passed: bool


class ClosedLoopEntry(ResultModel):
    x0: float
    expected: Literal["bankrupt", "settle"]
    target: float
    exit_time: float | None
    reached: bool


class ClosedLoopReport(ResultModel):
    """Where closed-loop trajectories started between breakpoints end up"""

    entries: list[ClosedLoopEntry]
    passed: bool


class DynamicProgrammingSummary(ResultModel):
    x0: float
    value: float
    controls: int
    min_cost: float
    worst_gap: float
    constant_cost: float
    counterexamples: list[str]
    passed: bool


class EligibilityRecord(ResultModel):
    """Probe-largeness inequality used by a non-Ponzi assertion"""

    regime: Literal["stoch", "det"]
    probe_x: float
    threshold: float
    margin: float
    eligible: bool
    sup_product: float


class SweepResult(ResultModel):
    regime: Literal["stoch", "det"]
    theta_kind: str
    xstar_grid: list[float]
    probe_x: float
    V_at_probe: list[float | None]
    lower_bound: float | None
    regime_class: Literal["ponzi", "non-ponzi", "inconclusive"]
    eligibility: EligibilityRecord
    failures: list[str]
    ratio_threshold: float
    bound_slack: float


class DevaluationReport(ResultModel):
    well_posed: bool
    margin_threshold: float | None
    margin_cost: float | None
    margin_salvage: float | None
    hypothesis_met: bool
    max_v_star: float
    asserted: bool
    passed: bool
    message: str


class CheckOutcome(ResultModel):
    name: str
    passed: bool
    metric: float | None = None
    detail: str = ""


class VerifySummary(ResultModel):
    regime: Literal["stoch", "det"]
    checks: list[CheckOutcome]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

import logging
import math
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel

from ..asymptotics import ThresholdSweep, devaluation_check
from ..audit.decorators import log_solver_event, solver_scope
from ..constant import ConstantStrategies
from ..core.costs import CostFunction
from ..core.hamiltonian import Hamiltonian
from ..deterministic.equilibrium import DeterministicSolver, PiecewiseEquilibrium
from ..deterministic.verify import verify_dynamic_programming
from ..models.audit import EventSubtype, EventType
from ..models.config import RunConfig, reference_config
from ..models.results import (
    ArcSummary,
    CheckOutcome,
    ConstantSummary,
    DeterministicReport,
    DevaluationReport,
    DynamicProgrammingSummary,
    HamiltonianProbe,
    PreconditionSummary,
    RungSummary,
    SimulationReport,
    StochasticReport,
    SweepResult,
    VerifySummary,
)
from ..simulation.checks import (
    closed_loop_asymptote_check,
    early_bankruptcy_check,
    monte_carlo_check,
    price_fixed_point_check,
)
from ..simulation.deterministic import DeterministicSimulator
from ..simulation.stochastic import StochasticSimulator
from ..stochastic.equilibrium import GridSolution, StochasticSolver
from ..util import write_model, write_table, write_text

logger = logging.getLogger(__name__)

# tolerance of the sampled inequality and identity checks
SAMPLE_TOL = 1e-8


class SolverLogic:
    """Runs the subcommands for one configuration and writes their outputs.

    Solutions are cached so that `simulate` and `verify` reuse one solve.
    """

    def __init__(self, config: RunConfig, out_dir: Path):
        self.config = config
        self.params = config.model
        self.out_dir = out_dir
        self.hamiltonian = Hamiltonian.from_config(config.model, config.costs, config.solver)
        self.costs = self.hamiltonian.costs
        self.constants = ConstantStrategies(self.params, self.costs, tol=config.solver.tol_root)
        self._grid_solution: GridSolution | None = None
        self._equilibrium: PiecewiseEquilibrium | None = None

    ##########
    # OUTPUT #
    ##########

    def _table(self, name: str, columns: list[str], data: list[NDArray[np.float64]]) -> None:
        if "csv" in self.config.output.formats:
            path = write_table(self.out_dir / name, columns, data)
            logger.debug(f"Wrote {path}")

    def _record(self, name: str, model: BaseModel) -> None:
        if "json" in self.config.output.formats:
            path = write_model(self.out_dir / name, model)
            logger.debug(f"Wrote {path}")

    @property
    def _profile_grid(self) -> NDArray[np.float64]:
        return np.linspace(0.0, self.params.x_star, self.config.solver.grid_nodes)

    ###############
    # SUBCOMMANDS #
    ###############

    @solver_scope(
        event_type=EventType.SOLVER_LIFECYCLE,
        end_event=EventSubtype.SOLVE_COMPLETED,
        error_event=EventSubtype.SOLVE_FAILED,
        stage="eval",
        x="x",
        xi="xi",
        p="p",
    )
    def evaluate(self, x: float, xi: float, p: float) -> HamiltonianProbe:
        """H, its gradient and the optimal controls at one point."""
        H = self.hamiltonian
        result = H.evaluate(x, xi, p)
        sharp = H.xi_sharp(x, p) if x > 0 else None
        probe = HamiltonianProbe(
            x=x,
            xi=xi,
            p=p,
            value=result.value,
            grad_x=result.grad_x,
            grad_xi=result.grad_xi,
            grad_p=result.grad_p,
            u_opt=result.u_opt,
            v_opt=result.v_opt,
            xi_sharp=sharp.xi_sharp if sharp else None,
            h_max=sharp.h_max if sharp else None,
        )
        self._record("eval.json", probe)
        return probe

    @solver_scope(
        event_type=EventType.SOLVER_LIFECYCLE,
        end_event=EventSubtype.SOLVE_COMPLETED,
        error_event=EventSubtype.SOLVE_FAILED,
        stage="constant",
    )
    def constant(self) -> ConstantSummary:
        xs = self._profile_grid
        table = self.constants.profile(xs)
        self._table(
            "constant.csv",
            ["x[ratio]", "W[utility]", "W_prime[utility/ratio]", "p_c[price]", "v_c[rate]", "u_c[fraction]"],
            [xs, table.w, table.w_prime, table.p_c, table.v_c, table.u_c],
        )
        summary = ConstantSummary(
            x_c=self.constants.x_c(),
            x_flat=self.constants.x_flat(),
            infeasible_points=int(np.sum(~table.feasible)),
        )
        self._record("constant.json", summary)
        logger.info(f"x_c={summary.x_c:.6g}, x_flat={summary.x_flat:.6g}")
        return summary

    @solver_scope(
        event_type=EventType.SOLVER_LIFECYCLE,
        start_event=EventSubtype.SOLVE_STARTED,
        end_event=EventSubtype.SOLVE_COMPLETED,
        error_event=EventSubtype.SOLVE_FAILED,
        stage="solve-stoch",
        regime="stoch",
    )
    def solve_stochastic(self) -> tuple[GridSolution, StochasticReport]:
        self.params.require_stochastic()
        solver = StochasticSolver(self.hamiltonian, self.config.solver)
        solution = solver.continuation_to_zero()
        self._grid_solution = solution
        diag = solution.diagnostics or solver.diagnostics(solution)
        report = StochasticReport(
            grid_nodes=solution.grid.n,
            eps=solution.eps,
            residual_V=solution.residual_V,
            residual_p=solution.residual_p,
            consistency_V=solution.consistency_V,
            consistency_p=solution.consistency_p,
            eps_history=[
                RungSummary(
                    eps=rec.eps,
                    steps=rec.steps,
                    pseudo_time=rec.pseudo_time,
                    residual_eps=rec.residual_eps,
                    residual_V=rec.residual_V,
                    residual_p=rec.residual_p,
                    consistency_V=rec.consistency_V,
                    consistency_p=rec.consistency_p,
                    max_slope=rec.max_slope,
                )
                for rec in solution.eps_history
            ],
            monotone_V=diag.monotone_V,
            max_slope=diag.max_slope,
            no_dev_band=diag.band_edge,
            band_edge_bound=diag.band_edge_bound,
            band_holds=diag.band_holds,
            lower_barrier_c=diag.lower_barrier_c,
            lower_barrier_gamma=diag.lower_barrier_gamma,
            lower_barrier_reach=diag.lower_barrier_reach,
            lower_barrier_margin=diag.lower_barrier_margin,
            slope_peak_reach=diag.slope_peak_reach,
            slope_peak_level=diag.slope_peak_level,
            slope_peak_ok=diag.slope_peak_ok,
            upper_barrier_margin=diag.upper_barrier_margin,
            extrapolation_shift=float(np.max(np.abs(solution.V_limit - solution.V))),
        )
        self._table(
            "stoch_solution.csv",
            [
                "x[ratio]",
                "V[utility]",
                "p[price]",
                "u[fraction]",
                "v[rate]",
                "V_prime[utility/ratio]",
                "V_limit[utility]",
            ],
            [
                solution.xs,
                solution.V,
                solution.p,
                solution.u_star,
                solution.v_star,
                solution.V_prime,
                solution.V_limit,
            ],
        )
        self._record("stoch_report.json", report)
        return solution, report

    @solver_scope(
        event_type=EventType.SOLVER_LIFECYCLE,
        start_event=EventSubtype.SOLVE_STARTED,
        end_event=EventSubtype.SOLVE_COMPLETED,
        error_event=EventSubtype.SOLVE_FAILED,
        stage="solve-det",
        regime="det",
    )
    def solve_deterministic(self) -> tuple[PiecewiseEquilibrium, DeterministicReport]:
        self.params.require_deterministic()
        solver = DeterministicSolver(self.hamiltonian, self.constants, self.config.solver)
        pre = solver.check_preconditions()
        equilibrium = solver.build_equilibrium()
        self._equilibrium = equilibrium

        xs = self._profile_grid[1:]
        V = np.asarray(equilibrium.value(xs))
        p = np.asarray(equilibrium.price(xs))
        W = np.asarray(self.constants.profile(xs).w)
        policy = np.array([equilibrium.policy(float(x)) for x in xs])
        report = DeterministicReport(
            preconditions=PreconditionSummary(
                w_at_threshold=pre.w_at_threshold,
                w_margin=pre.w_margin,
                price_margin=pre.price_margin,
                strict_price_bound=pre.strict_price_bound,
                strict_margin=pre.strict_margin,
                passed=pre.passed,
            ),
            breakpoints=equilibrium.breakpoints,
            arcs=[
                ArcSummary(
                    index=index,
                    x_hi=arc.x_hi,
                    x_lo=arc.x_lo,
                    stop_reason=arc.stop_reason.value,
                    unit_price=arc.unit_price,
                    samples=int(arc.x.size),
                    residual=arc.residual,
                    agreement=arc.agreement,
                )
                for index, arc in enumerate(equilibrium.arcs)
            ],
            x_c=self.constants.x_c(),
            x_flat=equilibrium.x_flat,
            delta_flat=equilibrium.delta_flat,
            breakpoint_cap=equilibrium.breakpoint_cap,
            residual=equilibrium.residual,
            below_w=bool(np.all(V <= W + SAMPLE_TOL)),
            strictly_increasing=bool(np.all(np.diff(V) > 0)),
            tail_origin_value=equilibrium.tail_origin_value,
            notes=equilibrium.notes,
        )
        for index, arc in enumerate(equilibrium.arcs):
            self._table(
                f"det_arc_{index}.csv",
                ["x[ratio]", "V[utility]", "p[price]", "V_prime[utility/ratio]", "p_prime[price/ratio]"],
                [arc.x, arc.Z, arc.q, arc.Z_prime, arc.q_prime],
            )
        self._table(
            "det_profile.csv",
            ["x[ratio]", "V[utility]", "p[price]", "u[fraction]", "v[rate]", "W[utility]"],
            [xs, V, p, policy[:, 0], policy[:, 1], W],
        )
        self._record("det_breakpoints.json", report)
        return equilibrium, report

    def _grid(self) -> GridSolution:
        if self._grid_solution is None:
            self._grid_solution, _ = self.solve_stochastic()
        return self._grid_solution

    def _det(self) -> PiecewiseEquilibrium:
        if self._equilibrium is None:
            self._equilibrium, _ = self.solve_deterministic()
        return self._equilibrium

    @solver_scope(
        event_type=EventType.SIMULATION,
        start_event=EventSubtype.SIMULATION_STARTED,
        end_event=EventSubtype.SIMULATION_COMPLETED,
        error_event=EventSubtype.SIMULATION_FAILED,
        stage="simulate",
    )
    def simulate(self) -> SimulationReport:
        """Simulate the closed loop of the configured regime from sim.x0."""
        if self.params.is_stochastic:
            simulator = StochasticSimulator(self._grid(), self.hamiltonian, self.config.sim)
            report = simulator.run()
            if simulator.traces is not None:
                steps = simulator.traces.shape[1]
                t = np.arange(steps) * (report.dt or 0.0)
                self._table(
                    "simulation_traces.csv",
                    ["t[time]"] + [f"x_{k}[ratio]" for k in range(simulator.traces.shape[0])],
                    [t, *simulator.traces],
                )
        else:
            report = DeterministicSimulator(self._det(), self.config.sim).run()
        self._record("simulation.json", report)
        logger.info(
            f"x0={report.x0:g}: cost {report.cost_mean:.6g} (solver {report.solver_V:.6g}), "
            f"price {report.price_mean:.6g} (solver {report.solver_p:.6g})"
        )
        return report

    @solver_scope(
        event_type=EventType.SOLVER_LIFECYCLE,
        start_event=EventSubtype.SOLVE_STARTED,
        end_event=EventSubtype.SOLVE_COMPLETED,
        error_event=EventSubtype.SOLVE_FAILED,
        stage="sweep",
    )
    def sweep(self) -> SweepResult:
        result = ThresholdSweep(self.config).sweep()
        bound = math.nan if result.lower_bound is None else result.lower_bound
        self._table(
            "sweep.csv",
            ["x_star[ratio]", "V_probe[utility]", "bound[utility]"],
            [
                np.asarray(result.xstar_grid),
                np.array([math.nan if v is None else v for v in result.V_at_probe]),
                np.full(len(result.xstar_grid), bound),
            ],
        )
        self._record("sweep.json", result)
        logger.info(f"Sweep over x*={result.xstar_grid}: {result.regime_class}")
        return result

    ##########
    # VERIFY #
    ##########

    def _outcome(self, name: str, passed: bool, metric: float | None = None, detail: str = "") -> CheckOutcome:
        log_solver_event(
            EventType.VERIFICATION,
            EventSubtype.CHECK_PASSED if passed else EventSubtype.CHECK_FAILED,
            success=passed,
            check=name,
            metric=metric,
        )
        level = logging.INFO if passed else logging.ERROR
        logger.log(level, f"{name}: {'pass' if passed else 'FAIL'} {detail}")
        return CheckOutcome(name=name, passed=passed, metric=metric, detail=detail)

    def check_hamiltonian(self) -> CheckOutcome:
        """Sampled bounds lower <= H <= upper for xi >= 0 and H(x, 0, p) = 0."""
        pr = self.params
        rng = np.random.default_rng(self.config.checks.seed)
        n = self.config.checks.hamiltonian_samples
        x = rng.uniform(0.0, pr.x_star, n)
        xi = rng.uniform(0.0, 5.0, n)
        p = rng.uniform(max(pr.theta_min, 1e-3), 1.0, n)
        H = self.hamiltonian
        value = np.asarray(H.value(x, xi, p))
        above = np.max(value - np.asarray(H.upper_bound(x, xi, p)))
        floor = np.asarray(H.lower_bound(x, xi, p))
        # the lower bound is -inf when v_max is unbounded
        below = np.max(np.where(np.isfinite(floor), floor - value, -np.inf))
        at_zero = np.max(np.abs(np.asarray(H.value(x, np.zeros(n), p))))
        worst = float(max(above, below, at_zero))
        return self._outcome("hamiltonian_bounds", worst <= SAMPLE_TOL, worst, f"{n} samples")

    def _conjugate_gap(self, cost: CostFunction, rhos: NDArray[np.float64]) -> float:
        grid_size = self.config.checks.conjugate_grid
        worst = 0.0
        for rho in rhos:
            top = cost.upper if math.isfinite(cost.upper) else 2.0 * float(cost.inverse_deriv(rho)) + 1.0
            zs = np.linspace(0.0, top, grid_size, endpoint=False)
            brute = max(float(np.max(rho * zs - np.asarray(cost.value(zs)))), 0.0)
            worst = max(worst, abs(brute - float(cost.conjugate(rho))))
        return worst

    def check_conjugates(self) -> CheckOutcome:
        """Closed-form conjugates against brute-force maximization on a fine grid."""
        rng = np.random.default_rng(self.config.checks.seed + 1)
        rhos = rng.uniform(0.0, 10.0, self.config.checks.conjugate_samples)
        worst = max(self._conjugate_gap(self.costs.L, rhos), self._conjugate_gap(self.costs.c, rhos))
        return self._outcome("conjugate_oracle", worst <= 1e-6, worst, f"{rhos.size} slopes")

    def check_constant(self) -> CheckOutcome:
        """r*W = H^max(x, p_c) and W against a direct minimization."""
        xs = np.linspace(0.0, self.params.x_star, self.config.checks.constant_samples + 1)[1:]
        table = self.constants.profile(xs)
        _, h_max = self.hamiltonian.xi_sharp_array(xs, np.where(table.feasible, table.p_c, 1.0))
        feasible = table.feasible & np.isfinite(table.w)
        identity = float(np.max(np.abs(self.params.r * table.w - h_max)[feasible], initial=0.0))
        worst = 0.0
        for x, w in zip(xs[feasible], table.w[feasible], strict=True):
            direct = self.constants.w_by_minimization(float(x))
            worst = max(worst, abs(direct - float(w)) / max(1.0, abs(float(w))))
        return self._outcome(
            "constant_identity",
            identity <= SAMPLE_TOL and worst <= 1e-7,
            max(identity, worst),
            f"{xs.size} ratios, |rW - H^max| = {identity:.2e}",
        )

    def _x0s(self) -> list[float]:
        return [fraction * self.params.x_star for fraction in self.config.checks.x0_fractions]

    def _verify_stochastic(self) -> list[CheckOutcome]:
        cfg = self.config
        solution, report = self.solve_stochastic()
        limit_residual = max(report.residual_V, report.residual_p)
        consistency = max(report.consistency_V, report.consistency_p)
        outcomes = [
            self._outcome(
                "residual_certificate",
                limit_residual <= cfg.solver.tol_pde,
                limit_residual,
                f"eps={report.eps:g}",
            ),
            self._outcome(
                "centred_residual",
                consistency <= cfg.checks.tol_consistency,
                consistency,
                f"h={solution.grid.h:.3g}",
            ),
            self._outcome("monotone_V", report.monotone_V),
            self._outcome("no_devaluation_band", report.band_holds, report.no_dev_band),
            self._outcome(
                "lower_barrier",
                report.lower_barrier_margin >= -cfg.solver.tol_pde,
                report.lower_barrier_margin,
            ),
            self._outcome("slope_peak", report.slope_peak_ok, report.slope_peak_level),
        ]
        if report.upper_barrier_margin is not None:
            outcomes.append(
                self._outcome(
                    "upper_barrier",
                    report.upper_barrier_margin >= -cfg.solver.tol_pde,
                    report.upper_barrier_margin,
                )
            )

        simulator = StochasticSimulator(solution, self.hamiltonian, cfg.sim)
        comparisons = monte_carlo_check(simulator, self._x0s(), cfg.checks)
        worst_cost = max(c.cost_gap for c in comparisons)
        outcomes.append(
            self._outcome(
                "monte_carlo",
                all(c.cost_ok and c.price_ok for c in comparisons),
                worst_cost,
                f"{len(comparisons)} starting ratios",
            )
        )
        prices = price_fixed_point_check(simulator, self._x0s(), cfg.checks)
        outcomes.append(self._outcome("price_fixed_point", prices.passed, prices.max_gap))
        early = early_bankruptcy_check(simulator, self.params.x_star / 2.0, cfg.checks)
        outcomes.append(
            self._outcome(
                "early_bankruptcy",
                early.passed,
                min((e.margin for e in early.entries), default=None),
            )
        )
        outcomes.append(self._devaluation(solution))
        return outcomes

    def _verify_deterministic(self) -> list[CheckOutcome]:
        cfg = self.config
        equilibrium, report = self.solve_deterministic()
        outcomes = [
            self._outcome("preconditions", report.preconditions.passed, report.preconditions.w_margin),
            self._outcome("residual_certificate", report.residual <= cfg.solver.tol_ode, report.residual),
            self._outcome("below_W", report.below_w),
            self._outcome("strictly_increasing_V", report.strictly_increasing),
            self._outcome(
                "breakpoint_count",
                len(report.breakpoints) <= report.breakpoint_cap,
                float(len(report.breakpoints)),
                f"cap {report.breakpoint_cap:.1f}",
            ),
        ]
        simulator = DeterministicSimulator(equilibrium, cfg.sim)
        asymptote = closed_loop_asymptote_check(simulator)
        self._record("closed_loop.json", asymptote)
        outcomes.append(
            self._outcome(
                "closed_loop_asymptote",
                asymptote.passed,
                float(sum(not entry.reached for entry in asymptote.entries)),
                f"{len(asymptote.entries)} trajectories",
            )
        )
        prices = price_fixed_point_check(simulator, self._x0s(), cfg.checks)
        outcomes.append(self._outcome("price_fixed_point", prices.passed, prices.max_gap))
        early = early_bankruptcy_check(simulator, self.params.x_star / 2.0, cfg.checks)
        outcomes.append(
            self._outcome(
                "early_bankruptcy",
                early.passed,
                min((e.margin for e in early.entries), default=None),
            )
        )
        summaries = []
        for x0 in self._x0s():
            dp = verify_dynamic_programming(equilibrium, x0, cfg.checks)
            summaries.append(
                DynamicProgrammingSummary(
                    x0=x0,
                    value=dp.value,
                    controls=len(dp.runs),
                    min_cost=dp.min_cost,
                    worst_gap=dp.worst_gap,
                    constant_cost=dp.constant_cost,
                    counterexamples=[run.label for run in dp.counterexamples],
                    passed=dp.passed,
                )
            )
        outcomes.append(
            self._outcome(
                "dynamic_programming",
                all(s.passed for s in summaries),
                max(s.worst_gap for s in summaries),
                f"{sum(s.controls for s in summaries)} controls",
            )
        )
        outcomes.append(self._devaluation(equilibrium))
        return outcomes

    def _devaluation(self, solution: PiecewiseEquilibrium | GridSolution) -> CheckOutcome:
        report: DevaluationReport = devaluation_check(solution, self.params, self.costs)
        self._record("devaluation.json", report)
        return self._outcome("devaluation", report.passed, report.max_v_star, report.message)

    @solver_scope(stage="verify")
    def verify(self) -> VerifySummary:
        """Run the cross-check suite of the configured regime."""
        regime = "stoch" if self.params.is_stochastic else "det"
        checks = [self.check_hamiltonian(), self.check_conjugates(), self.check_constant()]
        checks.extend(self._verify_stochastic() if regime == "stoch" else self._verify_deterministic())
        summary = VerifySummary(regime=regime, checks=checks)
        self._record("verify_summary.json", summary)
        return summary


def format_summary(summary: VerifySummary) -> str:
    """Fixed-width table of check outcomes."""
    width = max((len(check.name) for check in summary.checks), default=5)
    lines = [f"{'check':<{width}}  result  metric", "-" * (width + 24)]
    for check in summary.checks:
        metric = "" if check.metric is None else f"{check.metric:.3e}"
        lines.append(f"{check.name:<{width}}  {'pass' if check.passed else 'FAIL':<6}  {metric}")
    lines.append(f"overall: {'pass' if summary.passed else 'FAIL'}")
    return "\n".join(lines)


def write_reference_config(out_dir: Path) -> Path:
    """Write the reference configuration with every key and its default."""
    return write_text(out_dir / "reference_config.yaml", reference_config())

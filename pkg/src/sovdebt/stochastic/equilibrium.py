"""Stochastic equilibrium by parabolic relaxation and continuation in eps.

Each rung of the eps ladder marches the regularized system to a steady state,
warm started from the previous rung. The finest rung is reported together with
a quadratic extrapolation of V to eps = 0 and the limit-system residuals.
When the finest rung leaves a limit residual above tol_pde the ladder is
extended by up to `extra_rungs` finer rungs before giving up.
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np
from numpy.typing import NDArray

from ..audit.decorators import log_solver_event, solver_scope_context
from ..core.hamiltonian import Hamiltonian
from ..errors import ContinuationError, NonConvergenceError
from ..models.audit import EventSubtype, EventType
from ..models.config import SolverConfig
from .grid import Grid, ParabolicState, linear_state, pin_boundary
from .scheme import ParabolicScheme

logger = logging.getLogger(__name__)

HISTORY_STRIDE = 1000
# each extension rung divides the finest eps by this
EXTENSION_RATIO = 10.0
PROGRESS_STRIDE = 50_000


@dataclass(frozen=True)
class RungRecord:
    """Outcome of one rung of the eps ladder"""

    eps: float
    steps: int
    pseudo_time: float
    residual_eps: float
    residual_V: float
    residual_p: float
    consistency_V: float
    consistency_p: float
    max_slope: float

    @property
    def residual(self) -> float:
        return max(self.residual_V, self.residual_p)


@dataclass(frozen=True)
class StochasticDiagnostics:
    """A-posteriori certificates of the converged grid solution"""

    monotone_V: bool
    max_slope: float
    band_edge: float
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


@dataclass
class GridSolution:
    """Converged (V, p) on the grid with feedback policies and certificates"""

    grid: Grid
    V: NDArray[np.float64]
    p: NDArray[np.float64]
    V_prime: NDArray[np.float64]
    u_star: NDArray[np.float64]
    v_star: NDArray[np.float64]
    eps: float
    residual_V: float
    residual_p: float
    V_limit: NDArray[np.float64]
    eps_history: list[RungRecord] = field(default_factory=list)
    diagnostics: StochasticDiagnostics | None = None
    consistency_V: float = math.nan
    consistency_p: float = math.nan

    @property
    def xs(self) -> NDArray[np.float64]:
        return self.grid.xs

    @property
    def monotone_V(self) -> bool:
        return bool(np.all(np.diff(self.V) >= -1e-12))

    @property
    def no_dev_band(self) -> float:
        return band_edge(self.grid.xs, self.v_star)

    def value_at(self, x: float) -> float:
        return float(np.interp(x, self.grid.xs, self.V))

    def price_at(self, x: float) -> float:
        return float(np.interp(x, self.grid.xs, self.p))


def band_edge(xs: NDArray[np.float64], v: NDArray[np.float64]) -> float:
    """Largest grid abscissa below which v vanishes identically"""
    active = np.flatnonzero(v > 0)
    if active.size == 0:
        return float(xs[-1])
    first = int(active[0])
    return float(xs[first - 1]) if first > 0 else 0.0


def extrapolate_to_zero(eps: list[float], values: list[NDArray[np.float64]]) -> NDArray[np.float64]:
    """Lagrange polynomial in eps through the last (up to three) rungs, at eps = 0."""
    pts = list(zip(eps, values, strict=True))[-3:]
    if len(pts) == 1:
        return pts[0][1].copy()
    result = np.zeros_like(pts[0][1])
    for i, (ei, vi) in enumerate(pts):
        weight = 1.0
        for j, (ej, _) in enumerate(pts):
            if j != i:
                weight *= (0.0 - ej) / (ei - ej)
        result = result + weight * vi
    return result


class StochasticSolver:
    """Parabolic relaxation solver for one parameter set"""

    def __init__(self, hamiltonian: Hamiltonian, config: SolverConfig, grid_nodes: int | None = None):
        self.hamiltonian = hamiltonian
        self.params = hamiltonian.params
        self.costs = hamiltonian.costs
        self.config = config
        self.grid = Grid.uniform(self.params.x_star, grid_nodes or config.grid_nodes)
        self.scheme = ParabolicScheme(
            hamiltonian,
            self.grid,
            cfl=config.cfl,
            dt_max=config.dt_max,
            box_tol=config.box_tol,
        )

    def steady_state(
        self, eps: float, init: ParabolicState | None = None
    ) -> tuple[ParabolicState, int]:
        """March the eps-system until max|update|/dt < tol_steady.

        Returns:
            The steady state and the number of pseudo-time steps taken
        """
        if eps <= 0:
            raise ValueError(f"Regularization must be positive, got {eps}")
        cfg = self.config
        if init is None:
            state = linear_state(self.params, self.grid, eps)
        else:
            state = pin_boundary(init.with_eps(eps), self.params)

        history: list[float] = []
        for step in range(1, cfg.max_steps + 1):
            new_state, dt = self.scheme.advance(state)
            rate = max(
                float(np.max(np.abs(new_state.V - state.V))),
                float(np.max(np.abs(new_state.p - state.p))),
            ) / dt
            state = new_state
            if step % HISTORY_STRIDE == 0:
                history.append(rate)
            if step % PROGRESS_STRIDE == 0:
                logger.debug(f"eps={eps:g} step {step}: update rate {rate:.3e}")
            if rate < cfg.tol_steady:
                return state, step
        raise NonConvergenceError(
            f"eps={eps:g}: no steady state within {cfg.max_steps} steps "
            f"(last update rate {history[-1] if history else math.nan:.3e})",
            history=history,
        )

    def _rung(self, eps: float, init: ParabolicState | None) -> tuple[ParabolicState, RungRecord]:
        state, steps = self.steady_state(eps, init)
        res_eps_v, res_eps_p = self.scheme.residuals(state.V, state.p, eps)
        res_v, res_p = self.scheme.residuals(state.V, state.p, 0.0)
        cen_v, cen_p = self.scheme.centred_residuals(state.V, state.p)
        slope = np.gradient(state.V, self.grid.h)
        record = RungRecord(
            eps=eps,
            steps=steps,
            pseudo_time=state.t,
            residual_eps=float(max(np.max(np.abs(res_eps_v)), np.max(np.abs(res_eps_p)))),
            residual_V=float(np.max(np.abs(res_v))),
            residual_p=float(np.max(np.abs(res_p))),
            consistency_V=float(np.max(np.abs(cen_v))),
            consistency_p=float(np.max(np.abs(cen_p))),
            max_slope=float(np.max(slope)),
        )
        return state, record

    def _logged_rung(
        self, eps: float, init: ParabolicState | None, previous: RungRecord | None
    ) -> tuple[ParabolicState, RungRecord]:
        with solver_scope_context(stage="rung", eps=eps):
            log_solver_event(EventType.CONTINUATION, EventSubtype.RUNG_STARTED)
            try:
                state, record = self._rung(eps, init)
            except Exception as e:
                log_solver_event(
                    EventType.CONTINUATION,
                    EventSubtype.RUNG_FAILED,
                    success=False,
                    error_message=str(e),
                )
                raise
            if previous is not None and record.residual > (
                self.config.residual_growth * previous.residual + self.config.tol_pde
            ):
                message = (
                    f"Limit residual grew from {previous.residual:.3e} at "
                    f"eps={previous.eps:g} to {record.residual:.3e} at eps={eps:g}"
                )
                log_solver_event(
                    EventType.CONTINUATION,
                    EventSubtype.RUNG_FAILED,
                    success=False,
                    error_message=message,
                )
                raise ContinuationError(message)
            log_solver_event(
                EventType.CONTINUATION,
                EventSubtype.RUNG_COMPLETED,
                success=True,
                steps=record.steps,
                residual=record.residual,
            )
            logger.info(
                f"eps={eps:g}: steady after {record.steps} steps, "
                f"limit residual {record.residual:.3e}"
            )
            return state, record

    def continuation_to_zero(self, eps_ladder: list[float] | None = None) -> GridSolution:
        """Solve each rung of a strictly decreasing eps ladder with warm starts.

        Raises:
            ContinuationError: The limit residual grew from one rung to the next
            NonConvergenceError: The limit residual is still above tol_pde after
                the extension rungs
        """
        ladder = list(eps_ladder or self.config.eps_ladder)
        if any(b >= a for a, b in zip(ladder, ladder[1:], strict=False)):
            raise ValueError(f"eps ladder must be strictly decreasing: {ladder}")

        state: ParabolicState | None = None
        records: list[RungRecord] = []
        values: list[NDArray[np.float64]] = []

        def climb(eps: float) -> None:
            nonlocal state
            state, record = self._logged_rung(eps, state, records[-1] if records else None)
            records.append(record)
            values.append(state.V.copy())

        for eps in ladder:
            climb(eps)
        for _ in range(self.config.extra_rungs):
            if records[-1].residual <= self.config.tol_pde:
                break
            logger.info(
                f"Limit residual {records[-1].residual:.3e} above {self.config.tol_pde:g}; "
                "adding a finer rung"
            )
            climb(records[-1].eps / EXTENSION_RATIO)
        if records[-1].residual > self.config.tol_pde:
            raise NonConvergenceError(
                f"Limit residual {records[-1].residual:.3e} at eps={records[-1].eps:g} "
                f"stays above tol_pde={self.config.tol_pde:g}",
                history=[rec.residual for rec in records],
            )

        assert state is not None
        V_limit = np.clip(
            extrapolate_to_zero([rec.eps for rec in records], values), 0.0, self.params.B
        )
        solution = self.extract_policy(state, records, V_limit)
        solution.diagnostics = self.diagnostics(solution)
        return solution

    def extract_policy(
        self,
        state: ParabolicState,
        records: list[RungRecord] | None = None,
        V_limit: NDArray[np.float64] | None = None,
    ) -> GridSolution:
        """Nodewise feedback controls from V' (centered, one-sided at the ends)."""
        H = self.hamiltonian
        xs = self.grid.xs
        slope = np.gradient(state.V, self.grid.h)
        u = np.asarray(H.u_star(slope, state.p), dtype=float)
        v = np.asarray(H.v_star(xs, slope), dtype=float)
        # x = 0 is absorbing
        u[0] = 0.0
        v[0] = 0.0
        records = records or []
        res_v, res_p = self.scheme.residuals(state.V, state.p, 0.0)
        cen_v, cen_p = self.scheme.centred_residuals(state.V, state.p)
        return GridSolution(
            grid=self.grid,
            V=state.V,
            p=state.p,
            V_prime=slope,
            u_star=u,
            v_star=v,
            eps=state.eps,
            residual_V=float(np.max(np.abs(res_v))),
            residual_p=float(np.max(np.abs(res_p))),
            V_limit=state.V.copy() if V_limit is None else V_limit,
            eps_history=list(records),
            consistency_V=float(np.max(np.abs(cen_v))),
            consistency_p=float(np.max(np.abs(cen_p))),
        )

    def diagnostics(self, solution: GridSolution) -> StochasticDiagnostics:
        pr = self.params
        xs = self.grid.xs
        V, p, slope = solution.V, solution.p, solution.V_prime
        max_slope = float(np.max(slope))
        c0 = self.costs.c.slope_at_zero

        edge = band_edge(xs, solution.v_star)
        edge_bound = min(c0 / max_slope, pr.x_star) if max_slope > 0 else pr.x_star
        band_holds = bool(np.all(solution.v_star[xs <= edge_bound] == 0.0))

        # lower barrier 1 - c*x^gamma for p near the origin
        theta_min = pr.theta_min
        x_ref = pr.x_star
        c_low = 1.0 + 2.0 * max_slope**2 / ((pr.r + pr.lam) * self.costs.delta0) + 1.0 / x_ref
        gamma = min(
            0.5,
            (pr.r + pr.lam) / ((pr.lam + pr.r) / theta_min - pr.lam - pr.mu + pr.sigma**2),
        )
        reach = ((1.0 - theta_min) / c_low) ** (1.0 / gamma)
        near = xs <= reach
        lower_margin = float(np.min(p[near] - (1.0 - c_low * xs[near] ** gamma)))

        # no tall local maximum of V' close to the origin
        peak_reach = min(1.0 / (4.0 * (pr.lam + pr.r + pr.sigma**2)), pr.x_star / 2.0)
        peak_level = 8.0 * float(self.costs.L.value(0.5))
        inner = slope[1:-1]
        is_peak = (inner > slope[:-2]) & (inner > slope[2:])
        tall = is_peak & (inner > peak_level) & (xs[1:-1] < peak_reach)
        slope_peak_ok = not bool(np.any(tall))

        upper_margin: float | None = None
        floor = (pr.r + pr.lam) / (pr.r + pr.lam + pr.v_max)
        if pr.theta_star >= floor:
            kappa = pr.r / (pr.r + pr.lam + pr.v_max + pr.sigma**2)
            upper_margin = float(np.min(pr.B * (xs / pr.x_star) ** kappa - V))

        diag = StochasticDiagnostics(
            monotone_V=solution.monotone_V,
            max_slope=max_slope,
            band_edge=edge,
            band_edge_bound=edge_bound,
            band_holds=band_holds,
            lower_barrier_c=c_low,
            lower_barrier_gamma=gamma,
            lower_barrier_reach=reach,
            lower_barrier_margin=lower_margin,
            slope_peak_reach=peak_reach,
            slope_peak_level=peak_level,
            slope_peak_ok=slope_peak_ok,
            upper_barrier_margin=upper_margin,
        )
        if not diag.monotone_V:
            logger.warning("Converged V is not monotone on the grid")
        if lower_margin < -self.config.tol_pde:
            logger.warning(f"Price falls below the lower barrier by {-lower_margin:.3e}")
        return diag

"""Piecewise construction of the deterministic equilibrium.

The arc leaving (x*, B, theta(x*)) is followed backward until it meets the
graph of W at x_1. From every touch x_k the construction restarts:

* x_k <= x_flat: the price stays 1 and the arc Z' = F-(x, Z, 1) with
  Z(x_k) = W(x_k) runs down to 0;
* otherwise arcs started from (W(x_k) - eps, p_c(x_k)) for a fixed decreasing
  eps-sequence are extrapolated to eps = 0, and the next touch is where the
  finest run meets W again.

Each breakpoint belongs to the arc restarted there, so p*(x_k) = p_c(x_k)
and x_k is a rest point of the closed loop. The price at x_k is not the one
of the arc arriving from above, which generally differs from p_c(x_k); V* is
continuous either way.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import math
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ..audit.decorators import log_solver_event, solver_scope_context
from ..constant import ConstantStrategies
from ..core.hamiltonian import Hamiltonian
from ..errors import ConstructionError, NonConvergenceError
from ..models.audit import EventSubtype, EventType
from ..models.config import SolverConfig
from ..models.params import ModelParams
from .arcs import ArcIntegrator, BackwardArc, StopReason

logger = logging.getLogger(__name__)

FLAT_SAMPLES = 400


@dataclass(frozen=True)
class PreconditionReport:
    """Margins of W(x*) > B and theta(x*) <= p_c(x*) (strict form included)"""

    w_at_threshold: float
    w_margin: float
    price_margin: float
    strict_price_bound: float
    strict_margin: float

    @property
    def passed(self) -> bool:
        return self.w_margin > 0 and self.price_margin > 0 and self.strict_margin > 0


@dataclass
class PiecewiseEquilibrium:
    """V*, p* and the feedback policy assembled from backward arcs.

    ``breakpoints`` run downward from x_1; ``arcs[0]`` leaves x* and ``arcs[k]``
    is restarted at ``breakpoints[k-1]``.
    """

    hamiltonian: Hamiltonian
    breakpoints: list[float]
    arcs: list[BackwardArc]
    x_flat: float
    delta_flat: float
    breakpoint_cap: float
    tail_origin_value: float = 0.0
    notes: list[str] = field(default_factory=list)

    @property
    def params(self) -> ModelParams:
        return self.hamiltonian.params

    @property
    def x_star(self) -> float:
        return float(self.params.x_star)

    def arc_index(self, x: float) -> int:
        """Index of the arc owning x; arc k covers ]x_lo, x_hi]."""
        for index, arc in enumerate(self.arcs):
            if x > arc.x_lo:
                return index
        return len(self.arcs) - 1

    def _eval(self, x: ArrayLike, which: str) -> Any:
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(xs)
        for i, xi in enumerate(xs):
            out[i] = self._point(float(xi), which)
        return float(out[0]) if np.ndim(x) == 0 else out

    def _point(self, x: float, which: str) -> float:
        H = self.hamiltonian
        if x <= 0:
            return {"value": 0.0, "price": 1.0, "slope": 0.0}[which]
        if x >= self.x_star:
            x = self.x_star
        arc = self.arcs[self.arc_index(x)]
        if x < arc.x[0]:
            # analytic tail below x_min on the last arc: Z(0) = 0, q = 1
            z_lo = float(arc.value(arc.x[0]))
            match which:
                case "value":
                    return z_lo * x / arc.x[0]
                case "price":
                    return float(arc.price(arc.x[0]))
                case _:
                    return z_lo / arc.x[0]
        match which:
            case "value":
                return float(arc.value(x))
            case "price":
                return float(arc.price(x))
            case _:
                price = float(arc.price(x))
                return H.f_branch(x, max(float(arc.value(x)), 0.0), price, "minus", clamp=True)

    ####################
    # PUBLIC INTERFACE #
    ####################

    def value(self, x: ArrayLike) -> Any:
        return self._eval(x, "value")

    def price(self, x: ArrayLike) -> Any:
        return self._eval(x, "price")

    def slope(self, x: ArrayLike) -> Any:
        """V*'(x) = F-(x, V*(x), p*(x))"""
        return self._eval(x, "slope")

    def policy(self, x: float) -> tuple[float, float]:
        """(u*, v*) at x"""
        if x <= 0:
            return 0.0, 0.0
        H = self.hamiltonian
        xi = float(self.slope(x))
        return float(H.u_star(xi, float(self.price(x)))), float(H.v_star(x, xi))

    def drift(self, x: float) -> float:
        """Closed-loop dx/dt = H_xi(x, V*', p*)"""
        if x <= 0:
            return 0.0
        return float(self.hamiltonian.grad_xi(x, float(self.slope(x)), float(self.price(x))))

    @property
    def residual(self) -> float:
        return max((arc.residual for arc in self.arcs), default=0.0)

    def target_breakpoint(self, x0: float) -> float | None:
        """Breakpoint a closed loop from x0 converges to (None above x_1)."""
        above = [bp for bp in self.breakpoints if bp >= x0]
        return min(above) if above else None


class DeterministicSolver:
    """Builds the piecewise equilibrium for one deterministic parameter set"""

    def __init__(
        self,
        hamiltonian: Hamiltonian,
        constants: ConstantStrategies,
        config: SolverConfig,
    ):
        self.hamiltonian = hamiltonian
        self.params = hamiltonian.params
        self.constants = constants
        self.config = config
        self.integrator = ArcIntegrator(hamiltonian, constants, config)

    def check_preconditions(self) -> PreconditionReport:
        pr = self.params
        H = self.hamiltonian
        theta = pr.theta_star
        table = self.constants.profile(pr.x_star)
        w_star = float(table.w[0])
        p_c = float(table.p_c[0])
        strict_bound = math.nan
        strict_margin = -math.inf
        if math.isfinite(w_star) and pr.r * pr.B <= H.h_max(pr.x_star, theta):
            xi = H.f_branch(pr.x_star, pr.B, theta, "minus")
            v = float(H.v_star(pr.x_star, xi))
            strict_bound = (pr.r + pr.lam) / (pr.r + pr.lam + v)
            strict_margin = strict_bound - theta
        return PreconditionReport(
            w_at_threshold=w_star,
            w_margin=w_star - pr.B,
            price_margin=p_c - theta,
            strict_price_bound=strict_bound,
            strict_margin=strict_margin,
        )

    def delta_flat(self, x0: float | None, x_w: float) -> float:
        """Lower bound on the length of a restarted arc.

        Uses delta_1 = inf(xi_sharp(x, p_c(x)) - W'(x)) on [x_flat, x_w] and the
        Hoelder modulus of F- at (x_flat, theta(x*)). With ``x0 = None`` W' is
        taken at its largest value on [x_flat, x*].
        """
        pr = self.params
        x_flat = self.constants.x_flat()
        lo = max(x_flat, self.integrator.x_min)
        hi = max(x_w, lo * (1 + 1e-9))
        xs = np.linspace(lo, hi, FLAT_SAMPLES)
        table = self.constants.profile(xs)
        sharp, _ = self.hamiltonian.xi_sharp_array(xs, table.p_c)
        delta1 = float(np.min(sharp - table.w_prime))
        if delta1 <= 0:
            return 0.0
        holder = self.hamiltonian.holder_constant(lo, pr.theta_star)
        if x0 is None:
            w_slope = float(np.max(self.constants.profile(np.linspace(lo, pr.x_star, FLAT_SAMPLES)).w_prime))
        else:
            w_slope = float(self.constants.w_prime(x0))
        return min(delta1, delta1**2 / (8.0 * holder**2 * (2.0 * w_slope + delta1)))

    def _unit_price_arc(self, x0: float) -> BackwardArc:
        arc = self.integrator.integrate_backward(
            x0, float(self.constants.w(x0)), 1.0, stop_at_w=False, unit_price=True, eps=0.0
        )
        c0 = self.hamiltonian.costs.c.slope_at_zero
        devaluing = arc.x * arc.Z_prime > c0 * (1 + 1e-9)
        if np.any(devaluing):
            raise ConstructionError(
                f"Unit-price arc from x={x0:g} devalues at x={arc.x[devaluing][-1]:g}"
            )
        return arc

    def _extrapolate(self, runs: list[BackwardArc]) -> tuple[BackwardArc, float]:
        """2*Z_K - Z_{K-1} on the overlap and the gap between the last two extrapolants."""
        fine, coarse = runs[-1], runs[-2]
        x_lo = max(fine.x_lo, coarse.x_lo)
        xs = np.unique(np.concatenate((fine.x[fine.x >= x_lo], coarse.x[coarse.x >= x_lo])))

        def combine(a: BackwardArc, b: BackwardArc, grid: NDArray[np.float64]) -> tuple[Any, ...]:
            Z = 2.0 * a.value(grid) - b.value(grid)
            q = np.clip(2.0 * a.price(grid) - b.price(grid), 0.0, 1.0)
            zp = 2.0 * a.value_slope(grid) - b.value_slope(grid)
            qp = 2.0 * a.price_slope(grid) - b.price_slope(grid)
            return Z, q, zp, qp

        Z, q, zp, qp = combine(fine, coarse, xs)
        agreement = 0.0
        if len(runs) >= 3:
            older = runs[-3]
            overlap = xs[xs >= max(x_lo, older.x_lo)]
            previous = 2.0 * coarse.value(overlap) - older.value(overlap)
            agreement = float(np.max(np.abs(np.asarray(Z)[xs >= overlap[0]] - previous)))
        arc = BackwardArc(
            x_hi=fine.x_hi,
            x_lo=x_lo,
            x=xs,
            Z=np.asarray(Z),
            q=np.asarray(q),
            Z_prime=np.asarray(zp),
            q_prime=np.asarray(qp),
            stop_reason=fine.stop_reason,
            eps=0.0,
            residual=max(run.residual for run in runs),
            agreement=agreement,
        )
        return arc, agreement

    def restart_at_touch(self, x0: float) -> BackwardArc:
        """Arc leaving the touch point x0 (unit price at or below x_flat)."""
        cfg = self.config
        if x0 <= self.constants.x_flat():
            return self._unit_price_arc(x0)

        w0 = float(self.constants.w(x0))
        p0 = float(self.constants.p_c(x0))
        levels = [cfg.restart_eps0 * 2.0**-k for k in range(cfg.restart_levels)]

        def run(eps: float) -> BackwardArc:
            return self.integrator.integrate_backward(x0, w0 - eps, p0, eps=eps)

        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                runs = list(pool.map(run, levels))
        else:
            runs = [run(eps) for eps in levels]

        arc, agreement = self._extrapolate(runs)
        if agreement > cfg.restart_agreement_tol:
            raise NonConvergenceError(
                f"Restart at x={x0:.6g}: eps-extrapolants differ by {agreement:.3e} "
                f"(> {cfg.restart_agreement_tol:g})",
                history=[run.x_lo for run in runs],
            )
        return arc

    def build_equilibrium(self) -> PiecewiseEquilibrium:
        pr = self.params
        report = self.check_preconditions()
        if not report.passed:
            raise ConstructionError(
                f"Preconditions fail: W(x*)-B={report.w_margin:.4g}, "
                f"p_c(x*)-theta(x*)={report.price_margin:.4g}, "
                f"strict margin={report.strict_margin:.4g}"
            )

        first = self.integrator.integrate_backward(pr.x_star, pr.B, pr.theta_star)
        arcs = [first]
        breakpoints: list[float] = []
        with solver_scope_context(stage="arc", x_hi=pr.x_star):
            log_solver_event(
                EventType.CONSTRUCTION,
                EventSubtype.ARC_COMPLETED,
                success=True,
                x_lo=first.x_lo,
                stop_reason=first.stop_reason.value,
            )
        logger.info(f"First arc from x*={pr.x_star:g} stops at {first.x_lo:.6g} ({first.stop_reason.value})")

        x_flat = self.constants.x_flat()
        x_w = first.x_lo if first.stop_reason is not StopReason.REACHED_ZERO else x_flat
        delta = self.delta_flat(None, max(x_w, x_flat))
        cap = 1.0 + (pr.x_star - x_flat) / delta if delta > 0 else math.inf
        notes: list[str] = []

        current = first
        while current.stop_reason is not StopReason.REACHED_ZERO:
            if current.stop_reason is StopReason.INFEASIBLE:
                raise ConstructionError(
                    f"Arc ending at x={current.x_lo:.6g} left the feasible region r*Z <= H^max"
                )
            touch = current.x_lo
            breakpoints.append(touch)
            if len(breakpoints) > cap:
                raise ConstructionError(
                    f"{len(breakpoints)} breakpoints exceed the bound {cap:.1f}"
                )
            with solver_scope_context(stage="restart", x0=touch):
                try:
                    current = self.restart_at_touch(touch)
                except Exception as e:
                    log_solver_event(
                        EventType.CONSTRUCTION,
                        EventSubtype.RESTART_FAILED,
                        success=False,
                        error_message=str(e),
                    )
                    raise
                log_solver_event(
                    EventType.CONSTRUCTION,
                    EventSubtype.TOUCH_RESTARTED,
                    success=True,
                    x_lo=current.x_lo,
                    stop_reason=current.stop_reason.value,
                )
            logger.info(
                f"Restart at x={touch:.6g} stops at {current.x_lo:.6g} ({current.stop_reason.value})"
            )
            arcs.append(current)

        tail = float(arcs[-1].Z[0])
        if not arcs[-1].unit_price:
            notes.append(f"last arc reached x_min without a touch; Z(x_min)={tail:.3e}")
        equilibrium = PiecewiseEquilibrium(
            hamiltonian=self.hamiltonian,
            breakpoints=breakpoints,
            arcs=arcs,
            x_flat=x_flat,
            delta_flat=delta,
            breakpoint_cap=cap,
            tail_origin_value=tail,
            notes=notes,
        )
        logger.info(f"Equilibrium assembled: {len(breakpoints)} breakpoints, residual {equilibrium.residual:.2e}")
        return equilibrium

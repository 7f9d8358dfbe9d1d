"""Backward arcs of the deterministic normal form

    Z' = F-(x, Z, q),    q' = G-(x, Z, q),

integrated from a terminal point toward x = 0 with event detection for the
graph of W, branch degeneracy and loss of feasibility.
"""

from collections.abc import Callable
from dataclasses import dataclass
from enum import Enum
import logging
import math
from typing import Any

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline, CubicSpline
from scipy.optimize import brentq

from ..constant import ConstantStrategies
from ..core.hamiltonian import Hamiltonian
from ..errors import DomainError, IntegrationError
from ..models.config import SolverConfig

logger = logging.getLogger(__name__)

# residual samples skip steps shorter than this fraction of x*
DEFECT_MIN_GAP = 1e-6
# half-width of the dense-output difference quotient, relative to x*
DEFECT_STEP = 1e-7


class StopReason(str, Enum):
    """Why a backward arc ended"""

    TOUCHED_W = "touched_W"
    REACHED_ZERO = "reached_zero"
    BRANCH_DEGENERATE = "branch_degenerate"
    INFEASIBLE = "infeasible"


@dataclass
class BackwardArc:
    """One backward solution sampled in increasing x.

    ``eps`` is the terminal shift below W used by a restart (``None`` for the arc
    leaving x*); ``agreement`` is the sup-norm gap between consecutive
    extrapolants when the arc comes from an eps-sequence.
    """

    x_hi: float
    x_lo: float
    x: NDArray[np.float64]
    Z: NDArray[np.float64]
    q: NDArray[np.float64]
    Z_prime: NDArray[np.float64]
    q_prime: NDArray[np.float64]
    stop_reason: StopReason
    unit_price: bool = False
    eps: float | None = None
    residual: float = math.nan
    agreement: float | None = None

    def __post_init__(self) -> None:
        self._z = CubicHermiteSpline(self.x, self.Z, self.Z_prime)
        self._q = CubicHermiteSpline(self.x, self.q, self.q_prime)

    def value(self, x: Any) -> Any:
        return self._z(np.clip(x, self.x[0], self.x[-1]))

    def price(self, x: Any) -> Any:
        if self.unit_price:
            return np.ones_like(np.asarray(x, dtype=float))
        return np.clip(self._q(np.clip(x, self.x[0], self.x[-1])), 0.0, 1.0)

    def value_slope(self, x: Any) -> Any:
        return self._z(np.clip(x, self.x[0], self.x[-1]), 1)

    def price_slope(self, x: Any) -> Any:
        if self.unit_price:
            return np.zeros_like(np.asarray(x, dtype=float))
        return self._q(np.clip(x, self.x[0], self.x[-1]), 1)


def _event(func: Callable[[float, NDArray[np.float64]], float], direction: int) -> Any:
    func.terminal = True  # type: ignore[attr-defined]
    func.direction = direction  # type: ignore[attr-defined]
    return func


class ArcIntegrator:
    """Integrates backward arcs for one parameter set"""

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
        self.x_min = config.x_min_fraction * self.params.x_star
        self._w_spline = self._build_w_spline()

    def _build_w_spline(self) -> CubicSpline:
        xs = np.linspace(0.0, self.params.x_star, self.config.w_spline_nodes)
        table = self.constants.profile(xs)
        ceiling = 1e6 * self.params.B
        return CubicSpline(xs, np.where(np.isfinite(table.w), np.minimum(table.w, ceiling), ceiling))

    def w_graph(self, x: float) -> float:
        """W from the precomputed spline, for event functions"""
        return float(self._w_spline(x))

    #####################
    # RIGHT-HAND SIDES #
    #####################

    def slopes(
        self, x: float, Z: float, q: float, unit_price: bool = False
    ) -> tuple[float, float, float]:
        """(Z', q', H_xi) at a point of the arc; q' = 0 on degenerate points."""
        H = self.hamiltonian
        price = 1.0 if unit_price else min(max(q, 1e-12), 1.0)
        eta = max(Z, 0.0)
        xi = H.f_branch(x, eta, price, "minus", clamp=True)
        drift = float(H.grad_xi(x, xi, price))
        if unit_price or abs(drift) < self.config.tol_branch:
            return xi, 0.0, drift
        return xi, H.g_minus(x, eta, price, xi=xi), drift

    def residuals(self, dense: Any, xs: NDArray[np.float64], unit_price: bool = False) -> float:
        """Max defect of r*Z = H(x, Z', q) and of the price equation.

        Evaluated halfway between integrator steps with Z' and q' differenced from
        the dense output, where they are not the right-hand side values.
        """
        H = self.hamiltonian
        pr = self.params
        gaps = np.diff(xs)
        keep = gaps > DEFECT_MIN_GAP * self.params.x_star
        mids = 0.5 * (xs[1:] + xs[:-1])[keep]
        mids_ok = mids > 0
        mids = mids[mids_ok]
        if mids.size == 0:
            return 0.0
        step = np.minimum(DEFECT_STEP * max(pr.x_star, 1.0), 0.25 * gaps[keep][mids_ok])
        states = np.asarray(dense(mids))
        derivs = (np.asarray(dense(mids + step)) - np.asarray(dense(mids - step))) / (2.0 * step)
        Z, zp = states[0], derivs[0]
        price = np.ones_like(mids) if unit_price else np.clip(states[1], 1e-12, 1.0)
        worst = float(np.max(np.abs(pr.r * Z - np.asarray(H.value(mids, zp, price)))))
        if not unit_price:
            v = np.asarray(H.v_star(mids, zp))
            drift = np.asarray(H.grad_xi(mids, zp, price))
            price_gap = (pr.r + pr.lam + v) * price - (pr.r + pr.lam) - drift * derivs[1]
            worst = max(worst, float(np.max(np.abs(price_gap))))
        return worst

    ####################
    # PUBLIC INTERFACE #
    ####################
    ####################
    # PUBLIC INTERFACE #
    ####################

    def integrate_backward(
        self,
        x_hi: float,
        Z_hi: float,
        q_hi: float,
        stop_at_w: bool = True,
        unit_price: bool = False,
        eps: float | None = None,
    ) -> BackwardArc:
        """Integrate Z' = F-, q' = G- from (x_hi, Z_hi, q_hi) toward zero.

        Args:
            x_hi: Terminal debt ratio
            Z_hi: Terminal value level
            q_hi: Terminal price in (0, 1]
            stop_at_w: Stop when Z meets the graph of W
            unit_price: Hold q = 1 (no devaluation along the arc)
            eps: Terminal shift recorded on the arc
        Returns:
            The sampled arc and its stop reason
        """
        H = self.hamiltonian
        pr = self.params
        cfg = self.config
        if x_hi <= self.x_min:
            raise DomainError(f"Arc start x={x_hi:g} lies below x_min={self.x_min:g}")
        if not 0 < q_hi <= 1 + 1e-12:
            raise DomainError(f"Arc start price must lie in (0, 1], got {q_hi}")
        if Z_hi <= 0:
            raise DomainError(f"Arc start value must be positive, got {Z_hi}")
        start_price = 1.0 if unit_price else q_hi
        h_max = H.h_max(x_hi, start_price)
        if pr.r * Z_hi > h_max * (1 + 1e-10) + 1e-14:
            raise DomainError(
                f"r*Z={pr.r * Z_hi:.6g} exceeds H^max={h_max:.6g} at the arc start x={x_hi:g}"
            )

        def rhs(x: float, y: NDArray[np.float64]) -> list[float]:
            zp, qp, _ = self.slopes(x, y[0], y[1], unit_price)
            return [zp, qp]

        events: list[Any] = []
        labels: list[StopReason] = []
        if stop_at_w:
            events.append(_event(lambda x, y: y[0] - self.w_graph(x), +1))
            labels.append(StopReason.TOUCHED_W)
        if not unit_price:
            events.append(
                _event(lambda x, y: abs(self.slopes(x, y[0], y[1])[2]) - cfg.tol_branch, -1)
            )
            labels.append(StopReason.BRANCH_DEGENERATE)
            events.append(
                _event(
                    lambda x, y: pr.r * y[0] - H.h_max(x, min(max(y[1], 1e-12), 1.0)), +1
                )
            )
            labels.append(StopReason.INFEASIBLE)

        solution = solve_ivp(
            rhs,
            (x_hi, self.x_min),
            [Z_hi, start_price],
            method="RK45",
            rtol=cfg.ode_rtol,
            atol=cfg.ode_atol,
            dense_output=True,
            events=events or None,
        )
        if solution.status == -1:
            raise IntegrationError(f"Backward integration from x={x_hi:g} failed: {solution.message}")

        reason = StopReason.REACHED_ZERO
        x_lo = float(solution.t[-1])
        if solution.status == 1:
            for label, hits in zip(labels, solution.t_events, strict=True):
                if len(hits):
                    reason = label
                    x_lo = float(hits[0])
                    break
            if reason is StopReason.TOUCHED_W:
                x_lo = self._refine_touch(solution.sol, x_lo)

        xs = np.asarray(solution.t[::-1], dtype=float)
        xs = xs[xs >= x_lo]
        if xs.size == 0 or xs[0] > x_lo:
            xs = np.concatenate(([x_lo], xs))
        states = np.asarray(solution.sol(xs))
        Z = states[0]
        q = np.ones_like(Z) if unit_price else np.clip(states[1], 0.0, 1.0)
        derivs = np.array([self.slopes(x, z, p, unit_price)[:2] for x, z, p in zip(xs, Z, q, strict=True)])
        arc = BackwardArc(
            x_hi=x_hi,
            x_lo=x_lo,
            x=xs,
            Z=Z,
            q=q,
            Z_prime=derivs[:, 0],
            q_prime=derivs[:, 1],
            stop_reason=reason,
            unit_price=unit_price,
            eps=eps,
        )
        arc.residual = self.residuals(solution.sol, xs, unit_price)
        logger.debug(
            f"Arc from x={x_hi:.6g} stopped at x={x_lo:.6g} ({reason.value}), "
            f"{xs.size} samples, residual {arc.residual:.2e}"
        )
        return arc

    def _refine_touch(self, dense: Any, x_event: float) -> float:
        """Re-locate Z = W with exact W near the spline-based event."""
        width = 1e-6 * self.params.x_star

        def gap(x: float) -> float:
            return float(dense(x)[0]) - float(self.constants.w(x))

        lo = max(x_event - width, self.x_min)
        hi = x_event + width
        try:
            if gap(lo) * gap(hi) < 0:
                return float(brentq(gap, lo, hi, xtol=self.config.tol_root))
        except ValueError:
            pass
        return x_event

"""Optimal constant strategies: controls that hold the debt ratio fixed forever.

For a constant ratio x the repayment is tied to the devaluation rate by
(r+lambda)(r-mu)x = (r+lambda+v)u, and the minimal discounted cost is

    W(x) = min_v [L(u(v)) + c(v)] / r,    p_c(x) = (r+lambda)/(r+lambda+v_c(x)).
"""

from dataclasses import dataclass
import logging
import math
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import brentq, minimize_scalar

from .core.costs import CostModel
from .core.roots import bisect_array
from .errors import InfeasibleError
from .models.params import ModelParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConstantStrategyProfile:
    """Constant-strategy quantities on a set of debt ratios"""

    x: NDArray[np.float64]
    w: NDArray[np.float64]
    w_prime: NDArray[np.float64]
    p_c: NDArray[np.float64]
    v_c: NDArray[np.float64]
    u_c: NDArray[np.float64]
    feasible: NDArray[np.bool_]


def _scalar(values: NDArray[Any], like: ArrayLike) -> Any:
    return float(values[()]) if np.ndim(like) == 0 else values


class ConstantStrategies:
    """W, W', p_c, v_c and the thresholds x_c, x_flat for one parameter set"""

    def __init__(self, params: ModelParams, costs: CostModel, tol: float = 1e-12):
        self.params = params
        self.costs = costs
        self.tol = tol

    def repayment(self, x: ArrayLike, v: ArrayLike) -> Any:
        """u holding x fixed under devaluation v: (r+lambda)(r-mu)x/(r+lambda+v)"""
        pr = self.params
        return (pr.r + pr.lam) * (pr.r - pr.mu) * np.asarray(x) / (
            pr.r + pr.lam + np.asarray(v)
        )

    def _cost_slope(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        # d/dv [L(u(v)) + c(v)], increasing in v
        pr = self.params
        u = self.repayment(x, v)
        factor = (pr.r + pr.lam) * (pr.r - pr.mu) * x / (pr.r + pr.lam + v) ** 2
        marginal_l = np.where(factor > 0, np.asarray(self.costs.L.deriv(u)) * factor, 0.0)
        return np.asarray(self.costs.c.deriv(v)) - marginal_l

    def feasibility_floor(self, x: ArrayLike) -> Any:
        """Smallest devaluation rate keeping u < 1"""
        pr = self.params
        return np.maximum((pr.r + pr.lam) * ((pr.r - pr.mu) * np.asarray(x) - 1.0), 0.0)

    def profile(self, x: ArrayLike) -> ConstantStrategyProfile:
        """Vectorized constant-strategy table; infeasible ratios get W = inf."""
        pr = self.params
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        v_floor = self.feasibility_floor(xs)
        feasible = v_floor < self.costs.c.upper
        v_c = np.zeros_like(xs)

        needs_root = feasible & (self._cost_slope(xs, v_floor) < 0)
        if np.any(needs_root):
            xr = xs[needs_root]
            lo = v_floor[needs_root]
            cap = self.costs.c.upper
            if math.isfinite(cap):
                hi = np.full_like(xr, cap * (1.0 - 1e-15))
            else:
                hi = np.maximum(2.0 * lo, 1.0)
                while np.any(self._cost_slope(xr, hi) < 0):
                    hi = np.where(self._cost_slope(xr, hi) < 0, 2.0 * hi, hi)
            v_c[needs_root] = bisect_array(
                lambda v: self._cost_slope(xr, v), lo, hi, tol=self.tol
            )

        u_c = np.asarray(self.repayment(xs, v_c), dtype=float)
        p_c = (pr.r + pr.lam) / (pr.r + pr.lam + v_c)
        cost = np.asarray(self.costs.L.value(u_c)) + np.asarray(self.costs.c.value(v_c))
        w = np.where(feasible, cost / pr.r, np.inf)
        w_prime = np.where(
            feasible,
            (pr.r - pr.mu) / pr.r * p_c * np.asarray(self.costs.L.deriv(u_c)),
            np.inf,
        )
        v_c = np.where(feasible, v_c, np.nan)
        if not np.all(feasible):
            logger.warning(
                f"{int(np.sum(~feasible))} debt ratios admit no constant strategy"
            )
        return ConstantStrategyProfile(
            x=xs, w=w, w_prime=w_prime, p_c=p_c, v_c=v_c, u_c=u_c, feasible=feasible
        )

    def _checked(self, x: ArrayLike) -> ConstantStrategyProfile:
        table = self.profile(x)
        if not np.all(table.feasible):
            bad = table.x[~table.feasible]
            raise InfeasibleError(
                f"No constant strategy keeps u < 1 at x={bad[0]:g} (v_max too small)"
            )
        return table

    ####################
    # PUBLIC INTERFACE #
    ####################

    def v_c(self, x: ArrayLike) -> Any:
        return _scalar(self._checked(x).v_c, x)

    def p_c(self, x: ArrayLike) -> Any:
        return _scalar(self._checked(x).p_c, x)

    def w(self, x: ArrayLike) -> Any:
        return _scalar(self._checked(x).w, x)

    def w_prime(self, x: ArrayLike) -> Any:
        return _scalar(self._checked(x).w_prime, x)

    def w_by_minimization(self, x: float) -> float:
        """W(x) from a direct bounded 1-D minimization over v (independent path)."""
        pr = self.params
        if x == 0:
            return 0.0
        lo = float(self.feasibility_floor(x))
        cap = self.costs.c.upper
        if lo >= cap:
            return math.inf
        hi = cap if math.isfinite(cap) else max(10.0, 4.0 * lo + 10.0)

        def total(v: float) -> float:
            return float(self.costs.L.value(self.repayment(x, v)) + self.costs.c.value(v))

        result = minimize_scalar(
            total,
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-12, "maxiter": 500},
        )
        best = min(float(result.fun), total(lo) if lo == 0 else math.inf)
        return best / pr.r

    def x_c(self) -> float:
        """Root of (r+lambda)c'(0) = (r-mu)x L'((r-mu)x); zero when c'(0) = 0."""
        pr = self.params
        c0 = self.costs.c.slope_at_zero
        if c0 <= 0:
            return 0.0

        def gap(x: float) -> float:
            u = (pr.r - pr.mu) * x
            return (pr.r - pr.mu) * x * float(self.costs.L.deriv(u)) - (pr.r + pr.lam) * c0

        return float(brentq(gap, 0.0, (1.0 - 1e-12) / (pr.r - pr.mu), xtol=self.tol))

    def x_flat(self) -> float:
        """Root of c'(0) = x L'((r-mu)x); lies strictly below x_c when c'(0) > 0."""
        pr = self.params
        c0 = self.costs.c.slope_at_zero
        if c0 <= 0:
            return 0.0

        def gap(x: float) -> float:
            return x * float(self.costs.L.deriv((pr.r - pr.mu) * x)) - c0

        return float(brentq(gap, 0.0, (1.0 - 1e-12) / (pr.r - pr.mu), xtol=self.tol))

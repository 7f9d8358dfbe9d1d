"""The Hamiltonian of the borrower's problem and its branch functions.

    H(x, xi, p) = -L°(xi/p) - c°(x*xi) + ((lambda+r)/p - lambda - mu + sigma^2)*x*xi

H is concave in xi with H(x, 0, p) = 0. For x > 0 it peaks at xi_sharp(x, p);
the two solutions of H = r*eta on either side of the peak are the branches
F-(x, eta, p) <= xi_sharp <= F+(x, eta, p).
"""

from dataclasses import dataclass
import logging
import math
from typing import Any, Literal

import numpy as np
from numpy.typing import ArrayLike
from scipy.optimize import brentq

from ..errors import (
    BracketError,
    BranchDegeneracyError,
    DomainError,
    NoSolutionError,
)
from ..models.config import CostsConfig, SolverConfig
from ..models.params import ModelParams
from .costs import CostModel
from .roots import bisect_array, grow_bracket

logger = logging.getLogger(__name__)

XI_CAP = 1e12


@dataclass(frozen=True)
class HamiltonEval:
    """H and its gradient at (x, xi, p) with the minimizing controls"""

    value: Any
    grad_x: Any
    grad_xi: Any
    grad_p: Any
    u_opt: Any
    v_opt: Any


@dataclass(frozen=True)
class BranchPoint:
    """Maximizer of xi -> H(x, xi, p) and the controls realizing it"""

    xi_sharp: float
    h_max: float
    u_sharp: float
    v_sharp: float


def _out(values: Any) -> Any:
    arr = np.asarray(values)
    return float(arr) if arr.ndim == 0 else arr


class Hamiltonian:
    """Hamiltonian, feedback laws and branch functions for fixed parameters.

    Instances hold only immutable inputs and may be shared across threads.
    """

    def __init__(
        self,
        params: ModelParams,
        costs: CostModel,
        tol_root: float = 1e-12,
        tol_branch: float = 1e-8,
    ):
        self.params = params
        self.costs = costs
        self.tol_root = tol_root
        self.tol_branch = tol_branch

    @classmethod
    def from_config(
        cls, params: ModelParams, costs: CostsConfig, solver: SolverConfig
    ) -> "Hamiltonian":
        return cls(
            params,
            CostModel.from_config(costs, params.v_max),
            tol_root=solver.tol_root,
            tol_branch=solver.tol_branch,
        )

    ####################
    # FEEDBACK CONTROLS #
    ####################

    def u_star(self, xi: ArrayLike, p: ArrayLike) -> Any:
        """Optimal repayment fraction: (L')^-1(xi/p), zero when xi/p <= L'(0)."""
        p_arr = np.asarray(p, dtype=float)
        if np.any(p_arr <= 0):
            raise DomainError(f"Bond price must be positive, got min p={p_arr.min()}")
        return self.costs.L.inverse_deriv(np.asarray(xi, dtype=float) / p_arr)

    def v_star(self, x: ArrayLike, xi: ArrayLike) -> Any:
        """Optimal devaluation rate: (c')^-1(x*xi), zero when x*xi <= c'(0)."""
        return self.costs.c.inverse_deriv(
            np.asarray(x, dtype=float) * np.asarray(xi, dtype=float)
        )

    #####################
    # VALUE AND GRADIENT #
    #####################

    def drift_coefficient(self, p: ArrayLike) -> Any:
        pr = self.params
        return (pr.lam + pr.r) / np.asarray(p, dtype=float) - pr.lam - pr.mu + pr.sigma**2

    def _check(self, x: ArrayLike, p: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
        x_arr = np.asarray(x, dtype=float)
        p_arr = np.asarray(p, dtype=float)
        if np.any(p_arr <= 0):
            raise DomainError(f"Bond price must be positive, got min p={p_arr.min()}")
        if np.any(x_arr < 0):
            raise DomainError(f"Debt ratio must be nonnegative, got min x={x_arr.min()}")
        return x_arr, p_arr

    def value(self, x: ArrayLike, xi: ArrayLike, p: ArrayLike) -> Any:
        x_arr, p_arr = self._check(x, p)
        xi_arr = np.asarray(xi, dtype=float)
        result = (
            -self.costs.L.conjugate(xi_arr / p_arr)
            - self.costs.c.conjugate(x_arr * xi_arr)
            + self.drift_coefficient(p_arr) * x_arr * xi_arr
        )
        return _out(result)

    def grad_xi(self, x: ArrayLike, xi: ArrayLike, p: ArrayLike) -> Any:
        """H_xi = (x*((lambda+r) - p*(lambda+mu+v*-sigma^2)) - u*)/p; also the drift."""
        x_arr, p_arr = self._check(x, p)
        xi_arr = np.asarray(xi, dtype=float)
        pr = self.params
        u = self.costs.L.inverse_deriv(xi_arr / p_arr)
        v = self.costs.c.inverse_deriv(x_arr * xi_arr)
        bracket = (pr.lam + pr.r) - p_arr * (pr.lam + pr.mu + v - pr.sigma**2)
        return _out((x_arr * bracket - u) / p_arr)

    def evaluate(self, x: ArrayLike, xi: ArrayLike, p: ArrayLike) -> HamiltonEval:
        x_arr, p_arr = self._check(x, p)
        xi_arr = np.asarray(xi, dtype=float)
        pr = self.params
        u = np.asarray(self.costs.L.inverse_deriv(xi_arr / p_arr))
        v = np.asarray(self.costs.c.inverse_deriv(x_arr * xi_arr))
        value = (
            -self.costs.L.conjugate(xi_arr / p_arr)
            - self.costs.c.conjugate(x_arr * xi_arr)
            + self.drift_coefficient(p_arr) * x_arr * xi_arr
        )
        bracket = (pr.lam + pr.r) - p_arr * (pr.lam + pr.mu + v - pr.sigma**2)
        return HamiltonEval(
            value=_out(value),
            grad_x=_out(bracket * xi_arr / p_arr),
            grad_xi=_out((x_arr * bracket - u) / p_arr),
            grad_p=_out((u - x_arr * (pr.lam + pr.r)) * xi_arr / p_arr**2),
            u_opt=_out(u),
            v_opt=_out(v),
        )

    def upper_bound(self, x: ArrayLike, xi: ArrayLike, p: ArrayLike) -> Any:
        """H <= ((lambda+r)/p - lambda - mu + sigma^2)*x*xi for xi >= 0"""
        return _out(self.drift_coefficient(p) * np.asarray(x) * np.asarray(xi))

    def lower_bound(self, x: ArrayLike, xi: ArrayLike, p: ArrayLike) -> Any:
        """H >= (((lambda+r)*x - 1)/p + (sigma^2 - lambda - mu - v_max)*x)*xi for xi >= 0"""
        pr = self.params
        x_arr = np.asarray(x, dtype=float)
        p_arr = np.asarray(p, dtype=float)
        slope = ((pr.lam + pr.r) * x_arr - 1.0) / p_arr + (
            pr.sigma**2 - pr.lam - pr.mu - pr.v_max
        ) * x_arr
        return _out(slope * np.asarray(xi, dtype=float))

    ###################
    # BRANCH FUNCTIONS #
    ###################

    def xi_sharp(self, x: float, p: float) -> BranchPoint:
        """Unique maximizer of xi -> H(x, xi, p) on [0, inf)."""
        if x <= 0:
            raise DomainError(f"xi_sharp needs x > 0, got {x}")
        if not 0 < p <= 1 + 1e-12:
            raise DomainError(f"xi_sharp needs p in (0, 1], got {p}")
        hi = 1.0
        while self.grad_xi(x, hi, p) > 0:
            hi *= 2.0
            if hi > XI_CAP:
                raise BracketError(
                    f"H_xi stays positive up to xi={XI_CAP:g} at x={x:g}, p={p:g}; "
                    "H is unbounded on this slice"
                )
        if self.grad_xi(x, 0.0, p) <= 0:
            xi = 0.0
        else:
            xi = brentq(lambda s: self.grad_xi(x, s, p), 0.0, hi, xtol=self.tol_root)
        return BranchPoint(
            xi_sharp=float(xi),
            h_max=float(self.value(x, xi, p)),
            u_sharp=float(self.u_star(xi, p)),
            v_sharp=float(self.v_star(x, xi)),
        )

    def h_max(self, x: float, p: float) -> float:
        return self.xi_sharp(x, p).h_max

    def xi_sharp_array(self, x: ArrayLike, p: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized (xi_sharp, h_max) for x > 0; unbounded slices give inf."""
        x_arr, p_arr = np.broadcast_arrays(
            np.asarray(x, dtype=float), np.asarray(p, dtype=float)
        )
        x_arr = x_arr.astype(float)
        p_arr = p_arr.astype(float)
        hi = grow_bracket(
            lambda s: np.asarray(self.grad_xi(x_arr, s, p_arr)),
            np.ones_like(x_arr),
            cap=XI_CAP,
        )
        bounded = np.isfinite(hi)
        hi_safe = np.where(bounded, hi, 1.0)
        xi = bisect_array(
            lambda s: np.asarray(self.grad_xi(x_arr, s, p_arr)),
            np.zeros_like(x_arr),
            hi_safe,
            tol=self.tol_root,
        )
        xi = np.where(bounded, xi, np.inf)
        value = np.where(
            bounded, np.asarray(self.value(x_arr, np.where(bounded, xi, 0.0), p_arr)), np.inf
        )
        return xi, value

    def f_branch(
        self,
        x: float,
        eta: float,
        p: float,
        branch: Literal["minus", "plus"] = "minus",
        sharp: BranchPoint | None = None,
        clamp: bool = False,
    ) -> float:
        """Solution of H(x, xi, p) = r*eta on the requested side of xi_sharp.

        Args:
            x: Debt ratio, positive
            eta: Value level
            p: Bond price in (0, 1]
            branch: ``minus`` for xi <= xi_sharp, ``plus`` for xi >= xi_sharp
            sharp: Precomputed branch point at (x, p)
            clamp: Return xi_sharp instead of raising when r*eta exceeds H^max
        Returns:
            The adjoint value on the branch
        """
        if eta < 0:
            raise DomainError(f"Value level must be nonnegative, got {eta}")
        point = sharp or self.xi_sharp(x, p)
        level = self.params.r * eta
        slack = 1e-12 * max(1.0, abs(point.h_max))
        if level >= point.h_max - slack:
            if level > point.h_max + slack and not clamp:
                raise NoSolutionError(
                    f"r*eta={level:.6g} exceeds H^max={point.h_max:.6g} at x={x:g}, p={p:g}"
                )
            return point.xi_sharp
        if level <= 0:
            if branch == "minus":
                return 0.0
        match branch:
            case "minus":
                return float(
                    brentq(
                        lambda s: self.value(x, s, p) - level,
                        0.0,
                        point.xi_sharp,
                        xtol=self.tol_root,
                    )
                )
            case "plus":
                hi = max(2.0 * point.xi_sharp, 1.0)
                while self.value(x, hi, p) > level:
                    hi *= 2.0
                    if hi > XI_CAP:
                        raise BracketError(f"F+ not bracketed below {XI_CAP:g} at x={x:g}")
                return float(
                    brentq(
                        lambda s: self.value(x, s, p) - level,
                        point.xi_sharp,
                        hi,
                        xtol=self.tol_root,
                    )
                )
            case _:
                raise ValueError(f"Unknown branch: {branch}")

    def g_minus(self, x: float, eta: float, p: float, xi: float | None = None) -> float:
        """Price slope ((r+lambda+v*)*p - (r+lambda)) / H_xi on the F- branch."""
        pr = self.params
        adjoint = self.f_branch(x, eta, p, "minus") if xi is None else xi
        slope = float(self.grad_xi(x, adjoint, p))
        if abs(slope) < self.tol_branch:
            raise BranchDegeneracyError(
                f"H_xi={slope:.3g} below {self.tol_branch:g} at x={x:g}, eta={eta:g}"
            )
        v = float(self.v_star(x, adjoint))
        return ((pr.r + pr.lam + v) * p - (pr.r + pr.lam)) / slope

    def holder_constant(self, x1: float, p1: float) -> float:
        """Modulus C with |F-(x,eta1,p) - F-(x,eta2,p)| <= C*|eta1-eta2|^(1/2)
        on [x1, x*] x [p1, 1]."""
        pr = self.params
        delta0 = self.costs.delta0
        first = math.sqrt(2.0 * pr.r * delta0 / min(1.0, x1**2 * p1))
        second = math.sqrt(2.0 * pr.B) * pr.r / ((pr.r - pr.mu) * x1)
        return first + second

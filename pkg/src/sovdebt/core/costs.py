"""Cost families for the implementing cost L(u) and the devaluation cost c(v).

Both costs belong to the barrier family

    f(z) = k0*z + k1*z**2 / (1 - z/m),    0 <= z < m,

extended by +inf outside [0, m). ``m = inf`` gives the quadratic cost
``k0*z + k1*z**2``. Every operation is vectorized and returns a float for scalar
input.
"""

from abc import ABC, abstractmethod
from functools import cached_property
import math
from typing import Any

try:
    from typing import override
except ImportError:  # Python < 3.12
    from typing_extensions import override

import numpy as np
from numpy.typing import ArrayLike
from scipy.optimize import brentq

from ..models.config import CostsConfig


def _out(values: np.ndarray) -> Any:
    return float(values) if values.ndim == 0 else values


class CostFunction(ABC):
    """Convex, increasing cost with a barrier at the right end of its domain"""

    @property
    @abstractmethod
    def upper(self) -> float:
        """Right end of the effective domain"""
        pass

    @property
    @abstractmethod
    def slope_at_zero(self) -> float:
        pass

    @abstractmethod
    def value(self, z: ArrayLike) -> Any:
        pass

    @abstractmethod
    def deriv(self, z: ArrayLike) -> Any:
        pass

    @abstractmethod
    def second(self, z: ArrayLike) -> Any:
        pass

    @abstractmethod
    def inverse_deriv(self, rho: ArrayLike) -> Any:
        """Minimizer of f(z) - rho*z over [0, upper): 0 when rho <= f'(0)"""
        pass

    def conjugate(self, rho: ArrayLike) -> Any:
        """Convex conjugate sup_z {rho*z - f(z)}"""
        rho_arr = np.asarray(rho, dtype=float)
        z = np.asarray(self.inverse_deriv(rho_arr), dtype=float)
        result = np.where(rho_arr > self.slope_at_zero, rho_arr * z - self.value(z), 0.0)
        return _out(np.maximum(result, 0.0))

    def inverse(self, level: float) -> float:
        """Solve f(z) = level for z in [0, upper)"""
        if level <= 0:
            return 0.0
        if math.isinf(self.upper):
            hi = 1.0
            while self.value(hi) < level:
                hi *= 2.0
        else:
            # f blows up at the barrier; step toward it until f(hi) >= level
            gap = 0.5
            hi = self.upper * (1.0 - gap)
            while self.value(hi) < level and gap > 1e-15:
                gap *= 0.5
                hi = self.upper * (1.0 - gap)
        return float(brentq(lambda z: float(self.value(z)) - level, 0.0, hi, xtol=1e-14))


class BarrierCost(CostFunction):
    """f(z) = k0*z + k1*z**2/(1 - z/cap)"""

    def __init__(self, k0: float, k1: float, cap: float = math.inf):
        if k0 < 0 or k1 <= 0 or cap <= 0:
            raise ValueError(f"Invalid barrier cost coefficients: {k0=}, {k1=}, {cap=}")
        self.k0 = k0
        self.k1 = k1
        self.cap = cap

    def __repr__(self) -> str:
        return f"BarrierCost(k0={self.k0}, k1={self.k1}, cap={self.cap})"

    @property
    @override
    def upper(self) -> float:
        return self.cap

    @property
    @override
    def slope_at_zero(self) -> float:
        return self.k0

    def _split(self, z: ArrayLike) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        zs = np.asarray(z, dtype=float)
        inside = (zs >= 0) & (zs < self.cap)
        safe = np.where(inside, zs, 0.0)
        return zs, inside, safe

    @override
    def value(self, z: ArrayLike) -> Any:
        _, inside, zz = self._split(z)
        w = 1.0 - zz / self.cap
        return _out(np.where(inside, self.k0 * zz + self.k1 * zz**2 / w, np.inf))

    @override
    def deriv(self, z: ArrayLike) -> Any:
        _, inside, zz = self._split(z)
        w = 1.0 - zz / self.cap
        slope = self.k0 + self.k1 * zz * (2.0 - zz / self.cap) / w**2
        return _out(np.where(inside, slope, np.inf))

    @override
    def second(self, z: ArrayLike) -> Any:
        _, inside, zz = self._split(z)
        w = 1.0 - zz / self.cap
        return _out(np.where(inside, 2.0 * self.k1 / w**3, np.inf))

    @override
    def inverse_deriv(self, rho: ArrayLike) -> Any:
        rho_arr = np.asarray(rho, dtype=float)
        s = np.maximum(rho_arr - self.k0, 0.0) / self.k1
        with np.errstate(invalid="ignore"):
            root = np.sqrt(1.0 + s / self.cap)
            # stable form of cap*(1 - 1/root), exact at cap = inf
            z = s / (root * (root + 1.0))
        return _out(np.where(np.isfinite(s), z, self.cap))


class CostModel:
    """Implementing cost L on [0, 1) and devaluation cost c on [0, v_max)"""

    def __init__(self, L: CostFunction, c: CostFunction):
        self.L = L
        self.c = c

    @classmethod
    def from_config(cls, costs: CostsConfig, v_max: float) -> "CostModel":
        return cls(
            L=BarrierCost(costs.a0, costs.a, cap=1.0),
            c=BarrierCost(costs.b0, costs.b1, cap=v_max),
        )

    @cached_property
    def delta0(self) -> float:
        """Infimum of L'' and c'' over their domains, sampled on a fine grid"""
        u_grid = np.linspace(0.0, 1.0, 10_001)[:-1]
        v_top = self.c.upper if math.isfinite(self.c.upper) else 1e3
        v_grid = np.linspace(0.0, v_top, 10_001)[:-1]
        return float(min(np.min(self.L.second(u_grid)), np.min(self.c.second(v_grid))))

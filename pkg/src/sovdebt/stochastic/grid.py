from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray

from ..models.params import ModelParams


@dataclass(frozen=True)
class Grid:
    """Uniform grid 0 = x_0 < ... < x_{n-1} = x*"""

    n: int
    xs: NDArray[np.float64]
    h: float

    @classmethod
    def uniform(cls, x_star: float, n: int) -> "Grid":
        if n < 3:
            raise ValueError(f"Grid needs at least 3 nodes, got {n}")
        xs = np.linspace(0.0, x_star, n)
        xs[-1] = x_star
        return cls(n=n, xs=xs, h=x_star / (n - 1))

    @property
    def interior(self) -> NDArray[np.float64]:
        return self.xs[1:-1]


@dataclass(frozen=True)
class ParabolicState:
    """Value and price iterates of the regularized system"""

    V: NDArray[np.float64]
    p: NDArray[np.float64]
    eps: float
    t: float = 0.0

    def with_eps(self, eps: float) -> "ParabolicState":
        return replace(self, eps=eps, t=0.0)


def linear_state(params: ModelParams, grid: Grid, eps: float) -> ParabolicState:
    """Linear interpolants of the boundary data, inside the invariant box."""
    frac = grid.xs / params.x_star
    V = params.B * frac
    p = 1.0 + (params.theta_star - 1.0) * frac
    return pin_boundary(ParabolicState(V=V, p=p, eps=eps), params)


def pin_boundary(state: ParabolicState, params: ModelParams) -> ParabolicState:
    V = state.V.copy()
    p = state.p.copy()
    V[0], V[-1] = 0.0, params.B
    p[0], p[-1] = 1.0, params.theta_star
    return replace(state, V=V, p=p)

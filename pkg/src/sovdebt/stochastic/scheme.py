"""Semi-implicit pseudo-time stepping of the regularized equilibrium system

    V_t = -r V + H(x, V_x, p + eps) + (eps + sigma^2 x^2/2) V_xx
    p_t = (r+lambda) - (r+lambda+v*) p + H_xi(x, V_x, p + eps) p_x
          + (eps + sigma^2 x^2/2) p_xx

with V(0) = 0, V(x*) = B, p(0) = 1, p(x*) = theta(x*).

The Hamiltonian is discretized by the monotone upwind rule
min{H+(xi_F), H-(xi_B)}: H+ (H-) agrees with H where H_xi >= 0 (<= 0) and equals
H^max elsewhere. The drift of the selected control upwinds p_x. Diffusion and
the reaction terms are implicit (tridiagonal solves), the rest explicit, so the
update is monotone under dt <= h / max|H_xi| and keeps
[0, B] x [theta_min, 1] invariant.
"""

from dataclasses import dataclass
import logging

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import solve_banded

from ..core.hamiltonian import Hamiltonian
from ..core.roots import bisect_array
from ..errors import InstabilityError
from .grid import Grid, ParabolicState

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class UpwindTerms:
    """Interior-node quantities of the upwind Hamiltonian"""

    h_hat: NDArray[np.float64]
    drift: NDArray[np.float64]
    xi: NDArray[np.float64]
    v: NDArray[np.float64]
    max_speed: float


class ParabolicScheme:
    def __init__(
        self,
        hamiltonian: Hamiltonian,
        grid: Grid,
        cfl: float = 0.9,
        dt_max: float = 1.0,
        box_tol: float = 1e-10,
    ):
        self.hamiltonian = hamiltonian
        self.params = hamiltonian.params
        self.grid = grid
        self.cfl = cfl
        self.dt_max = dt_max
        self.box_tol = box_tol
        self.theta_min = self.params.theta_min

    def diffusion(self, eps: float) -> NDArray[np.float64]:
        x = self.grid.interior
        return eps + 0.5 * self.params.sigma**2 * x**2

    def upwind(self, V: NDArray[np.float64], p: NDArray[np.float64], shift: float) -> UpwindTerms:
        """Upwind Hamiltonian at interior nodes with price p + shift."""
        H = self.hamiltonian
        h = self.grid.h
        x = self.grid.interior
        q = p[1:-1] + shift
        xi_f = (V[2:] - V[1:-1]) / h
        xi_b = (V[1:-1] - V[:-2]) / h
        fwd = H.evaluate(x, xi_f, q)
        bwd = H.evaluate(x, xi_b, q)
        grad_f = np.asarray(fwd.grad_xi)
        grad_b = np.asarray(bwd.grad_xi)
        value_f = np.asarray(fwd.value)
        value_b = np.asarray(bwd.value)

        plus_ok = grad_f >= 0
        minus_ok = grad_b <= 0
        use_f = plus_ok & (~minus_ok | (value_f <= value_b))
        peak = ~plus_ok & ~minus_ok

        h_hat = np.where(use_f, value_f, value_b)
        drift = np.where(use_f, grad_f, grad_b)
        xi = np.where(use_f, xi_f, xi_b)
        v = np.where(use_f, np.asarray(fwd.v_opt), np.asarray(bwd.v_opt))

        if np.any(peak):
            # H_xi changes sign between xi_B and xi_F: the selected value is H^max
            xk, qk = x[peak], q[peak]
            xi_peak = bisect_array(
                lambda s: np.asarray(H.grad_xi(xk, s, qk)),
                xi_b[peak],
                xi_f[peak],
                tol=H.tol_root,
            )
            h_hat[peak] = np.asarray(H.value(xk, xi_peak, qk))
            drift[peak] = 0.0
            xi[peak] = xi_peak
            v[peak] = np.asarray(H.v_star(xk, xi_peak))

        speed = float(max(np.max(np.abs(grad_f)), np.max(np.abs(grad_b)), 0.0))
        return UpwindTerms(h_hat=h_hat, drift=drift, xi=xi, v=v, max_speed=speed)

    def stable_dt(self, terms: UpwindTerms) -> float:
        if terms.max_speed <= 0:
            return self.dt_max
        return min(self.dt_max, self.cfl * self.grid.h / terms.max_speed)

    def _implicit_solve(
        self,
        rhs: NDArray[np.float64],
        reaction: NDArray[np.float64],
        diff: NDArray[np.float64],
        dt: float,
        left: float,
        right: float,
    ) -> NDArray[np.float64]:
        """Solve (1 + dt*reaction) y - dt*diff*D2 y = rhs with pinned ends."""
        k = dt * diff / self.grid.h**2
        m = rhs.size
        ab = np.zeros((3, m))
        ab[0, 1:] = -k[:-1]
        ab[1, :] = 1.0 + dt * reaction + 2.0 * k
        ab[2, :-1] = -k[1:]
        b = rhs.copy()
        b[0] += k[0] * left
        b[-1] += k[-1] * right
        return np.asarray(solve_banded((1, 1), ab, b))

    def upwind_price_slope(
        self, p: NDArray[np.float64], drift: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        h = self.grid.h
        forward = (p[2:] - p[1:-1]) / h
        backward = (p[1:-1] - p[:-2]) / h
        return np.where(drift > 0, forward, backward)

    def _advance(
        self, state: ParabolicState, dt: float | None
    ) -> tuple[ParabolicState, float]:
        pr = self.params
        terms = self.upwind(state.V, state.p, state.eps)
        step = self.stable_dt(terms) if dt is None else dt
        diff = self.diffusion(state.eps)

        V = state.V.copy()
        rhs_v = state.V[1:-1] + step * terms.h_hat
        V[1:-1] = self._implicit_solve(
            rhs_v, np.full_like(rhs_v, pr.r), diff, step, V[0], V[-1]
        )

        p = state.p.copy()
        transport = terms.drift * self.upwind_price_slope(state.p, terms.drift)
        rhs_p = state.p[1:-1] + step * ((pr.r + pr.lam) + transport)
        p[1:-1] = self._implicit_solve(
            rhs_p, pr.r + pr.lam + terms.v, diff, step, p[0], p[-1]
        )

        V, p = self._enforce_box(V, p)
        return ParabolicState(V=V, p=p, eps=state.eps, t=state.t + step), step

    def _enforce_box(
        self, V: NDArray[np.float64], p: NDArray[np.float64]
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        B = self.params.B
        over_v = max(float(np.max(V - B)), float(np.max(-V)), 0.0)
        over_p = max(float(np.max(p - 1.0)), float(np.max(self.theta_min - p)), 0.0)
        if not (np.all(np.isfinite(V)) and np.all(np.isfinite(p))):
            raise InstabilityError("Non-finite iterate in the parabolic step")
        if over_v > self.box_tol or over_p > self.box_tol:
            raise InstabilityError(
                f"Iterate left the invariant box (V overshoot {over_v:.3g}, "
                f"p overshoot {over_p:.3g}); pseudo-time step too large"
            )
        if over_v > 0 or over_p > 0:
            logger.debug(f"Clamped round-off overshoot V={over_v:.2g}, p={over_p:.2g}")
        return np.clip(V, 0.0, B), np.clip(p, self.theta_min, 1.0)

    ####################
    # PUBLIC INTERFACE #
    ####################

    def step(self, state: ParabolicState, dt: float) -> ParabolicState:
        """One semi-implicit update with a fixed pseudo-time step."""
        if dt <= 0:
            raise ValueError(f"Pseudo-time step must be positive, got {dt}")
        return self._advance(state, dt)[0]

    def advance(self, state: ParabolicState) -> tuple[ParabolicState, float]:
        """One update with the largest monotone step; returns (state, dt)."""
        return self._advance(state, None)

    def residuals(
        self, V: NDArray[np.float64], p: NDArray[np.float64], eps: float = 0.0
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Upwind residuals of the stationary system (eps = 0 gives the limit system)."""
        pr = self.params
        h = self.grid.h
        terms = self.upwind(V, p, eps)
        diff = self.diffusion(eps)
        d2v = (V[2:] - 2.0 * V[1:-1] + V[:-2]) / h**2
        d2p = (p[2:] - 2.0 * p[1:-1] + p[:-2]) / h**2
        res_v = -pr.r * V[1:-1] + terms.h_hat + diff * d2v
        res_p = (
            (pr.r + pr.lam)
            - (pr.r + pr.lam + terms.v) * p[1:-1]
            + terms.drift * self.upwind_price_slope(p, terms.drift)
            + diff * d2p
        )
        return res_v, res_p

    def centred_residuals(
        self, V: NDArray[np.float64], p: NDArray[np.float64]
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Limit-system residuals rebuilt with centred differences and the exact H.

        Shares no operator with the marching scheme, so on a converged state it
        measures the discretization error rather than the steady-state error.
        """
        pr = self.params
        h = self.grid.h
        x = self.grid.interior
        q = p[1:-1]
        xi = (V[2:] - V[:-2]) / (2.0 * h)
        slope_p = (p[2:] - p[:-2]) / (2.0 * h)
        diff = self.diffusion(0.0)
        d2v = (V[2:] - 2.0 * V[1:-1] + V[:-2]) / h**2
        d2p = (p[2:] - 2.0 * p[1:-1] + p[:-2]) / h**2
        ev = self.hamiltonian.evaluate(x, xi, q)
        res_v = -pr.r * V[1:-1] + np.asarray(ev.value) + diff * d2v
        res_p = (
            (pr.r + pr.lam)
            - (pr.r + pr.lam + np.asarray(ev.v_opt)) * q
            + np.asarray(ev.grad_xi) * slope_p
            + diff * d2p
        )
        return res_v, res_p

import math
from typing import Annotated, Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..errors import ConfigError


class ConstantSalvage(BaseModel):
    """Salvage rate independent of the bankruptcy threshold: theta(s) = theta0"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["constant"] = "constant"
    theta0: float = Field(ge=0.0, le=1.0)

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        return np.full_like(np.asarray(x, dtype=float), self.theta0)

    @property
    def sup_product(self) -> float:
        """sup over s of theta(s)*s"""
        return math.inf if self.theta0 > 0 else 0.0

    @property
    def limsup_product(self) -> float:
        return self.sup_product


class CappedSalvage(BaseModel):
    """Salvage rate with bounded recovery: theta(s) = min(theta0, R/s)"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["capped"] = "capped"
    theta0: float = Field(ge=0.0, le=1.0)
    R: float = Field(gt=0.0)

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        xs = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            capped = np.where(xs > 0, self.R / np.where(xs > 0, xs, 1.0), np.inf)
        return np.minimum(self.theta0, capped)

    @property
    def sup_product(self) -> float:
        return self.R if self.theta0 > 0 else 0.0

    @property
    def limsup_product(self) -> float:
        return self.R if self.theta0 > 0 else 0.0


SalvageRate = Annotated[ConstantSalvage | CappedSalvage, Field(discriminator="kind")]


class ModelParams(BaseModel):
    """Economic constants of the debt-management model"""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    r: float = Field(ge=0.0, description="discount rate [1/time]")
    mu: float = Field(description="mean GDP growth rate [1/time]")
    lam: float = Field(alias="lambda", ge=0.0, description="principal repayment rate")
    sigma: float = Field(default=0.0, ge=0.0, description="GDP volatility")
    x_star: float = Field(gt=0.0, description="bankruptcy debt-to-income threshold")
    B: float = Field(gt=0.0, description="bankruptcy cost [utility]")
    v_max: float = Field(default=math.inf, gt=0.0, description="devaluation bound")
    theta: SalvageRate

    @model_validator(mode="after")
    def _check_rates(self) -> "ModelParams":
        if not self.r > self.mu:
            raise ValueError(f"r must exceed mu (r={self.r}, mu={self.mu})")
        return self

    @property
    def theta_star(self) -> float:
        """Salvage rate at the bankruptcy threshold"""
        return float(self.theta(self.x_star))

    @property
    def theta_min(self) -> float:
        """Lower bound of the bond price: min{theta(x*), (r+lambda)/(r+lambda+v_max)}"""
        floor = (self.r + self.lam) / (self.r + self.lam + self.v_max)
        return min(self.theta_star, floor)

    @property
    def is_stochastic(self) -> bool:
        return self.sigma > 0

    def require_stochastic(self) -> None:
        if self.sigma <= 0:
            raise ConfigError("model.sigma must be positive for the stochastic solver")
        if not math.isfinite(self.v_max):
            raise ConfigError("model.v_max must be finite for the stochastic solver")
        if self.theta_star <= 0:
            raise ConfigError("theta(x_star) must be positive for the stochastic solver")

    def require_deterministic(self) -> None:
        if self.sigma != 0:
            raise ConfigError(
                f"model.sigma must be 0 for the deterministic solver (got {self.sigma})"
            )

    def with_threshold(self, x_star: float) -> "ModelParams":
        return self.model_copy(update={"x_star": x_star})

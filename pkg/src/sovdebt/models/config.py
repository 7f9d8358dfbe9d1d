from collections.abc import Iterable
import logging
import math
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
import yaml

from ..errors import ConfigError
from ..util import env_var
from .params import ModelParams

logger = logging.getLogger(__name__)

CONFIG_DIR_ENV = "SOVDEBT_CONFIG_DIR"


class CostsConfig(BaseModel):
    """Coefficients of L(u) = a0*u + a*u^2/(1-u) and c(v) = b0*v + b1*v^2/(1-v/v_max)"""

    model_config = ConfigDict(frozen=True)

    a0: float = Field(default=0.0, ge=0.0, description="L'(0)")
    a: float = Field(default=1.0, gt=0.0)
    b0: float = Field(default=0.1, ge=0.0, description="c'(0)")
    b1: float = Field(default=1.0, gt=0.0)


class SolverConfig(BaseModel):
    """Tolerances, grids and continuation ladders for both solvers"""

    model_config = ConfigDict(frozen=True)

    # stochastic relaxation
    grid_nodes: int = Field(default=201, ge=3)
    eps_ladder: list[float] = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 1e-5, 1e-6]
    tol_steady: float = Field(default=1e-9, gt=0.0)
    tol_pde: float = Field(default=1e-6, gt=0.0)
    max_steps: int = Field(default=1_000_000, ge=1)
    cfl: float = Field(default=0.9, gt=0.0, le=1.0)
    dt_max: float = Field(default=1.0, gt=0.0)
    box_tol: float = Field(default=1e-10, ge=0.0)
    residual_growth: float = Field(default=1.5, ge=1.0)
    extra_rungs: int = Field(default=3, ge=0)

    # shared root finding
    tol_root: float = Field(default=1e-12, gt=0.0)
    tol_branch: float = Field(default=1e-8, gt=0.0)

    # deterministic construction
    ode_rtol: float = Field(default=1e-9, gt=0.0)
    ode_atol: float = Field(default=1e-12, gt=0.0)
    tol_ode: float = Field(default=1e-8, gt=0.0, description="arc residual certificate")
    x_min_fraction: float = Field(default=1e-6, gt=0.0, lt=1.0)
    restart_levels: int = Field(default=13, ge=3)
    restart_eps0: float = Field(default=1e-2, gt=0.0)
    restart_agreement_tol: float = Field(default=1e-6, gt=0.0)
    w_spline_nodes: int = Field(default=10_000, ge=10)
    workers: int = Field(default=1, ge=1)

    @field_validator("eps_ladder")
    @classmethod
    def _decreasing(cls, ladder: list[float]) -> list[float]:
        if not ladder:
            raise ValueError("eps_ladder cannot be empty")
        if any(eps <= 0 for eps in ladder):
            raise ValueError("eps_ladder entries must be positive")
        if any(b >= a for a, b in zip(ladder, ladder[1:], strict=False)):
            raise ValueError("eps_ladder must be strictly decreasing")
        return ladder


class SimConfig(BaseModel):
    """Monte-Carlo and closed-loop simulation settings"""

    model_config = ConfigDict(frozen=True)

    x0: float | None = Field(default=None, ge=0.0, description="defaults to x_star/2")
    dt: float = Field(default=1e-3, gt=0.0)
    horizon: float | None = Field(default=None, gt=0.0)
    n_paths: int = Field(default=100_000, ge=1)
    seed: int = 12345
    antithetic: bool = False
    block_size: int = Field(default=10_000, ge=1)
    trace_paths: int = Field(default=0, ge=0)
    workers: int = Field(default=1, ge=1)

    def horizon_for(self, r: float) -> float:
        """T_max with exp(-r*T_max) < 1e-4"""
        if self.horizon is not None:
            return self.horizon
        return math.log(1e4) / r * 1.01 if r > 0 else 1e3


class ChecksConfig(BaseModel):
    """Settings for the cross-check suite run by `verify`"""

    model_config = ConfigDict(frozen=True)

    x0_fractions: list[float] = [0.1, 0.3, 0.5, 0.7, 0.9]
    se_multiple: float = Field(default=3.0, gt=0.0)
    tol_sim: float = Field(default=1e-5, gt=0.0)
    tol_price: float = Field(default=1e-4, gt=0.0)
    n_controls: int = Field(default=50, ge=1)
    control_pieces: int = Field(default=8, ge=1)
    control_horizon: float = Field(default=100.0, gt=0.0)
    tol_consistency: float = Field(default=1e-2, gt=0.0)
    tol_dp: float = Field(default=1e-6, ge=0.0)
    dp_u_cap: float = Field(default=0.95, gt=0.0, lt=1.0)
    dp_v_cap: float = Field(default=1.0, ge=0.0)
    early_bankruptcy_points: int = Field(default=10, ge=1)
    hamiltonian_samples: int = Field(default=1000, ge=1)
    conjugate_samples: int = Field(default=100, ge=1)
    conjugate_grid: int = Field(default=1_000_000, ge=10)
    constant_samples: int = Field(default=50, ge=1)
    seed: int = 2024


class SweepConfig(BaseModel):
    """x_star sweep for the asymptotic dichotomy"""

    model_config = ConfigDict(frozen=True)

    xstar_grid: list[float] = [2.0, 4.0, 8.0, 16.0, 32.0]
    probe_x: float = Field(default=1.0, gt=0.0)
    ratio_threshold: float = Field(default=0.1, gt=0.0, lt=1.0)
    bound_slack: float = Field(default=0.05, ge=0.0, lt=1.0)


class OutputConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    directory: str = "out"
    formats: list[Literal["csv", "json"]] = ["csv", "json"]


class RunConfig(BaseModel):
    """Complete run configuration, one section per concern"""

    model_config = ConfigDict(frozen=True)

    model: ModelParams
    costs: CostsConfig = CostsConfig()
    solver: SolverConfig = SolverConfig()
    sim: SimConfig = SimConfig()
    checks: ChecksConfig = ChecksConfig()
    sweep: SweepConfig = SweepConfig()
    output: OutputConfig = OutputConfig()


def resolve_config_path(path: str | Path) -> Path:
    """Resolve a relative config path against $SOVDEBT_CONFIG_DIR when set."""
    candidate = Path(path)
    if candidate.is_absolute() or candidate.exists():
        return candidate
    base = env_var(CONFIG_DIR_ENV, allow_null=True)
    if base:
        return Path(base) / candidate
    return candidate


def apply_override(raw: dict[str, Any], assignment: str) -> None:
    """Apply one ``section.key=value`` assignment to a raw config mapping."""
    if "=" not in assignment:
        raise ConfigError(f"Override '{assignment}' is not of the form key=value")
    key, text = assignment.split("=", 1)
    parts = [part for part in key.strip().split(".") if part]
    if not parts:
        raise ConfigError(f"Override '{assignment}' has an empty key")
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as error:
        raise ConfigError(f"Cannot parse value of override '{key}': {error}") from error
    node = raw
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"Override '{key}' descends into a non-section")
        node = child
    node[parts[-1]] = value


def _format_validation(error: ValidationError) -> str:
    problems = []
    for detail in error.errors():
        location = ".".join(str(part) for part in detail["loc"])
        problems.append(f"{location}: {detail['msg']}")
    return "; ".join(problems)


def build_config(raw: dict[str, Any], overrides: Iterable[str] = ()) -> RunConfig:
    for assignment in overrides:
        apply_override(raw, assignment)
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as error:
        raise ConfigError(f"Invalid configuration: {_format_validation(error)}") from error


def load_config(path: str | Path | None, overrides: Iterable[str] = ()) -> RunConfig:
    """Load a sectioned YAML config file and apply ``--set`` overrides.

    Args:
        path: Config file; ``None`` starts from an empty mapping
        overrides: ``section.key=value`` assignments applied in order
    Returns:
        The validated configuration
    """
    raw: dict[str, Any] = {}
    if path is not None:
        resolved = resolve_config_path(path)
        try:
            with open(resolved, encoding="utf-8") as f:
                loaded = yaml.safe_load(f.read())
        except FileNotFoundError as error:
            raise ConfigError(f"Config file not found: {resolved}") from error
        except yaml.YAMLError as error:
            raise ConfigError(f"Config file {resolved} is not valid YAML: {error}") from error
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"Config file {resolved} must hold a mapping of sections")
        raw = loaded
        logger.debug(f"Loaded configuration from {resolved}")
    return build_config(raw, overrides)


CANONICAL_MODEL: dict[str, Any] = {
    "r": 0.1,
    "mu": 0.02,
    "lambda": 0.2,
    "sigma": 0.1,
    "x_star": 3.0,
    "B": 0.5,
    "v_max": 1.0,
    "theta": {"kind": "constant", "theta0": 0.5},
}


def reference_config() -> str:
    """YAML text listing every key with its default (canonical stochastic model)."""
    config = RunConfig.model_validate({"model": CANONICAL_MODEL})
    payload = config.model_dump(by_alias=True)
    header = (
        "# sovdebt reference configuration\n"
        "# Every section except `model` is optional; omitted keys take these values.\n"
        "# Override any key on the command line with --set section.key=value.\n"
    )
    return header + yaml.safe_dump(payload, sort_keys=False)

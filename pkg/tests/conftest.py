from pathlib import Path
from typing import Any

import pytest

from sovdebt.constant import ConstantStrategies
from sovdebt.core.costs import CostModel
from sovdebt.core.hamiltonian import Hamiltonian
from sovdebt.models.config import RunConfig, build_config

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

DET_MODEL: dict[str, Any] = {
    "r": 0.1,
    "mu": 0.02,
    "lambda": 0.2,
    "sigma": 0.0,
    "x_star": 3.0,
    "B": 0.5,
    "theta": {"kind": "constant", "theta0": 0.5},
}

STOCH_MODEL: dict[str, Any] = {**DET_MODEL, "sigma": 0.1, "v_max": 1.0}


def make_config(model: dict[str, Any], **sections: dict[str, Any]) -> RunConfig:
    return build_config({"model": dict(model), **sections})


@pytest.fixture
def det_config() -> RunConfig:
    return make_config(DET_MODEL)


@pytest.fixture
def stoch_config() -> RunConfig:
    return make_config(STOCH_MODEL)


@pytest.fixture
def det_hamiltonian(det_config: RunConfig) -> Hamiltonian:
    return Hamiltonian.from_config(det_config.model, det_config.costs, det_config.solver)


@pytest.fixture
def stoch_hamiltonian(stoch_config: RunConfig) -> Hamiltonian:
    return Hamiltonian.from_config(stoch_config.model, stoch_config.costs, stoch_config.solver)


@pytest.fixture
def det_costs(det_hamiltonian: Hamiltonian) -> CostModel:
    return det_hamiltonian.costs


@pytest.fixture
def det_constants(det_hamiltonian: Hamiltonian) -> ConstantStrategies:
    return ConstantStrategies(det_hamiltonian.params, det_hamiltonian.costs)

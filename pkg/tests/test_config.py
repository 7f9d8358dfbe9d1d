import math
from pathlib import Path

import pytest
import yaml

from sovdebt.errors import ConfigError
from sovdebt.models.config import (
    RunConfig,
    apply_override,
    build_config,
    load_config,
    reference_config,
)
from sovdebt.models.params import CappedSalvage, ConstantSalvage

from .conftest import CONFIG_DIR, DET_MODEL, STOCH_MODEL


def test_shipped_configs_validate():
    for path in sorted(CONFIG_DIR.glob("*.yaml")):
        config = load_config(path)
        assert config.model.r > config.model.mu


def test_acceptance_config_runs_at_full_size():
    config = load_config(CONFIG_DIR / "acceptance_stoch.yaml")
    assert config.solver.grid_nodes == 401
    assert config.solver.eps_ladder[-1] == pytest.approx(1e-6)
    assert config.sim.dt == pytest.approx(1e-3)
    assert config.sim.n_paths == 100_000
    assert config.model.sigma == pytest.approx(0.1)


def test_missing_field_names_the_path():
    model = {key: value for key, value in DET_MODEL.items() if key != "r"}
    with pytest.raises(ConfigError, match=r"model\.r"):
        build_config({"model": model})


def test_rate_ordering_enforced():
    with pytest.raises(ConfigError, match="r must exceed mu"):
        build_config({"model": {**DET_MODEL, "mu": 0.2}})


def test_lambda_alias():
    config = build_config({"model": dict(DET_MODEL)})
    assert config.model.lam == 0.2
    assert config.model.model_dump(by_alias=True)["lambda"] == 0.2


def test_overrides_apply_before_validation():
    config = build_config(
        {"model": dict(DET_MODEL)},
        ["model.x_star=5", "solver.eps_ladder=[1.0e-2, 1.0e-3]", "sim.antithetic=true"],
    )
    assert config.model.x_star == 5.0
    assert config.solver.eps_ladder == [1e-2, 1e-3]
    assert config.sim.antithetic is True


def test_malformed_overrides():
    with pytest.raises(ConfigError, match="key=value"):
        apply_override({}, "model.r")
    with pytest.raises(ConfigError, match="non-section"):
        apply_override({"model": 3}, "model.r=0.1")


def test_eps_ladder_must_decrease():
    with pytest.raises(ConfigError, match="eps_ladder"):
        build_config({"model": dict(DET_MODEL), "solver": {"eps_ladder": [1e-3, 1e-2]}})


def test_config_dir_environment(tmp_path: Path, monkeypatch: pytest.MonkeyPatch):
    (tmp_path / "mine.yaml").write_text(yaml.safe_dump({"model": STOCH_MODEL}))
    monkeypatch.setenv("SOVDEBT_CONFIG_DIR", str(tmp_path))
    monkeypatch.chdir(tmp_path.parent)
    config = load_config("mine.yaml")
    assert config.model.sigma == 0.1


def test_missing_and_malformed_files(tmp_path: Path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("- just\n- a list\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(bad)


def test_regime_checks():
    det = build_config({"model": dict(DET_MODEL)}).model
    stoch = build_config({"model": dict(STOCH_MODEL)}).model
    with pytest.raises(ConfigError, match="sigma must be positive"):
        det.require_stochastic()
    with pytest.raises(ConfigError, match="sigma must be 0"):
        stoch.require_deterministic()
    with pytest.raises(ConfigError, match="v_max must be finite"):
        stoch.model_copy(update={"v_max": math.inf}).require_stochastic()
    stoch.require_stochastic()
    det.require_deterministic()


def test_salvage_families():
    constant = ConstantSalvage(theta0=0.5)
    capped = CappedSalvage(theta0=0.5, R=1.0)
    assert constant(4.0) == 0.5
    assert capped(1.0) == 0.5
    assert capped(4.0) == pytest.approx(0.25)
    assert math.isinf(constant.sup_product)
    assert capped.sup_product == 1.0
    assert capped.limsup_product == 1.0


def test_theta_min_uses_devaluation_floor():
    params = build_config({"model": dict(STOCH_MODEL)}).model
    assert params.theta_min == pytest.approx(min(0.5, 0.3 / 1.3))


def test_reference_config_round_trips():
    loaded = yaml.safe_load(reference_config())
    config = RunConfig.model_validate(loaded)
    assert config.solver.grid_nodes == 201
    assert config.model.sigma == 0.1

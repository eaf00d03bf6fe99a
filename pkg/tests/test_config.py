import json
from pathlib import Path

import pytest

from tweezer_transport.config import ConfigError, ExperimentConfig, config_from_dict, load_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.mark.parametrize("name", ["sr88.toml", "li6.toml"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.tier in ExperimentConfig.TIERS
    assert cfg.weights.gamma_u == 1e-3 and cfg.weights.nu_u == 0.1


def test_quantum_config_has_epsilon():
    cfg = load_config(CONFIGS / "li6.toml")
    assert cfg.tier == "quantum" and cfg.epsilon == pytest.approx(0.22)


def test_defaults_round_trip_through_json(tmp_path):
    cfg = config_from_dict({})
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert load_config(path) == cfg


def test_unknown_keys_are_reported_with_path():
    with pytest.raises(ConfigError) as err:
        config_from_dict({"traps": {"depht_mK": 1.0}, "bogus": 1})
    assert "traps.depht_mK: unknown key" in err.value.problems
    assert "bogus: unknown key" in err.value.problems


@pytest.mark.parametrize("data, fragment", [
    ({"tier": "magic"}, "tier"),
    ({"tier": "quantum"}, "epsilon"),
    ({"traps": {"depth_mK": -1.0}}, "traps.depth_mK"),
    ({"grids": {"n_x": 4}}, "grids"),
    ({"grids": {"x_window_um": [3.0, 1.0]}}, "grids.x_window_um"),
    ({"grids": {"n_x": 2.5}}, "expected an integer"),
    ({"weights": {"gamma_u": 0.0}}, "gamma_u"),
    ({"traps": {"x_A": 1.0, "x_B": 1.0}}, "traps"),
    ({"ensemble": {"seed": "random"}}, "ensemble.seed"),
    ({"ensemble": {"initial_state": "squeezed"}}, "ensemble.initial_state"),
    ({"tweezer": {"v_bounds_mK": [0.0]}}, "expected 2 entries"),
    ({"noise": "hot"}, "expected a table"),
])
def test_invalid_values_rejected(data, fragment):
    with pytest.raises(ConfigError) as err:
        config_from_dict(data)
    assert fragment in str(err.value)


def test_bad_toml_is_config_error(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("tier = ")
    with pytest.raises(ConfigError):
        load_config(path)

import pytest
import yaml

from chain_lora.config_loader import ConfigError, env_overrides, load_config, resolve_config_path
from chain_lora.schema import ExperimentConfig, FwDemoConfig


def _write(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


def test_bare_name_resolves_to_configs_dir():
    assert resolve_config_path("example").name == "example.yaml"
    assert resolve_config_path("example.yaml").parent.name == "configs"


@pytest.mark.parametrize("name", ["example", "chain_length", "rank_stepdown", "classification", "completion"])
def test_shipped_experiment_configs_validate(name):
    assert isinstance(load_config(name, environ={}), ExperimentConfig)


@pytest.mark.parametrize("name", ["quadratic_fw", "completion_fw"])
def test_shipped_fw_configs_validate(name):
    assert isinstance(load_config(name, FwDemoConfig, environ={}), FwDemoConfig)


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("no_such_config", environ={})


def test_unknown_nested_key_is_named(tmp_path):
    path = _write(tmp_path, {"schedule": {"knotz": [1]}})
    with pytest.raises(ConfigError, match=r"schedule\.knotz: unknown key"):
        load_config(path, environ={})


def test_invalid_value_is_named(tmp_path):
    path = _write(tmp_path, {"schedule": {"total_epochs": 3, "knots": [1], "rank_per_segment": [2]}})
    with pytest.raises(ConfigError, match="segment ranks"):
        load_config(path, environ={})


def test_bad_yaml_and_non_mapping(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("task: [unclosed\n")
    with pytest.raises(ConfigError, match="not valid YAML"):
        load_config(bad, environ={})
    with pytest.raises(ConfigError, match="mapping"):
        load_config(_write(tmp_path, [1, 2], "list.yaml"), environ={})


def test_empty_file_gives_defaults(tmp_path):
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert load_config(empty, environ={}) == ExperimentConfig()


def test_override_precedence(tmp_path):
    path = _write(tmp_path, {"output_dir": "from_file", "jobs": 1})
    env = {"COLA_OUTPUT_DIR": "from_env", "COLA_JOBS": "3"}
    assert load_config(path, environ={}).output_dir == "from_file"
    cfg = load_config(path, environ=env)
    assert (cfg.output_dir, cfg.jobs) == ("from_env", 3)
    cfg = load_config(path, environ=env, output_dir="from_flag", jobs=None)
    assert (cfg.output_dir, cfg.jobs) == ("from_flag", 3)


def test_overrides_outside_model_are_dropped(tmp_path):
    path = _write(tmp_path, {"horizon": 5})
    cfg = load_config(path, FwDemoConfig, environ={"COLA_JOBS": "4"})
    assert cfg.horizon == 5


def test_bad_env_value():
    with pytest.raises(ConfigError, match="COLA_JOBS"):
        env_overrides({"COLA_JOBS": "many"})

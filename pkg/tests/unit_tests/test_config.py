import json

import pytest

from ccrtrack.config import RunConfig, environment_values, is_config_data_valid, read_config_file, resolve_config


@pytest.mark.lite
def test_layers_override_in_order(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"n_levels": 4, "seed": 5, "ridge": 0.5}))
    environ = {"CCRTRACK_SEED": "6", "CCRTRACK_GAPS": "1,2", "HOME": "/root"}

    config = resolve_config(path, {"ridge": "0.25", "jobs": None}, environ)
    assert config.n_levels == 4
    assert config.seed == 6
    assert config.gaps == (1, 2)
    assert config.ridge == 0.25
    assert config.jobs == RunConfig().jobs

    assert resolve_config(environ={}) == RunConfig()


@pytest.mark.lite
def test_values_are_coerced_to_field_types():
    config = RunConfig().updated({"gaps": "1, 3,", "ridge": "none", "refresh_every": "5", "pca_dim": "12", "gate_threshold": 1})
    assert config.gaps == (1, 3)
    assert config.ridge is None
    assert config.refresh_every == 5
    assert config.pca_dim == 12
    assert isinstance(config.gate_threshold, float)
    assert RunConfig().updated({"d_sweep": [10, 20]}).d_sweep == (10, 20)


@pytest.mark.lite
def test_unknown_fields_are_rejected():
    with pytest.raises(ValueError, match="Valid fields include"):
        RunConfig().updated({"levels": 3})
    assert environment_values({"CCRTRACK_LEVELS": "3", "CCRTRACK_SEED": "1"}) == {"seed": "1"}


@pytest.mark.lite
@pytest.mark.parametrize(
    "data, reason",
    [
        ([], "Not a dictionary"),
        ({"levels": 3}, "Unknown field levels"),
        ({"gaps": "1,2"}, "gaps is not a list of ints"),
        ({"gaps": [1, True]}, "gaps is not a list of ints"),
        ({"seed": True}, "seed is a bool"),
        ({"ridge": "small"}, "ridge is not a number"),
        ({"jobs": 1.5}, "jobs is not an int"),
        ({"method": 3}, "method is not a string"),
    ],
)
def test_invalid_config_data(data, reason):
    assert is_config_data_valid(data) == (False, reason)


@pytest.mark.lite
def test_valid_config_data():
    assert is_config_data_valid({"ridge": None, "refresh_every": None, "gate_threshold": 1, "gaps": [1]}) == (True, "Formatting is good")


@pytest.mark.lite
def test_bad_config_files_raise(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"method": 3}))
    with pytest.raises(ValueError, match="method is not a string"):
        read_config_file(path)
    path.write_text("{not json")
    with pytest.raises(ValueError):
        read_config_file(path)


@pytest.mark.lite
def test_hash_is_stable_and_tracks_changes():
    assert RunConfig().hash() == RunConfig().hash()
    assert RunConfig().hash() != RunConfig(seed=1).hash()
    assert RunConfig().to_dict()["gaps"] == [1, 2, 3, 5]

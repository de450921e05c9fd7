import json
from dataclasses import FrozenInstanceError

import pytest

from airsq.data.scenarios import ObjectType
from airsq.errors import ConfigError
from airsq.utils.config import (
    ENV_CONFIG,
    ENV_LOG_LEVEL,
    ClusterConfig,
    RunConfig,
    derive_seed,
    load_run_config,
    log_level,
    split_flag,
)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch, tmp_path):
    monkeypatch.delenv(ENV_CONFIG, raising=False)
    monkeypatch.delenv(ENV_LOG_LEVEL, raising=False)
    monkeypatch.chdir(tmp_path)


def _write(tmp_path, obj, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


def test_defaults():
    config = load_run_config()
    assert config == RunConfig()
    assert config.loss.w_cls == 60.0
    assert config.map.thresholds == (2.0, 3.6, 6.0)
    assert config.cluster.k_per_type() == {ObjectType.VEHICLE: 32, ObjectType.PEDESTRIAN: 8, ObjectType.CYCLIST: 30}


def test_file_values(tmp_path):
    path = _write(tmp_path, {"seed": 3, "loss": {"w_cls": 10}, "map": {"steps": [10, 20, 30]}})
    config = load_run_config(path)
    assert config.seed == 3
    assert config.loss.w_cls == 10
    assert config.loss.w_reg == 1.0
    assert config.map.steps == (10, 20, 30)


def test_overrides_beat_the_file(tmp_path):
    path = _write(tmp_path, {"seed": 3, "loss": {"w_cls": 10}})
    config = load_run_config(path, {"seed": 9, "loss": {"w_cls": 5.0}})
    assert (config.seed, config.loss.w_cls) == (9, 5.0)


def test_config_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_CONFIG, _write(tmp_path, {"train": {"lr": 0.5}}))
    assert load_run_config().train.lr == 0.5


@pytest.mark.parametrize("raw", [
    {"optimizer": {"lr": 1}},
    {"loss": {"w_foo": 1}},
    {"loss": {"w_cls": -1.0}},
    {"train": {"representation": "sideways"}},
    {"raster": {"ego_px": [500, 0]}},
])
def test_bad_config_is_a_config_error(tmp_path, raw):
    with pytest.raises(ConfigError):
        load_run_config(_write(tmp_path, raw))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / "nope.json"))


def test_log_level(monkeypatch):
    assert log_level() == "INFO"
    monkeypatch.setenv(ENV_LOG_LEVEL, "debug")
    assert log_level() == "DEBUG"


def test_split_flag():
    assert split_flag("train.lr") == ("train", "lr")


def test_derive_seed():
    assert derive_seed(0, "train") == derive_seed(0, "train")
    assert derive_seed(0, "train") != derive_seed(0, "cluster")
    assert derive_seed(0, "train") != derive_seed(1, "train")
    assert 0 <= derive_seed(123, "synth") < 2**32


def test_cluster_config_is_frozen():
    with pytest.raises(FrozenInstanceError):
        ClusterConfig().iters = 3

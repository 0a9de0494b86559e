import pytest
import yaml

from bilateral_il.config import (ConfigError, RunConfig, config_from_dict, dump_config,
                                 load_config, run_manifest)


def test_defaults_carry_fixed_rates():
    cfg = load_config()
    assert cfg.plant.dt == 0.002 and cfg.dataset.stride == 20
    assert cfg.train.batch_size == 16 and cfg.train.noise_variance == 0.01
    assert cfg.task.n_train == 12 and cfg.task.n_test == 20 and cfg.eval.n_trials == 5


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"train": {"epoch": 3}},
    {"task": {"kind": "juggle"}},
    {"train": {"preset": "huge"}},
    {"gains": {"g_d": 5000.0}},
    {"plant": {"inertia": [0.1, -1.0]}},
    {"eval": {"variants": ["gentle"]}},
    {"dataset": {"stride": 0}},
    {"task": {"n_test": -1}},
    {"plant": 3},
])
def test_invalid_configs_rejected(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_yaml_round_trip_and_overrides(tmp_path):
    cfg = load_config(None, {"seed": 4, "train.epochs": 7, "task.kind": "write"})
    dump_config(cfg, tmp_path / "c.yaml")
    back = load_config(tmp_path / "c.yaml")
    assert back == cfg and back.digest() == cfg.digest()
    assert back.train.build(back.seed).epochs == 7


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.yaml")
    (tmp_path / "bad.yaml").write_text("train: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")


def test_digest_tracks_content():
    assert RunConfig().digest() == RunConfig().digest()
    assert config_from_dict({"seed": 1}).digest() != RunConfig().digest()


def test_manifest_records_everything():
    cfg = load_config(None, {"seed": 9})
    m = run_manifest(cfg, "train")
    assert m["seed"] == 9 and m["config_sha256"] == cfg.digest()
    assert {"bilateral_il", "python", "numpy"} <= set(m["versions"])
    assert yaml.safe_load(yaml.safe_dump(m["config"])) == cfg.to_dict()

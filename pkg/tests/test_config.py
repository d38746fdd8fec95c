import json

import pytest

from teskf.config import ConfigError, RunConfig, config_from_dict, dump_config, parse_config


def test_empty_document_gives_defaults():
    assert config_from_dict({}) == RunConfig()


def test_defaults_match_sensor_table():
    cfg = RunConfig()
    assert (cfg.imu_hz, cfg.cam_hz, cfg.sigma_pix, cfg.max_points) == (400.0, 10.0, 2.0, 100)
    assert (cfg.sigma_g, cfg.sigma_a, cfg.sigma_gw, cfg.sigma_aw) == (1.70e-4, 2.00e-3, 2.00e-5, 3.00e-3)


def test_invalid_value_names_the_key():
    with pytest.raises(ConfigError, match="imu_hz"):
        config_from_dict({"imu_hz": -1})
    with pytest.raises(ConfigError, match="cam_hz"):
        config_from_dict({"cam_hz": 30.0})
    with pytest.raises(ConfigError, match="filters"):
        config_from_dict({"filters": ["eskf", "ukf"]})


def test_type_checks():
    with pytest.raises(ConfigError, match="n_runs"):
        config_from_dict({"n_runs": "many"})
    with pytest.raises(ConfigError, match="write_updates"):
        config_from_dict({"write_updates": 1})
    assert config_from_dict({"n_runs": 4.0}).n_runs == 4
    assert config_from_dict({"duration": 3}).duration == 3.0


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key 'durration'"):
        config_from_dict({"durration": 5.0})


def test_roundtrip(tmp_path):
    cfg = RunConfig(duration=12.5, seed=9, filters=["teskf"], bench_landmarks=[1, 2])
    dump_config(cfg, tmp_path / "c.json")
    assert parse_config(tmp_path / "c.json") == cfg


def test_malformed_json_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "seed": 3,\n  "duration": ,\n}\n')
    with pytest.raises(ConfigError, match="line 3"):
        parse_config(p)


def test_bad_value_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"seed": 1, "n_landmarks": 10, "radius": -2.0}, indent=1))
    with pytest.raises(ConfigError, match=r"line 4: radius"):
        parse_config(p)


def test_top_level_must_be_object():
    with pytest.raises(ConfigError):
        config_from_dict([1, 2])

"""Experiment configuration: validation, file format and override precedence."""

import pytest

from s2tx.config import (
    EXCHANGE_BLOCK,
    ExperimentConfig,
    field_types,
    parse_value,
    read_config_file,
    resolve_config,
)
from s2tx.errors import ConfigError


class TestExperimentConfig:
    def test_defaults_keep_lookback_twice_local(self):
        cfg = ExperimentConfig()
        assert cfg.lookback == 2 * cfg.local_window == 336
        assert (cfg.patch_len_global, cfg.stride_global, cfg.patch_len_local, cfg.stride_local) == (48, 16, 16, 8)

    @pytest.mark.parametrize(
        "changes",
        [
            {"local_window": 400},
            {"patch_len_global": 400},
            {"patch_len_local": 200},
            {"d_model": 30, "n_heads": 4},
            {"variant": "bogus"},
            {"horizon": 0},
            {"stride_local": -1},
            {"dropout": 1.0},
            {"precision": "float16"},
        ],
    )
    def test_invalid(self, changes):
        with pytest.raises(ConfigError):
            ExperimentConfig(**changes)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="colour"):
            ExperimentConfig.from_dict({"colour": "red"})

    def test_dict_round_trip(self):
        cfg = ExperimentConfig(horizon=192, variant="neither", data_path="/x.csv")
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


class TestConfigFile:
    def test_write_read_round_trip(self, tmp_path):
        cfg = ExperimentConfig(horizon=720, learning_rate=3e-4, instance_norm=False, seed=7)
        path = cfg.write(tmp_path / "config.txt")
        assert ExperimentConfig.from_dict(read_config_file(path)) == cfg

    def test_every_key_written(self, tmp_path):
        text = ExperimentConfig().write(tmp_path / "c.txt").read_text()
        for key in field_types():
            assert f"\n{key} = " in text

    def test_comments_and_blank_lines(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("# experiment\n\nhorizon = 336  # long\nvariant = neither\n")
        assert read_config_file(path) == {"horizon": 336, "variant": "neither"}

    def test_unknown_key_in_file(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("horizon = 96\nwarmup = 3\n")
        with pytest.raises(ConfigError, match="warmup"):
            read_config_file(path)

    def test_bad_value(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("horizon = ninety-six\n")
        with pytest.raises(ConfigError, match="horizon"):
            read_config_file(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            read_config_file(tmp_path / "absent.txt")


class TestParseValue:
    @pytest.mark.parametrize(
        "key, raw, expected",
        [
            ("horizon", "192", 192),
            ("learning_rate", "1e-3", 1e-3),
            ("instance_norm", "off", False),
            ("local_window", "none", None),
            ("data_path", "auto", None),
            ("dataset", " ettm1 ", "ettm1"),
        ],
    )
    def test_typed(self, key, raw, expected):
        assert parse_value(key, raw) == expected


class TestResolve:
    def test_precedence(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("horizon = 192\nseed = 11\n")
        assert resolve_config().horizon == 96
        from_file = resolve_config(path)
        assert (from_file.horizon, from_file.seed) == (192, 11)
        flagged = resolve_config(path, {"horizon": 336})
        assert (flagged.horizon, flagged.seed) == (336, 11)

    def test_exchange_block(self):
        cfg = resolve_config(overrides={"dataset": "exchange"})
        for key, value in EXCHANGE_BLOCK.items():
            assert getattr(cfg, key) == value

    def test_exchange_block_overridable(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("dataset = exchange\npatch_len_global = 32\n")
        cfg = resolve_config(path, {"stride_global": 4})
        assert (cfg.lookback, cfg.patch_len_global, cfg.stride_global) == (192, 32, 4)

    def test_none_overrides_ignored(self):
        assert resolve_config(overrides={"horizon": None}).horizon == 96

    def test_unknown_override(self):
        with pytest.raises(ConfigError):
            resolve_config(overrides={"epochz": 3})

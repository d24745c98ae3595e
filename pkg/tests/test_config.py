"""Tests for configuration management."""

import pytest

from pmn.config import (
    Config,
    RunConfig,
    collect_settings,
    format_settings,
    parse_key_value_text,
    parse_overrides,
)
from pmn.errors import ConfigError


def test_config_defaults_validate():
    """Test that the environment defaults are valid."""
    assert Config.validate() is True
    assert Config.threads() >= 1


def test_config_rejects_bad_precision(monkeypatch):
    """Test environment validation."""
    monkeypatch.setattr(Config, "PRECISION", "f16")
    with pytest.raises(ConfigError):
        Config.validate()
    monkeypatch.setattr(Config, "PRECISION", "f32")
    monkeypatch.setattr(Config, "THREADS", "0")
    with pytest.raises(ConfigError):
        Config.validate()


def test_parse_key_value_text():
    """Test comments, blank lines and locations."""
    entries = parse_key_value_text("# header\nhops = 3  # inline\n\nvariant=pmn\n", "run.conf")
    assert entries == [("hops", "3", "run.conf:2"), ("variant", "pmn", "run.conf:4")]
    with pytest.raises(ConfigError, match="run.conf:1"):
        parse_key_value_text("hops 3\n", "run.conf")


def test_collect_settings_list_keys():
    """Test that list keys accumulate and scalars override."""
    entries = parse_key_value_text("a = 1\ng = x\na = 2\ng = y\n")
    assert collect_settings(entries, ["g"]) == {"a": "2", "g": ["x", "y"]}


def test_parse_overrides():
    """Test --set parsing."""
    assert parse_overrides(["hops=2"])[0][:2] == ("hops", "2")
    with pytest.raises(ConfigError):
        parse_overrides(["hops"])


def test_run_config_precedence(tmp_path):
    """Test defaults < file < --set."""
    path = tmp_path / "run.conf"
    path.write_text("hops = 3\nepochs = 7\nconv_widths = 5,3,3\n", encoding="utf-8")
    config = RunConfig.from_sources(path, ["hops=2"], defaults={"threads": 4, "epochs": 9})
    assert config.hops == 2
    assert config.epochs == 7
    assert config.threads == 4
    assert config.conv_widths == (5, 3, 3)
    assert config.grad_clip is None


def test_run_config_rejects_unknown_and_invalid_keys(tmp_path):
    """Test validation failures surface as ConfigError."""
    with pytest.raises(ConfigError):
        RunConfig.from_sources(None, ["hopz=2"])
    with pytest.raises(ConfigError):
        RunConfig.from_sources(None, ["batch_size=0"])
    with pytest.raises(ConfigError):
        RunConfig.from_sources(tmp_path / "missing.conf")


def test_model_settings_checks_architecture():
    """Test that inconsistent model settings raise ConfigError."""
    config = RunConfig(embedding_dim=16, conv_channels=(8, 8, 8))
    with pytest.raises(ConfigError):
        config.model_settings(num_labels=3, seq_length=50)
    model = RunConfig(embedding_dim=8, conv_channels=(8, 8, 8)).model_settings(3, 50)
    assert model.num_labels == 3


def test_echo_round_trips(tmp_path):
    """Test that the provenance echo parses back to the same configuration."""
    config = RunConfig(hops=2, grad_clip=1.5, match_updated_state=True)
    path = tmp_path / "echo.conf"
    path.write_text(config.echo(), encoding="utf-8")
    assert RunConfig.from_sources(path) == config
    assert "conv_widths = 9,5,3" in format_settings(config.model_dump())

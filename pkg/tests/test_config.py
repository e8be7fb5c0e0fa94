"""Tests for run-configuration parsing and validation."""

import pytest

from kprl.config import RunConfig, load_run_config, read_config_file
from kprl.errors import ConfigError
from kprl.training import TrainConfig


def test_defaults_are_valid_and_match_training_defaults():
    cfg = RunConfig().validate()
    assert cfg.batch_size == 32
    assert cfg.ensemble_size == 15
    assert cfg.weight_grid == (0.6, 0.8, 1.0, 1.2, 1.4)
    assert cfg.train_config() == TrainConfig()


def test_file_parsing_types_and_comments(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# a comment\n"
        "\n"
        "lr = 0.01\n"
        "batch_size = 8\n"
        "aggregate = sentence\n"
        "weight_grid = 0.5, 1.0, 1.5\n"
        "class_labels = A, B\n"
        "embedding_path = /tmp/vecs.txt\n",
        encoding="utf-8",
    )
    values = read_config_file(path)
    assert values == {
        "lr": 0.01,
        "batch_size": 8,
        "aggregate": "sentence",
        "weight_grid": (0.5, 1.0, 1.5),
        "class_labels": ("A", "B"),
        "embedding_path": "/tmp/vecs.txt",
    }
    cfg = load_run_config(path)
    assert cfg.lr == 0.01 and cfg.class_labels == ("A", "B")


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("learning_rate = 0.01\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="unknown key"):
        read_config_file(path)
    with pytest.raises(ConfigError, match="unknown config key"):
        load_run_config(None, {"nope": 3})


def test_malformed_lines_rejected(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("just some words\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="key = value"):
        read_config_file(path)
    path.write_text("lr = fast\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="not numeric"):
        read_config_file(path)


def test_overrides_win_and_none_is_skipped(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 1\nbatch_size = 8\n", encoding="utf-8")
    cfg = load_run_config(path, {"seed": 99, "batch_size": None})
    assert cfg.seed == 99
    assert cfg.batch_size == 8


def test_validation_errors():
    with pytest.raises(ConfigError, match="noise_rate"):
        load_run_config(None, {"noise_rate": 1.0})
    with pytest.raises(ConfigError, match="workers"):
        load_run_config(None, {"workers": 0})
    with pytest.raises(ConfigError, match="embed_dim"):
        load_run_config(None, {"embed_dim": -1})
    with pytest.raises(ConfigError, match="duplicates"):
        load_run_config(None, {"class_labels": ("A", "A")})
    with pytest.raises(ConfigError, match="n_dev"):
        load_run_config(None, {"n_dev": 0})

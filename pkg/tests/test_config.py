"""Config parsing: accepted layouts and strict rejection of unknown keys."""

import pytest

from geoflow.config import ConfigError, parse_config


def write(tmp_path, text):
    p = tmp_path / "cfg.txt"
    p.write_text(text)
    return str(p)


class TestParseConfig:

    def test_full_file(self, tmp_path):
        path = write(tmp_path, """
            experiment = sir-flowmap
            seed = 3
            [optim]
            lr = 0.05       # comment after value
            epochs = 10
            [dataset]
            n = 100
        """)
        cfg = parse_config(path)
        assert cfg["experiment"] == "sir-flowmap"
        assert cfg["seed"] == "3"
        assert cfg["optim"] == {"lr": "0.05", "epochs": "10"}
        assert cfg["dataset"] == {"n": "100"}

    def test_comments_and_blank_lines(self, tmp_path):
        path = write(tmp_path, "# only a comment\n\nexperiment = regression\n")
        assert parse_config(path) == {"experiment": "regression"}

    def test_unknown_section(self, tmp_path):
        path = write(tmp_path, "[nonsense]\nlr = 1\n")
        with pytest.raises(ConfigError, match="unknown section"):
            parse_config(path)

    def test_unknown_key_in_section(self, tmp_path):
        path = write(tmp_path, "[optim]\nmomentum = 0.9\n")
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config(path)

    def test_unknown_top_level_key(self, tmp_path):
        path = write(tmp_path, "gpu = yes\n")
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config(path)

    def test_missing_equals(self, tmp_path):
        path = write(tmp_path, "[optim]\nlr 0.05\n")
        with pytest.raises(ConfigError, match="expected key = value"):
            parse_config(path)

    def test_missing_file(self):
        with pytest.raises(FileNotFoundError):
            parse_config("/nonexistent/cfg.txt")

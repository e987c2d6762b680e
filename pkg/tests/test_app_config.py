import pytest

from app_config import AppConfig
from src.errors import ConfigError
from src.synthgen import BenchConfig


def test_resolve_precedence():
    cfg = AppConfig.resolve(BenchConfig, {"gen": {"n_observed": 8, "seed": 4}}, "gen", seed=9, dim=None)
    assert cfg.n_observed == 8
    assert cfg.seed == 9


def test_resolve_rejects_bad_values():
    with pytest.raises(ConfigError):
        AppConfig.resolve(BenchConfig, {}, "gen", pervasiveness=1.5)


def test_config_file_formats(tmp_path):
    toml_path = tmp_path / "c.toml"
    toml_path.write_text("[train]\nepochs = 3\n", encoding="utf-8")
    assert AppConfig.load_config_file(str(toml_path)) == {"train": {"epochs": 3}}
    json_path = tmp_path / "c.json"
    json_path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        AppConfig.load_config_file(str(json_path))
    with pytest.raises(ConfigError):
        AppConfig.load_config_file(str(tmp_path / "missing.toml"))
    assert AppConfig.load_config_file(None) == {}


@pytest.mark.parametrize("raw,expected", [("1", 1), ("4", 4), ("-1", -1)])
def test_worker_count(monkeypatch, raw, expected):
    monkeypatch.setenv("IDC_THREADS", raw)
    assert AppConfig.worker_count() == expected


@pytest.mark.parametrize("raw", ["0", "-3", "many"])
def test_worker_count_invalid(monkeypatch, raw):
    monkeypatch.setenv("IDC_THREADS", raw)
    with pytest.raises(ConfigError):
        AppConfig.worker_count()

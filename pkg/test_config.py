"""
Pruebas de la configuracion: entorno y documentos YAML de experimento
"""

from pathlib import Path

import pytest

from app.core.config import settings, validate_settings
from app.core.errors import ConfigError
from app.db.manifest_store import config_from_dict, load_config, save_config

CONFIGS = Path(__file__).resolve().parent / "configs"


def test_validate_settings_does_not_raise(caplog):
    with caplog.at_level("INFO"):
        validate_settings()
    assert "[OK] Config cargada" in caplog.text


def test_data_workers_reads_environment(monkeypatch):
    monkeypatch.setenv("DIRECTCAPS_DATA_WORKERS", "4")
    assert settings.data_workers() == 4
    monkeypatch.setenv("DIRECTCAPS_DATA_WORKERS", "cero")
    assert settings.data_workers() == 1
    monkeypatch.setenv("DIRECTCAPS_DATA_WORKERS", "-3")
    assert settings.data_workers() == 1


@pytest.mark.parametrize("name", ["tiny.yaml", "synth_small.yaml"])
def test_bundled_configs_load(name):
    config = load_config(CONFIGS / name)
    assert config.model.num_classes >= 2
    assert config.model.conv_filters


def test_config_round_trip(tiny_experiment, tmp_path):
    save_config(tiny_experiment, tmp_path / "c.yaml")
    again = load_config(tmp_path / "c.yaml")
    assert again == tiny_experiment


def test_unknown_key_is_rejected(tiny_model_config):
    with pytest.raises(ConfigError):
        config_from_dict({"model": tiny_model_config.model_dump(mode="json"), "extra_key": 1})


def test_bad_margins_are_rejected(tiny_model_config):
    doc = tiny_model_config.model_dump(mode="json")
    doc["margin"] = {"m_plus": 0.1, "m_minus": 0.9}
    with pytest.raises(ConfigError):
        config_from_dict({"model": doc})


def test_wrong_schema_is_rejected(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("schema: otra/v9\nmodel:\n  num_classes: 2\n  hr_size: [16, 16]\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_or_invalid_yaml(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "no.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    scalar = tmp_path / "scalar.yaml"
    scalar.write_text("42\n")
    with pytest.raises(ConfigError):
        load_config(scalar)

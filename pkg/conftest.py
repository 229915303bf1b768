"""
Fixtures compartidas por las pruebas
"""

import os
import sys

import numpy as np
import pytest

sys.path.append(os.getcwd())

from app.autograd.tensor import precision
from app.db.manifest_store import config_from_dict
from app.models.schemas import ModelConfig
from app.services.synth_service import synth_dataset


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: corridas largas, activar con DIRECTCAPS_RUN_SLOW=1")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    """Precision de 64 bits durante la prueba"""
    with precision("float64"):
        yield


@pytest.fixture
def tiny_model_config():
    """Modelo chico sobre imagenes 16x16 RGB, K=3"""
    return ModelConfig(
        num_classes=3, hr_size=(16, 16), channels=3, conv_filters=[8],
        primary_caps_types=2, caps_dim_primary=4, primary_kernel=5, primary_stride=2,
        caps_dim_class=4, recon_hidden=(16, 32), batch_size=8,
    )


@pytest.fixture
def tiny_experiment(tiny_model_config):
    return config_from_dict({
        "model": tiny_model_config.model_dump(mode="json"),
        "training": {"epochs": 2, "seed": 3, "lr": 1e-3},
        "data": {"mix": "both"},
    })


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    """Conjunto sintetico chico: K=3, 6 por clase, HR 16x16, VLR 4x4"""
    out = tmp_path_factory.mktemp("synth")
    synth_dataset(str(out), num_classes=3, n_per_class=6, hr_size=(16, 16), vlr_size=(4, 4),
                  seed=0, n_test_per_class=2)
    return out

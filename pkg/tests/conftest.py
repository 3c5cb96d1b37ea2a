"""Shared fixtures: tiny models, synthetic data and an isolated settings sandbox."""
import numpy as np
import pytest

from config import settings
from models.surrogate_model import build_model
from services.dataset_service import make_synthetic
from utils.patterns import gen_orthogonal, gen_symbols

SIDE = 8
K = 4


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    """Point the results store and default output directory into ``tmp_path``."""
    monkeypatch.setattr(settings, "results_db_path", str(tmp_path / "db" / "results.duckdb"))
    monkeypatch.setattr(settings, "output_dir", str(tmp_path / "runs"))
    monkeypatch.setattr(settings, "score_workers", 1)
    monkeypatch.setattr(settings, "score_chunk_size", 256)
    monkeypatch.setattr(settings, "train_limit", 2000)
    monkeypatch.setattr(settings, "test_limit", 500)
    return settings


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def orthogonal_patterns():
    """Four disjoint 4x4 patterns (m = 16)."""
    return gen_orthogonal(K, 4)


@pytest.fixture
def symbol_patterns():
    return gen_symbols(K, 4, seed=3, min_distance=2)


@pytest.fixture
def mlp_model():
    return build_model("mlp", (SIDE, SIDE), 16, K, seed=0)


@pytest.fixture
def conv_model():
    return build_model("small-conv", (SIDE, SIDE), 16, K, seed=0)


@pytest.fixture
def synthetic_data():
    return make_synthetic(K, SIDE, 20, 0.1, seed=1)

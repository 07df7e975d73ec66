import numpy as np
import pytest

from config.config import TrainConfig
from models.codebook import Codebook
from models.forecaster import DualPathModel, ModelDims
from models.series_io import SynthSpec, save_csv, synth_generate

@pytest.fixture
def rng():
    return np.random.default_rng(1234)

@pytest.fixture
def small_frame():
    """Two channels, 400 steps: small enough for multi-epoch runs in a unit test"""
    return synth_generate(SynthSpec(channels=2, length=400, motifs=2, motif_len=8, motif_rate=0.05), 11)

@pytest.fixture
def tiny_config():
    return TrainConfig(L=24, H=8, L_p=4, K=4, epochs=3, patience=3, batch_size=16, quant_hidden=8, res_hidden=16,
                       seed=5)

@pytest.fixture
def small_model(rng):
    dims = ModelDims(L=20, H=10, L_p=4, K=5)
    model = DualPathModel.create(dims, rng, quant_hidden=8, res_hidden=16)
    return model.with_codebook(Codebook(rng.normal(size=(dims.K, dims.code_dim)), 1))

@pytest.fixture
def synth_csv(tmp_path, small_frame):
    path = tmp_path / 'synth.csv'
    save_csv(small_frame, str(path))
    return str(path)

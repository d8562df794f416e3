import numpy as np
import pytest

from spectral_mup.linalg import RngStream
from spectral_mup.model import ModelConfig


@pytest.fixture
def rng():
    return RngStream(1234, 0)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(n=32, L=2, H=4, kv_heads=2, vocab=11, seq_len=8)


@pytest.fixture
def tiny_tokens():
    return np.random.default_rng(7).integers(0, 11, size=(2, 9))

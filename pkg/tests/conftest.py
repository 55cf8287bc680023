import numpy as np
import pytest

from gsjflow.flow import FlowModel, ModelConfig, gen_synthetic_model


def make_model(seed=0, channels=4, blocks=1, depth=2, seq_len=16,
               weight_scale=None, hidden=None) -> FlowModel:
    cfg = ModelConfig(channels=channels, blocks=blocks, depth=depth,
                      hidden=hidden, seq_len=seq_len)
    return gen_synthetic_model(seed, cfg, weight_scale=weight_scale)


def make_block(seed=0, channels=4, depth=2, weight_scale=None, hidden=None):
    return make_model(seed=seed, channels=channels, depth=depth,
                      weight_scale=weight_scale, hidden=hidden).blocks[0]


def zero_block(seed=0, channels=4, depth=2):
    """Zero project-out weights: s = u = 0, so every transform is identity."""
    return make_block(seed=seed, channels=channels, depth=depth,
                      weight_scale=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

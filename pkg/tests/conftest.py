import numpy as np
import pytest

from tsagg.encoder import EncoderConfig, init_weights
from tsagg.tokenization import TokenGrid


def random_grid(rng, t=4, l=6, d=8):
    return TokenGrid.fresh(rng.standard_normal((t, l, d)).astype(np.float32),
                           rng.standard_normal(d).astype(np.float32))


def silence_sublayers(weights):
    """Zero every sublayer's output projection so blocks become the identity
    on features while keys stay informative."""
    for b in weights.blocks:
        b.temporal.o[...] = 0
        b.spatial.o[...] = 0
        b.ffn.fc2[...] = 0
        b.ffn.b2[...] = 0
    return weights


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    return EncoderConfig(frames=8, height=32, width=32, patch_size=8, dim=16, heads=2, blocks=3,
                         r_t=2, r_s=3, seed=7)


@pytest.fixture
def small_weights(small_cfg):
    return init_weights(small_cfg)

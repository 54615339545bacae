import numpy as np
import pytest

from nullface.backbones import (ToyAttentionBackbone, ToyCodec, ToyGeometricParser,
                                ToyPointwiseBackbone, ToyStatsEmbedder)
from nullface.schedule import default_schedule


@pytest.fixture(scope="session")
def sched50():
    return default_schedule(50)

@pytest.fixture(scope="session")
def pointwise():
    return ToyPointwiseBackbone(seed=0)

@pytest.fixture(scope="session")
def attention():
    return ToyAttentionBackbone(seed=0)

@pytest.fixture(scope="session")
def codec():
    return ToyCodec()

@pytest.fixture(scope="session")
def embedder():
    return ToyStatsEmbedder(seed=0)

@pytest.fixture(scope="session")
def parser():
    return ToyGeometricParser()


def random_latent(seed, shape=(4, 8, 8)):
    return np.random.default_rng(seed).standard_normal(shape).astype(np.float32)


def unit_embedding(seed, dim=16):
    from nullface.conditioning import IdentityEmbedding
    v = np.random.default_rng(seed).standard_normal(dim)
    return IdentityEmbedding((v / np.linalg.norm(v)).astype(np.float32))

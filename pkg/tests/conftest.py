import math

import numpy as np
import pytest
import torch

from src.config import RunConfig
from src.data.synthetic import make_synthetic_corpus
from src.data.vocabulary import build_vocab
from src.models.spactor.model import ModelConfig, init_params

TINY_RUN = dict(d_model=16, disc_layers=1, disc_heads=2, disc_mlp=32, gen_layers=1, gen_mlp=16, rtd_mlp=32,
                vocab_size=64, input_len=16, batch_size=4, kappa=100, tau=math.inf, total_steps=10,
                checkpoint_every=5, log_every=5)


@pytest.fixture(scope='session')
def corpus_path(tmp_path_factory):
    path = tmp_path_factory.mktemp('data') / 'corpus.txt'
    make_synthetic_corpus(path, 20000, num_words=60, seed=0, min_doc_len=10, max_doc_len=40)
    return path


@pytest.fixture
def tiny_config(corpus_path):
    def make(**changes) -> RunConfig:
        values = dict(TINY_RUN, corpus=str(corpus_path), val_corpus=str(corpus_path))
        values.update(changes)
        return RunConfig(**values).validate()
    return make


@pytest.fixture
def vocab():
    """Four sentinels (ids 4..7) and 40 content tokens (ids 8..47)."""
    return build_vocab([' '.join(f't{i}' for i in range(40))], 48, num_sentinels=4)


@pytest.fixture
def model_config():
    return ModelConfig(d=8, v=32, disc_layers=1, disc_heads=2, disc_mlp=16, gen_layers=1, gen_mlp=8, rtd_mlp=16,
                       max_len=64, dtype='float64')


@pytest.fixture
def model(model_config):
    return init_params(model_config, seed=0).eval()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)

import pytest

from depsrl.corpus import SyntheticConfig, generate_synthetic
from depsrl.model import ModelConfig
from depsrl.tokenize import learn_subwords


@pytest.fixture(scope="session")
def synth():
    return generate_synthetic(SyntheticConfig(n_sentences=40, vocab_size=120, n_roles=4), seed=11)


@pytest.fixture(scope="session")
def subwords(synth):
    return learn_subwords(synth, 80)


@pytest.fixture
def tiny_config():
    return ModelConfig(embed_size=8, hidden_size=12, n_layers=1, n_merges=80)

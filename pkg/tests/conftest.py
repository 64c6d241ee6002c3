from pathlib import Path

import numpy as np
import pytest

from actweave.corpus_io import PipelineConfig
from actweave.taxonomy import load_taxonomy
from actweave.vo_extract import load_lexicon

DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "actweave" / "data"


@pytest.fixture(scope="session")
def lexicon():
    return load_lexicon(DATA_DIR / "lexicon")


@pytest.fixture(scope="session")
def graph():
    return load_taxonomy(DATA_DIR / "taxonomy.tsv")


@pytest.fixture
def tiny_config():
    return PipelineConfig(d_img=3, d_w2v=2, d_text=4, d_alg=5, batch_size=2,
                          stage1_steps=5, stage2_steps=5, seed=11)


class FakeEmbeddings:
    """Deterministic random word vectors for tests that don't need a file."""

    def __init__(self, dim, seed=0):
        self.dim = dim
        self.seed = seed
        self._cache = {}

    def vector(self, word):
        if word not in self._cache:
            key = sum(ord(c) * (i + 1) for i, c in enumerate(word))
            rng = np.random.default_rng((self.seed, key))
            self._cache[word] = rng.standard_normal(self.dim)
        return self._cache[word]


@pytest.fixture
def fake_embeddings():
    return FakeEmbeddings


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end tests")

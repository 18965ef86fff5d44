import time

import numpy as np
import pytest
from hypothesis import settings

from cascadetrack import data

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def short_sequence():
    """A 12-frame corpus-recipe sequence."""
    return data.corpus_sequence(1000, 12)


@pytest.fixture(scope="session")
def tiny_corpus():
    return [data.corpus_sequence(1000 + i, 6) for i in range(2)]


# Epoch budget for the shared training run. The library default is 50; on a
# single CPU core one epoch over the 40 training sequences takes about 20 s and
# the episode reward has levelled off well before epoch 12.
TRAIN_EPOCHS = 12


@pytest.fixture(scope="session")
def standard_corpus():
    return data.standard_corpus()


@pytest.fixture(scope="session")
def timed_training(standard_corpus):
    """(training result, seconds spent training) for the shared run."""
    from cascadetrack.config import CascadeConfig
    from cascadetrack.tracker import run_training

    train, _ = standard_corpus
    config = CascadeConfig(seed=0)
    t0 = time.perf_counter()
    result = run_training(train, config, epochs=TRAIN_EPOCHS, rng=np.random.default_rng(config.seed))
    return result, time.perf_counter() - t0


@pytest.fixture(scope="session")
def trained(timed_training):
    return timed_training[0]

import numpy as np
import pytest

from rotadapt.toyshift import ToyShiftSpec, generate_toy_shift
from rotadapt.training import TrainConfig, train


@pytest.fixture(scope="session")
def toy_small():
    """48+48 toy samples; small enough for unit tests, big enough to batch."""
    spec = ToyShiftSpec(num_classes=4, samples_per_domain=48, image_size=64, seed=123)
    return generate_toy_shift(spec)


@pytest.fixture(scope="session")
def toy_small_split(toy_small):
    source, target = toy_small
    return source[:40], target[:40], source[40:], target[40:]


@pytest.fixture(scope="session")
def trained_small(toy_small_split):
    """A briefly trained bundle for analysis/evaluation tests (not accuracy tests)."""
    src_train, tgt_train, src_test, tgt_test = toy_small_split
    cfg = TrainConfig(method="relative-rotation", epochs=2, batch_size=16,
                      eval_every=2, seed=5)
    bundle, metrics = train(cfg, src_train, tgt_train,
                            source_eval=src_test, target_eval=tgt_test)
    return bundle, metrics, cfg


@pytest.fixture()
def rng():
    return np.random.default_rng(0)

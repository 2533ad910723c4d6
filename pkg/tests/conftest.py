import numpy as np
import pytest

from advshield import classifier as C
from advshield import data


@pytest.fixture(scope="session")
def tiny_train():
    return data.synthetic_dataset(seed=1, n_per_class=20)


@pytest.fixture(scope="session")
def tiny_test():
    return data.synthetic_dataset(seed=2, n_per_class=10, split="test")


@pytest.fixture(scope="session")
def small_clf(tiny_train, tiny_test):
    """A cheap but usable classifier for attack and harness behavior tests."""
    model = C.init_classifier(seed=3)
    model, _ = C.train_classifier(model, tiny_train, tiny_test, epochs=2, seed=0)
    return model


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.PCG64(1234))

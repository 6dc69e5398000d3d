import numpy as np
import pytest

from forambench import autograd as ag


@pytest.fixture(autouse=True)
def _finite_checks():
    ag.set_finite_checks(True)
    yield
    ag.set_finite_checks(False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

import warnings

import numpy as np
import pytest

from foldylax.foldy import DilutionWarning


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


@pytest.fixture(autouse=True)
def _quiet_dilution():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DilutionWarning)
        yield

import numpy as np
import pytest

from tess.primitives import ThresholdSet


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def thr():
    """Hand-picked thresholds for H = 8, N_fcst = 4."""
    return ThresholdSet(
        tau1_mean=0.5, tau2_mean=1.5, tau1_vol=0.2, tau2_vol=0.6, tau_shape=0.25, n_fcst=4
    )

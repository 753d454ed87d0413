import numpy as np
import pytest
from scipy.special import expit

from paic import HierLogitModel, ObservationSet
from paic.rng import substream


@pytest.fixture(scope="session")
def hier_model():
    return HierLogitModel(np.full(15, 50))


@pytest.fixture(scope="session")
def hier_data(hier_model):
    """One fixed simulated dataset from the true process (mu=0, tau=1)."""
    gen = substream(314159, "fixture", "truth")
    beta = gen.standard_normal(15)
    y = gen.binomial(hier_model.trial_sizes, expit(beta))
    return ObservationSet(y.astype(float), hier_model.trial_sizes)


def assert_decomposition(report, rel=1e-9):
    lhs = report.value
    rhs = -2.0 * report.fit_term + 2.0 * report.penalty
    assert abs(lhs - rhs) <= rel * max(1.0, abs(lhs)), report

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sghmm.emissions import GaussianEmission, LogNormalEmission  # noqa: E402
from sghmm.hmm import HmmParams  # noqa: E402


def random_params(rng, K, d=1, family="gaussian", spread=2.0):
    A = rng.dirichlet(np.ones(K), size=K).T
    pi0 = rng.dirichlet(np.ones(K))
    if family == "lognormal":
        em = [LogNormalEmission(rng.normal(0, 1), rng.uniform(0.5, 1.5)) for _ in range(K)]
    else:
        em = []
        for _ in range(K):
            M = rng.normal(size=(d, d))
            em.append(GaussianEmission(rng.normal(0, spread, size=d), M @ M.T + 0.5 * np.eye(d)))
    return HmmParams(A, em, pi0)


def random_obs(rng, T, d=1, family="gaussian"):
    if family == "lognormal":
        return np.exp(rng.normal(0, 1.5, size=(T, 1)))
    return rng.normal(0, 2.0, size=(T, d))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_params():
    return random_params


@pytest.fixture
def make_obs():
    return random_obs

import numpy as np
import pytest

from airhockey.kinematics import default_chain


@pytest.fixture(scope="session")
def chain():
    return default_chain()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_q(chain, rng, n=None, shrink=0.95):
    mid = 0.5 * (chain.q_min + chain.q_max)
    half = 0.5 * shrink * (chain.q_max - chain.q_min)
    size = (chain.n_joints,) if n is None else (n, chain.n_joints)
    return mid + half * rng.uniform(-1.0, 1.0, size=size)

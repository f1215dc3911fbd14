import numpy as np
import pytest

from typetree import BdParams, ErmParams, YuleParams


def erm(q1, q2):
    return ErmParams(2, {1: {(1, 1): q1[0], (1, 2): q1[1], (2, 2): q1[2]},
                         2: {(1, 1): q2[0], (1, 2): q2[1], (2, 2): q2[2]}})


@pytest.fixture
def q_generic():
    return erm((0.5, 0.3, 0.2), (0.1, 0.4, 0.5))


@pytest.fixture
def q_only_mixed():
    return erm((0.0, 1.0, 0.0), (0.0, 1.0, 0.0))


@pytest.fixture
def q_alternating():
    return erm((0.0, 0.0, 1.0), (1.0, 0.0, 0.0))


@pytest.fixture
def q_single_type():
    return erm((1.0, 0.0, 0.0), (0.0, 0.0, 1.0))


@pytest.fixture
def q_neutral():
    return erm((0.4, 0.4, 0.2), (0.4, 0.4, 0.2))


@pytest.fixture
def q_asymmetric():
    # type 1 is absorbing: q1_11 = 1, q2_11 = q2_22 = (1 - q2_12)/2
    s = 0.3
    return erm((1.0, 0.0, 0.0), ((1 - s) / 2, s, (1 - s) / 2))


@pytest.fixture
def q_critical():
    # c1 - c2 = 3/2
    return erm((0.8, 0.15, 0.05), (0.05, 0.15, 0.8))


def random_erm(rng):
    rows = rng.dirichlet([1.0, 1.0, 1.0], size=2)
    return erm(rows[0], rows[1])


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def clado_params(r, p):
    return YuleParams(2, {(1, 1, 1): r * (1 - p) ** 2, (1, 1, 2): 2 * r * p * (1 - p),
                          (1, 2, 2): r * p ** 2, (2, 2, 2): r * (1 - p) ** 2,
                          (2, 1, 2): 2 * r * p * (1 - p), (2, 1, 1): r * p ** 2})


def ana_params(r, p):
    return YuleParams(2, {(1, 1, 1): r, (2, 2, 2): r},
                      {(1, 2): r * p, (2, 1): r * p})


@pytest.fixture
def bd_two_type():
    return BdParams(2, [[0.9, 0.3], [0.2, 0.8]], [0.4, 0.3])

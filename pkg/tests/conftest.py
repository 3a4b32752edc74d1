import numpy as np
import pytest

from einet.expfam import CategoricalFamily, GaussianFamily
from einet.oracle import random_fixture


@pytest.fixture
def gaussian_family():
    return GaussianFamily()


@pytest.fixture
def binary_family():
    return CategoricalFamily(num_states=2)


@pytest.fixture
def small_fixture():
    # one deterministic small circuit shared by several tests
    return random_fixture(seed=42)


def make_batch(rng, family, d_vars, n):
    if isinstance(family, CategoricalFamily):
        return rng.integers(0, family.num_states, size=(n, d_vars)).astype(float)
    return rng.normal(0.0, 1.0, size=(n, d_vars))

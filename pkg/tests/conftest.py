"""Shared fixtures for the test suite."""
import numpy as np
import pytest

from cocyclelab.base_dynamics import Rotation


@pytest.fixture()
def rng():
    """Fresh deterministic generator per test."""
    return np.random.default_rng(7)


@pytest.fixture(scope="session")
def golden():
    """The golden-mean circle rotation, shared across tests (it is immutable)."""
    return Rotation.golden()

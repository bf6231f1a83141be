import os

import numpy as np
import pytest

from planner.file_io import load_model
from planner.global_defaults import PROBLEMS_DIR
from planner.model import DecPomdpModel


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full EM runs on the benchmark instances (deselect with -m \"not slow\")")


def random_model(rng, num_states=4, num_a=2, num_b=2, num_y=2, num_z=2, discount=0.9, density=0.5):
    """Random model with structural zeros in T and O, every row keeps at least one entry."""
    transition = rng.random((num_states, num_a, num_b, num_states))
    transition *= rng.random(transition.shape) < density
    rows = transition.reshape(-1, num_states)
    rows[np.arange(len(rows)), rng.integers(num_states, size=len(rows))] += 0.5
    transition = rows.reshape(transition.shape)
    transition /= transition.sum(axis=-1, keepdims=True)

    observation = rng.random((num_states, num_a, num_b, num_y * num_z))
    observation *= rng.random(observation.shape) < density
    rows = observation.reshape(-1, num_y * num_z)
    rows[np.arange(len(rows)), rng.integers(num_y * num_z, size=len(rows))] += 0.5
    observation = rows.reshape(num_states, num_a, num_b, num_y, num_z)
    observation /= observation.sum(axis=(-2, -1), keepdims=True)

    initial_belief = rng.random(num_states)
    return DecPomdpModel(transition=transition, observation=observation,
                         reward=rng.normal(size=(num_states, num_a, num_b)), discount=discount,
                         initial_belief=initial_belief / initial_belief.sum())


@pytest.fixture
def make_model():
    return random_model


@pytest.fixture(scope="session")
def broadcast():
    return load_model(os.path.join(PROBLEMS_DIR, "broadcast.dpomdp"))


@pytest.fixture(scope="session")
def tiger():
    return load_model(os.path.join(PROBLEMS_DIR, "dectiger.dpomdp"))


@pytest.fixture(scope="session")
def recycling():
    return load_model(os.path.join(PROBLEMS_DIR, "recycling_reconstructed.dpomdp"))

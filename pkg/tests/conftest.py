"""Shared fixtures and helpers for the test suite."""
import numpy as np
import pytest

from ctbmc.model import Generator, InitialDistribution, validate
from ctbmc.simulate import simulate_until_jumps, observe

# Reference model with 2 observable and 2 hidden states, used across the
# suite and shipped under models/.  START_BLOCKS is a deliberately rough
# starting point with the same zero pattern in the (1, 0) block.
TRUE_BLOCKS = np.array([
    [[[-70.0, 10.0], [20.0, -55.0]], [[50.0, 10.0], [25.0, 10.0]]],
    [[[50.0, 0.0], [0.0, 10.0]], [[-60.0, 10.0], [20.0, -30.0]]],
])
START_BLOCKS = np.array([
    [[[-120.0, 30.0], [2.0, -8.0]], [[70.0, 20.0], [5.0, 1.0]]],
    [[[70.0, 0.0], [0.0, 1.0]], [[-100.0, 30.0], [2.0, -3.0]]],
])


@pytest.fixture
def ref_gen():
    return Generator(TRUE_BLOCKS)


@pytest.fixture
def start_gen():
    return Generator(START_BLOCKS)


def rand_generator(rng, d, r, scale=1.0, sparsity=0.0):
    """Random valid generator; d >= 2 so every row has observable exits.

    Off-diagonal rates are uniform on [0.2, 1.0] * scale, optionally thinned.
    Rejection-samples until validation passes (sparsity can kill a row's
    cross-block mass).
    """
    while True:
        blocks = rng.uniform(0.2, 1.0, size=(d, d, r, r)) * scale
        if sparsity > 0.0:
            blocks = blocks * (rng.uniform(size=blocks.shape) >= sparsity)
        gen = Generator(blocks)
        if validate(gen).ok:
            return gen


def rand_path(gen, n_jumps, seed):
    """Observed path with exactly n_jumps jumps, stationary start."""
    return observe(simulate_until_jumps(gen, init=None, n_jumps=n_jumps, seed=seed))


def uniform_init(path, r):
    return InitialDistribution.uniform(path.x0, r)


@pytest.fixture(scope="session")
def ref_path_500():
    """Medium path from the reference model, shared where a fresh one is not needed."""
    return rand_path(Generator(TRUE_BLOCKS), 500, seed=20240001)

"""Shared fixtures: small deterministic datasets and build parameters."""

from typing import Callable

import numpy as np
import pytest

from gann.data import VectorSet, gen_powerlaw
from gann.models import BuildParams, PowerLawSpec

MakeSet = Callable[..., VectorSet]


@pytest.fixture
def make_set() -> MakeSet:
    """Uniform (exponent 0) datasets keyed by seed."""

    def make(n: int, d: int, seed: int = 0, exponent_a: float = 0.0) -> VectorSet:
        return gen_powerlaw(PowerLawSpec(n=n, d=d, exponent_a=exponent_a, seed=seed))

    return make


@pytest.fixture
def small_set(make_set: MakeSet) -> VectorSet:
    return make_set(300, 8, seed=1)


@pytest.fixture
def queries(make_set: MakeSet) -> VectorSet:
    return make_set(20, 8, seed=2)


@pytest.fixture
def small_params() -> BuildParams:
    return BuildParams(cap_r=12, beam_l_build=32, seed=7)


@pytest.fixture
def clustered() -> VectorSet:
    """Eight tight Gaussian blobs in 8-d."""
    rng = np.random.default_rng(11)
    centers = rng.uniform(0, 10, size=(8, 8))
    labels = rng.integers(0, 8, size=1000)
    return VectorSet(centers[labels] + rng.normal(0, 0.05, size=(1000, 8)))

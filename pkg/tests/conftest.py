"""Shared fixtures for the homlab test suite."""

import math

import numpy as np
import pytest

from homlab import io
from homlab.model import EmitterModel, TpiParams


@pytest.fixture
def paper_scenario():
    """The bundled O-band scenario used throughout the suite."""
    return io.load_scenario(io.bundled_scenario_path("oband_default"))


@pytest.fixture
def paper_params(paper_scenario):
    return paper_scenario.tpi_params()


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)


def make_random_params(rng, with_phi=False):
    """A random but physically valid parameter set for property loops.

    alpha2 and g0 stay away from the degenerate corner where the
    crossed-polarized curve can touch zero at tau = 0.
    """
    sigma_j = float(rng.uniform(1.0, 80.0))
    if rng.random() < 0.2:
        sigma_j = 0.0
    phi = float(rng.uniform(0.0, math.pi / 2)) if with_phi else 0.0
    return TpiParams(
        eta=float(rng.uniform(0.2, 2.0)),
        alpha2=float(rng.uniform(0.05, 1.5)),
        beta=float(rng.uniform(0.0, 0.2)),
        tau_c=float(rng.uniform(50.0, 400.0)),
        emitter=EmitterModel(
            g0=float(rng.uniform(0.01, 0.8)),
            tau_r=float(rng.uniform(100.0, 900.0)),
        ),
        sigma_j=sigma_j,
        phi=phi,
    )


@pytest.fixture
def random_params():
    return make_random_params

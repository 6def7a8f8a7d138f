import numpy as np
import pytest
from hypothesis import strategies as st

from dengue2s import ParameterSet, State
from dengue2s.io import baseline_scenario


@pytest.fixture(scope="session")
def baseline():
    return baseline_scenario()


@pytest.fixture(scope="session")
def params(baseline):
    return baseline.params


def random_params(rng, **fixed):
    """A draw of epidemiologically plausible rates (per month)."""
    p = dict(
        lambda_N=rng.uniform(1, 50), lambda_M=10 ** rng.uniform(3, 6),
        mu=10 ** rng.uniform(-4, -2), kappa=rng.uniform(0.2, 3),
        alpha=rng.uniform(0, 2), sigma=rng.uniform(0, 2), beta=rng.uniform(0.5, 10),
        gamma=rng.uniform(0.5, 4), nu=rng.uniform(0.01, 1), delta=rng.uniform(0, 0.1),
    )
    p.update(fixed)
    return ParameterSet(**p)


def random_state(rng, params=None, zero_fraction=0.0):
    """Interior state with populations of the order of the capacities."""
    params = params or ParameterSet()
    h = rng.dirichlet(np.ones(10)) * params.human_capacity * rng.uniform(0.5, 1.5)
    v = rng.dirichlet(np.ones(4)) * params.vector_capacity * rng.uniform(0.5, 1.5)
    x = np.concatenate([h, v])
    if zero_fraction:
        mask = rng.random(14) < zero_fraction
        mask[[0, 10]] = False
        x[mask] = 0.0
    return x


positive = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False, allow_infinity=False)

param_strategy = st.builds(
    ParameterSet,
    lambda_N=st.floats(1, 50), lambda_M=st.floats(1e3, 1e6), mu=st.floats(1e-4, 1e-2),
    kappa=st.floats(0.2, 3), alpha=st.floats(0, 2), sigma=st.floats(0, 2),
    beta=st.floats(0.5, 10), gamma=st.floats(0.5, 4), nu=st.floats(0.01, 1),
    delta=st.floats(0, 0.1),
)

state_strategy = st.lists(st.floats(0, 1e5, allow_nan=False), min_size=14, max_size=14).filter(
    lambda v: sum(v[:10]) > 1 and sum(v[10:]) > 1).map(lambda v: State(*v))

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from delayreg.quasipoly import Quasipolynomial
from delayreg.scenario import load_scenario

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

PRESETS = ("example1", "example2", "example3")

coeff = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
delays = st.sampled_from([0.0, 0.25, 0.5, 1.0, 1.5])


@st.composite
def quasipolys(draw, max_terms=3, max_degree=2):
    n = draw(st.integers(1, max_terms))
    terms = [
        (draw(delays), draw(st.lists(coeff, min_size=1, max_size=max_degree + 1)))
        for _ in range(n)
    ]
    return Quasipolynomial.from_terms(terms)


points = st.builds(complex, st.floats(-3, 3), st.floats(-10, 10))


@pytest.fixture(scope="session")
def scenarios():
    return {name: load_scenario(name) for name in PRESETS}


@pytest.fixture(scope="session")
def designs(scenarios):
    return {name: sc.design() for name, sc in scenarios.items()}


def rel_close(a, b, rtol):
    a, b = np.asarray(a), np.asarray(b)
    return np.all(np.abs(a - b) <= rtol * np.maximum(1.0, np.maximum(np.abs(a), np.abs(b))))

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nlsscat.potentials import make_potential

settings.register_profile(
    "nlsscat", max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("nlsscat")

GRID = (0.01, -20.0, 4001)

CANONICAL = {
    "zero": ("zero", {}),
    "gaussian": ("gaussian", {"amp": 0.5}),
    "box": ("box", {"amp": 0.5, "left": 0.0, "right": 1.0}),
    "modulated": ("modulated_gaussian", {"amp": 0.5, "beta": 8.0}),
    "random": ("random_bandlimited", {"amp": 0.5, "seed": 20240611}),
}


def canonical(name, grid=GRID):
    family, params = CANONICAL[name]
    return make_potential(family, params, grid)


@pytest.fixture(params=sorted(CANONICAL))
def canonical_potential(request):
    return canonical(request.param)


@pytest.fixture
def gaussian():
    return canonical("gaussian")


@pytest.fixture
def box():
    return canonical("box")


@pytest.fixture
def small_lambda():
    return np.linspace(-10.0, 10.0, 201)

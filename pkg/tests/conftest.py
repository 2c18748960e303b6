import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from acns.potential import PotentialSpec, YosidaLayer
from acns.spectral import build_basis

settings.register_profile(
    "acns", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("acns")


@pytest.fixture(scope="session")
def spec():
    return PotentialSpec(1.0, 2.0)


@pytest.fixture(scope="session")
def layer():
    return YosidaLayer(0.01)


@pytest.fixture(scope="session")
def basis32():
    return build_basis(N=32, L=4 * math.pi)


@pytest.fixture(scope="session")
def basis16():
    return build_basis(N=16, L=2 * math.pi)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_scalar(basis, rng, scale=1.0, decay=2.0):
    """Random real field on ``basis`` with algebraically decaying spectrum."""
    v = rng.standard_normal(basis.n_scalar) * scale
    v = v / (1.0 + np.sqrt(np.maximum(basis.scalar_eigenvalues, 0.0))) ** decay
    return basis.scalar_from_real(v)


def random_velocity(basis, rng, scale=1.0, decay=2.0):
    v = rng.standard_normal(basis.n_velocity) * scale
    v = v / (1.0 + np.sqrt(basis.stokes_eigenvalues)) ** decay
    return basis.velocity_from_real(v)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)

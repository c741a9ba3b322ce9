import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qcnet.network import build_topology

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_network(rng, L=None, M=None, Nc=None, onsite=False):
    L = L or int(rng.integers(1, 3))
    M = M or int(rng.integers(max(L, 1), 5))
    Nc = Nc or 2
    spec = build_topology(L, M, Nc, train_onsite=onsite)
    params = rng.uniform(-1, 1, spec.n_params)
    return spec, params


def unit(rng, L, nonnegative=False):
    v = rng.standard_normal(L)
    if nonnegative:
        v = np.abs(v)
    return v / np.linalg.norm(v)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

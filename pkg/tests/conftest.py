import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from crossdiff.mesh import build_graded_mesh, build_uniform_mesh

settings.register_profile(
    "default",
    max_examples=100,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    database=None,
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_mesh(rng, n, graded=False, a=0.0, length=None):
    length = rng.uniform(0.5, 5.0) if length is None else length
    if graded:
        return build_graded_mesh(a, a + length, rng.uniform(0.5, 1.5, n))
    return build_uniform_mesh(a, a + length, n)

import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def distributions(draw, num_classes=None, min_classes=2, max_classes=10):
    """Strictly positive or sparse class distributions."""
    y = num_classes if num_classes is not None else draw(st.integers(min_classes, max_classes))
    raw = draw(arrays(np.float64, y, elements=st.floats(0.0, 10.0)))
    if raw.sum() == 0:
        raw[draw(st.integers(0, y - 1))] = 1.0
    return raw / raw.sum()


def finite_vectors(n, lo=-50.0, hi=50.0):
    return arrays(np.float64, n, elements=st.floats(lo, hi))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)

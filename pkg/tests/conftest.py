import numpy as np
import pytest
from hypothesis import strategies as st

from qprocess.offspring import derive_params, new_offspring_law

SUPER = (0.25, 0.0, 0.75)
SUB = (0.5, 0.25, 0.25)


@pytest.fixture
def super_law():
    return new_offspring_law(SUPER)


@pytest.fixture
def sub_law():
    return new_offspring_law(SUB)


@pytest.fixture(params=[SUPER, SUB], ids=["super", "sub"])
def example_law(request):
    law = new_offspring_law(request.param)
    return law, derive_params(law)


@st.composite
def valid_laws(draw, max_support=5):
    """Random laws with p_0 > 0, p_0 + p_1 < 1 and |m - 1| bounded away from 0."""
    k = draw(st.integers(2, max_support))
    raw = draw(st.lists(st.floats(0.0, 1.0), min_size=k + 1, max_size=k + 1))
    raw[0] = max(raw[0], 0.05)
    raw[-1] = max(raw[-1], 0.05)
    p = np.array(raw) / sum(raw)
    p[-1] = 1.0 - p[:-1].sum()
    law = new_offspring_law(p)
    from hypothesis import assume

    assume(abs(law.mean_m - 1.0) > 0.05)
    return law


# One line per acceptance criterion, filled by test_acceptance and echoed after the run.
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])

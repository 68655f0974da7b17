import sys
import datetime as dt

import numpy as np
import pytest
from hypothesis import settings

from retail_marl.env import make_envs
from retail_marl.synthetic import synthetic_market

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(scope="session")
def market():
    return synthetic_market(0)


@pytest.fixture(scope="session")
def envs(market):
    return make_envs(market.catalog, market.panel, market.graph, market.oracle, market.split)


@pytest.fixture
def day0():
    return dt.date(2011, 1, 1)


def assert_close(a, b, tol):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    assert np.max(np.abs(a - b)) <= tol, np.max(np.abs(a - b))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)

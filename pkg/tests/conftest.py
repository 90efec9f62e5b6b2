import numpy as np
import pytest

from lioforge.simulation import Scenario, generate

_ACCEPTANCE = {}


def record_acceptance(number: int, title: str, passed: bool, detail: str = "") -> str:
    line = f"ACCEPTANCE {number:2d} {'PASS' if passed else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    _ACCEPTANCE[number] = line
    print(line)
    return line


@pytest.fixture
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[k])


@pytest.fixture(scope="session")
def default_data():
    return generate(Scenario())


@pytest.fixture(scope="session")
def short_data():
    """Two-second box-room run for quick pipeline / CLI checks."""
    return generate(Scenario(duration=2.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

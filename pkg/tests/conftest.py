import pytest

from _world import keys


@pytest.fixture
def validators():
    return keys(4, "validator")


@pytest.fixture
def operators():
    return keys(3, "operator")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)

import pytest

from stefan_melt.checks import Context
from stefan_melt.laguerre_basis import build_basis

VERDICTS = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def table():
    return build_basis(12)


@pytest.fixture(scope="session")
def ctx(table):
    """Shared verification context; the PDE melting run is computed at most once per session."""
    return Context(seed=0, table=table)


@pytest.fixture(scope="session")
def verdicts(request):
    """Acceptance verdict lines, repeated in the terminal summary."""
    return request.config.stash.setdefault(VERDICTS, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

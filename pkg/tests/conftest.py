import pytest

from v2itrack.channel import RadioParams
from v2itrack.geometry import NetworkGeometry


@pytest.fixture
def geom():
    return NetworkGeometry(X=75.0, Y=31.0, h=7.5, y=3.25)


@pytest.fixture
def radio():
    return RadioParams()


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture(scope="session")
def acceptance_log(request):
    lines = request.config.stash[_ACCEPTANCE]

    def log(n, ok, detail, elapsed):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  ({elapsed:.1f} s)  {detail}"
        lines.append((n, line))
        print(line)
        return ok

    return log


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)

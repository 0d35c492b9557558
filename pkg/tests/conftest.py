import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pln.models import build_builtin  # noqa: E402


@pytest.fixture(scope="session")
def t1():
    return build_builtin("T1", grid=16)


@pytest.fixture(scope="session")
def t2():
    return build_builtin("T2", grid=16)


@pytest.fixture(scope="session")
def t2p():
    return build_builtin("T2-perturbed", grid=16)


@pytest.fixture(scope="session")
def limit_cycle():
    return build_builtin("limit-cycle")


def pytest_configure(config):
    config.acceptance_lines = {}


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.acceptance_lines[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])

import re

import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def criterion(request, capsys):
    """Call ``criterion(n, ok, detail)`` to emit one acceptance verdict line."""

    def emit(n, ok, detail, soft=False):
        tag = "PASS" if ok else ("SOFT-FAIL (logged)" if soft else "FAIL")
        line = f"[acceptance] criterion {n}: {tag} - {detail}"
        request.config.stash[_LINES].append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        def key(line):
            n, suffix = re.match(r"(\d+)(\w*)", line.split()[2]).groups()
            return int(n), suffix

        for line in sorted(lines, key=key):
            terminalreporter.write_line(line)

import pytest

_RESULTS = {}


@pytest.fixture
def record():
    """Store ``(passed, detail)`` for an acceptance criterion and echo it."""

    def _record(number, title, passed, detail, elapsed):
        line = (f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  "
                f"{title}: {detail} ({elapsed:.2f}s)")
        _RESULTS[number] = line
        print(line)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_RESULTS):
        terminalreporter.write_line(_RESULTS[k])

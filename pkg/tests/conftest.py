import pytest

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record the outcome of one acceptance criterion for the end-of-run table.

    ``record = criterion(n, title)`` marks it failed until ``record(ok, detail)``
    is called, so an exception midway still shows up as FAIL.
    """
    def start(number, title):
        _CRITERIA[number] = (False, title, "did not complete")

        def finish(ok, detail):
            _CRITERIA[number] = (bool(ok), title, detail)
            return ok

        return finish

    return start


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, title, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")

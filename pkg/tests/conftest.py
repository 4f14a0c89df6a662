import pytest

ACCEPTANCE_RESULTS: dict = {}


@pytest.fixture
def verdict():
    """Record one acceptance line, then assert it unless ``gate`` is false."""

    def record(criterion, ok, detail="", gate=True):
        ACCEPTANCE_RESULTS[criterion] = (bool(ok), detail)
        print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}")
        if gate:
            assert ok, f"criterion {criterion}: {detail}"

    return record


def _order(key):
    head = key.split("-")[0]
    num = int("".join(c for c in head if c.isdigit()))
    return num, key


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=_order):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")

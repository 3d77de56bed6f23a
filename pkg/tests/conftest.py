import pytest

_RESULTS = {}


class CriterionLog:
    """Collects one pass/fail line per acceptance criterion."""

    def record(self, number, passed, detail=""):
        prev = _RESULTS.get(number)
        if prev is not None:
            passed = passed and prev[0]
            detail = f"{prev[1]}; {detail}" if prev[1] and detail else (detail or prev[1])
        _RESULTS[number] = (passed, detail)
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        return passed


@pytest.fixture(scope="session")
def criteria():
    return CriterionLog()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        passed, detail = _RESULTS[number]
        terminalreporter.write_line(
            f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")

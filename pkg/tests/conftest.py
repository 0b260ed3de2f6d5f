_CRITERION_RESULTS = []


import pytest


@pytest.fixture
def criterion():
    """Collect one pass/fail line per acceptance criterion for the summary."""

    def record(number: int, description: str, passed: bool, elapsed: float):
        _CRITERION_RESULTS.append((number, description, passed, elapsed))

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERION_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, desc, passed, elapsed in sorted(_CRITERION_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(
            f"{status} criterion {number:2d}: {desc} ({elapsed:.1f}s)"
        )

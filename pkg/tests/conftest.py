import pytest

ACCEPTANCE = {}


def record(criterion, passed, detail=""):
    """Store the outcome of one acceptance criterion for the terminal summary."""
    ACCEPTANCE[criterion] = (bool(passed), detail)
    return bool(passed)


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[2:])):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {key} {detail}")

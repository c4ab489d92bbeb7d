import pytest

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion(request):
    """Record a criterion outcome for the end-of-run acceptance summary, then assert it."""

    def check(passed: bool, detail: str):
        _ACCEPTANCE.append((request.node.name, bool(passed), detail))
        assert passed, detail

    return check


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")

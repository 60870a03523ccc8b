import pytest

_CRITERIA: dict[str, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(key: str, ok: bool, detail: str) -> bool:
        _CRITERIA[key] = f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_CRITERIA[key])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[key])

"""Collects acceptance-criterion verdicts and prints them after the run."""
import pytest

VERDICTS: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def verdict():
    def record(number: int, name: str, ok: bool, detail: str = "") -> None:
        VERDICTS[number] = (name, bool(ok), detail)
        assert ok, f"criterion {number} ({name}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        name, ok, detail = VERDICTS[n]
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{status}  criterion {n:2d}  {name}: {detail}")

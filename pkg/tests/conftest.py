import pytest

RESULTS: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance criterion's outcome, print it and assert it."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> None:
        RESULTS[number] = (title, bool(ok), detail)
        print(f"\ncriterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}  {detail}")
        assert ok, f"criterion {number} ({title}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        title, ok, detail = RESULTS[number]
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}  {detail}")

import pytest

# criterion number -> (title, passed, detail), filled in by test_acceptance
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}  {title}: {detail}")


@pytest.fixture
def criterion():
    """Record a criterion outcome, print it and assert it."""

    def record(n: int, title: str, ok: bool, detail: str):
        ACCEPTANCE[n] = (title, bool(ok), detail)
        print(f"criterion {n} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, f"criterion {n} ({title}): {detail}"

    return record

import pytest

CRITERIA: dict[str, str] = {}


@pytest.fixture
def criterion():
    """Record ``(id, ok, detail)`` for the end-of-run acceptance summary."""

    def record(cid: str, ok: bool, detail: str) -> bool:
        line = f"criterion {cid}: {'PASS' if ok else 'FAIL'} | {detail}"
        CRITERIA[cid] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for cid in sorted(CRITERIA, key=lambda c: int(c)):
            terminalreporter.write_line(CRITERIA[cid])

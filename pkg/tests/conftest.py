import pytest

# criterion number -> (passed, one-line detail), filled by test_acceptance
RESULTS = {}


@pytest.fixture
def record():
    def _record(num, title, ok, detail=""):
        RESULTS[num] = (bool(ok), title, detail)
        print(f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {title} {detail}".rstrip())
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(RESULTS):
        ok, title, detail = RESULTS[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {title} {detail}".rstrip())

import pytest

# acceptance verdict lines, echoed in the terminal summary so they survive output capture
VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    def record(label: str, ok: bool, detail: str):
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}"
        VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)

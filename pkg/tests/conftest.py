import pytest

ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line, print it, then assert it."""

    def record(tag, ok, detail):
        line = f"criterion {tag}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE, key=lambda s: (int(s.split()[1].rstrip("abcde:")), s)):
        terminalreporter.write_line(line)

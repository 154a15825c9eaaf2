import pytest

_LINES = []


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for an acceptance criterion and echo it to the terminal."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def emit(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _LINES.append(line)
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

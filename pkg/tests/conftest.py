import pytest

_LINES = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """record(n, title, ok, detail): print and remember one acceptance line."""
    store = request.config.stash.setdefault(_LINES, {})

    def record(n, title, ok, detail=""):
        line = f"[{n:2d}] {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
        store[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_LINES, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for n in sorted(store):
            terminalreporter.write_line(store[n])

import pytest

ACCEPTANCE_LINES = {}


@pytest.fixture
def verdict(request):
    """Records one summary line per acceptance criterion; PASS unless the test fails."""
    state = {}

    def record(criterion: int, detail: str):
        state["key"] = criterion
        state["detail"] = detail

    yield record
    if "key" in state:
        rep = getattr(request.node, "rep_call", None)
        ok = rep is not None and rep.passed
        ACCEPTANCE_LINES[state["key"]] = f"acceptance {state['key']}: {'PASS' if ok else 'FAIL'}  {state['detail']}"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])

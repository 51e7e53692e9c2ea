from pathlib import Path

import pytest

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

# criterion number -> (title, outcome, measured)
CRITERIA: dict[int, tuple[str, str, str]] = {}


@pytest.fixture
def small_config():
    """A pipeline configuration small enough to run end to end in a few seconds."""
    return CONFIGS / "small.ini"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, title = mark.args
    measured = "; ".join(v for k, v in item.user_properties if k == "measured")
    CRITERIA[number] = (title, "PASS" if rep.passed else "FAIL", measured)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, status, measured = CRITERIA[number]
        line = f"{status} criterion {number:>2}: {title}"
        terminalreporter.write_line(line + (f" [{measured}]" if measured else ""))

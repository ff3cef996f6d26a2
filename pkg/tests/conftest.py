import pytest


def pytest_addoption(parser):
    parser.addoption("--runlong", action="store_true", default=False, help="run hours-scale tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runlong"):
        return
    skip = pytest.mark.skip(reason="long test; pass --runlong to include")
    for item in items:
        if "long" in item.keywords:
            item.add_marker(skip)


CRITERIA: dict[int, str] = {}
TOTAL_CRITERIA = 13


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance verdict and returns ``ok``."""

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        CRITERIA[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in range(1, TOTAL_CRITERIA + 1):
        terminalreporter.write_line(CRITERIA.get(n, f"criterion {n:2d}: NOT RUN" + ("  (long; pass --runlong)" if n == 9 else "")))

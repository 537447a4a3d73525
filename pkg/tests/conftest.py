import re

import pytest

_lines_key = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record the single pass/fail line of an acceptance criterion.

    The criterion number comes from the test name (``test_criterion_<k>_...``).
    A test that errors before recording still gets a FAIL line.
    """
    k = int(re.match(r"test_criterion_(\d+)", request.node.name).group(1))
    lines = request.config.stash.setdefault(_lines_key, [])
    state = {"done": False}

    def record(passed: bool, detail: str) -> None:
        line = f"criterion {k}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        state["done"] = True
        print(line)
        assert passed, line

    yield record
    if not state["done"]:
        lines.append(f"criterion {k}: FAIL  raised before completing")


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_lines_key, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

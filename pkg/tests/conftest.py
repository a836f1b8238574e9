import pytest

from hazevae.scenes import build_dataset

_CRITERIA = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """8 scenes at 16x16: 6 train, 2 test."""
    root = tmp_path_factory.mktemp("tiny")
    return build_dataset(8, 3, 16, root)


@pytest.fixture
def criterion(request):
    """``criterion(name, ok, detail)`` prints a PASS/FAIL line, keeps it for the summary, and asserts."""
    lines = request.config.stash.setdefault(_CRITERIA, [])

    def check(name, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

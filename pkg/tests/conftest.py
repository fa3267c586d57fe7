import pytest

ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: criterion(number, passed, seconds, detail)."""
    log = request.config.stash[ACCEPTANCE]

    def record(number, passed, seconds, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {seconds:7.1f} s  {detail}"
        log.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash[ACCEPTANCE]
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)

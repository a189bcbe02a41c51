import pytest

from helpers import MNIST_DIR


@pytest.fixture(scope="session")
def mnist_dir():
    return MNIST_DIR


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

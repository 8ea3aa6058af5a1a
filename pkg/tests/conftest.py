import pytest

from faultobs.scenarios import golden_matrix

# filled by test_acceptance; echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def golden():
    catalog, matrix = golden_matrix()
    cells = {(c.scenario.value, c.profile, c.tracing_mode, c.channel.value): c for c in matrix}
    return catalog, matrix, cells


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import pytest

from timeshift.harness import DetectorSpec, load_reference_fixtures
from timeshift.protocol import SessionConfig

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def ref_cfg():
    return SessionConfig()


@pytest.fixture(scope="session")
def ref_pair(ref_cfg):
    """Detector pair fitted to the bundled shift counts, blurred with the 100 ps pulse."""
    return DetectorSpec().build(ref_cfg)


@pytest.fixture(scope="session")
def fixtures():
    return load_reference_fixtures()


@pytest.fixture
def record_criterion():
    def record(name, passed, detail=""):
        ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}".rstrip())
        print(ACCEPTANCE_LINES[-1])
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

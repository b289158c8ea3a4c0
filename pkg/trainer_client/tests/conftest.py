import sys
from pathlib import Path

import pytest

# Make the sibling stubserver module importable regardless of rootdir.
sys.path.insert(0, str(Path(__file__).parent))


@pytest.hookimpl(tryfirst=True, hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """Expose each phase's report on the item so fixtures can see outcomes."""
    outcome = yield
    report = outcome.get_result()
    setattr(item, "rep_" + report.when, report)


@pytest.fixture
def stub():
    from stubserver import StubService

    service = StubService().start()
    yield service
    service.stop()

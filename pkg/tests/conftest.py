import warnings

import pytest

from bhtransistor.config import load_config

# acceptance verdicts, printed once at the end of the session
VERDICTS: dict[int, str] = {}


@pytest.fixture
def preset():
    def _load(name, *overrides):
        return load_config(name, list(overrides))

    return _load


@pytest.fixture(autouse=True)
def _quiet_run_warnings():
    from bhtransistor.protocols import RunWarning

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RunWarning)
        yield


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[k])

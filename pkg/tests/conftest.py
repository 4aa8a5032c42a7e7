"""Shared fixtures and the acceptance-criteria summary."""

import numpy as np
import pytest

from obscert.model import cstr_model

_ACCEPTANCE = {}
_SETUP = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "setup":
        _SETUP[number] = rep.duration
        if not rep.passed:
            _ACCEPTANCE[number] = (title, False, rep.duration)
    elif rep.when == "call":
        _ACCEPTANCE[number] = (title, rep.passed, rep.duration + _SETUP.get(number, 0.0))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, dur = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number:>2}. {title} ({dur:.2f}s)")


@pytest.fixture(scope="session")
def cstr():
    return cstr_model()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

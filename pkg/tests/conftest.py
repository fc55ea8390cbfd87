"""Acceptance summary: one PASS/FAIL line per headline criterion."""

import pytest

_ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Attach a one-line detail string to an acceptance test: ``criterion("...")``."""

    def note(detail):
        request.node.user_properties.append(("detail", detail))

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        details = "; ".join(v for k, v in item.user_properties if k == "detail")
        _ACCEPTANCE.append((marker.args[0], rep.passed, details))


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): a headline acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, details in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}" + (f"  ({details})" if details else ""))

from __future__ import annotations

import pytest

from rbacchain import Engine, Permission
from rbacchain import ledger as lg

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "PASS" if report.outcome == "passed" else "FAIL"
        _CRITERIA[number] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status = _CRITERIA[number]
        terminalreporter.write_line(f"{status}  criterion {number:>2}: {title}")


@pytest.fixture
def eng() -> Engine:
    """A hospital-style engine with generous budgets."""
    return Engine("hospital", ["bp1"], cpu_capacity_us=10**9, net_capacity_bytes=10**9)


def fund(eng: Engine, *accounts: str, stake: int = 1000) -> None:
    for a in accounts:
        eng.ledger.register_account(a, stake=stake)


def perm(pid, mode, role, action, target, constraints=(), exception=None) -> Permission:
    return Permission(pid, mode, role, action, target, tuple(constraints), exception)


def roles_of(eng: Engine, subject: str) -> set[str]:
    return eng.state.explicit_roles(subject)


KINDS = lg.TX_KINDS

"""Acceptance bookkeeping: one PASS/FAIL line per criterion at the end of the run."""

import pytest

CRITERIA = {
    1: "Ito formula residual converges with order >= 0.8 in every cell",
    2: "finite-difference derivatives match closed forms",
    3: "semigroup valuation agrees with Monte Carlo valuation",
    4: "backward equation residual gate, with failing negative control",
    5: "Brownian Asian square comparison matches closed forms",
    6: "Levy versus Ito semimartingale scenario is ordered",
    7: "soundness sweep over ordered and anti-ordered pairs",
    8: "CLI outputs are bit-identical on rerun",
}

_outcomes: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", m.args[0]))


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    if report.when == "call" or report.failed:
        ok = report.passed if report.when == "call" else False
        _outcomes.setdefault(crit, []).append(ok)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, text in CRITERIA.items():
        if n not in _outcomes:
            status = "NOT RUN"
        else:
            status = "PASS" if all(_outcomes[n]) else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}  {text}")

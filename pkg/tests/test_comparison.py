import numpy as np
import pytest

from pathito.comparison import (
    THEOREMS,
    ComparisonScenario,
    check_hypotheses,
    compare_expectations,
    expectation_mc,
    psd_order,
    psd_slack,
    run_scenario,
    two_kernel_compare,
)
from pathito.functionals import AsianPayoff, IntegralPayoff, TerminalPayoff
from pathito.models import BrownianMotion, CompoundPoisson, LevyJumpDiffusion
from pathito.pathspace import TimeGrid

GRID = TimeGrid(1.0, 50)
CHEAP = dict(n_out=4000, M=400, n_hyp_paths=5, n_hyp_times=3)


def hyp(report_or_list, name):
    items = report_or_list.hypotheses if hasattr(report_or_list, "hypotheses") else report_or_list
    return next(h for h in items if h.name == name)


def test_psd_order_examples():
    c = np.array([[0.3, 0.1], [0.1, 0.2]])
    assert psd_order(c, c)
    assert psd_order(0.04, 0.09)
    assert not psd_order(0.09, 0.04)
    q = np.array([[np.cos(0.4), -np.sin(0.4)], [np.sin(0.4), np.cos(0.4)]])
    d = q @ np.diag([0.5, -0.1]) @ q.T
    c1 = np.eye(2)
    c2 = c1 + d
    # eigenvalues of d from its characteristic polynomial
    tr, det = np.trace(d), np.linalg.det(d)
    lam_min = tr / 2 - np.sqrt(tr * tr / 4 - det)
    assert lam_min == pytest.approx(-0.1)
    assert float(psd_slack(c1, c2)) == pytest.approx(lam_min)
    assert not psd_order(c1, c2)
    with pytest.raises(ValueError):
        psd_order(np.array([[1.0, 0.5], [0.0, 1.0]]), np.eye(2))


def test_self_comparison_neutral():
    m = LevyJumpDiffusion(1.0, 0.0, 0.3, ((0.1, 0.5), (-0.1, 0.5)))
    sc = ComparisonScenario(m, m, AsianPayoff("softplus"), "emm_dcx", GRID, seed=1, **CHEAP)
    rep = run_scenario(sc)
    for h in rep.hypotheses:
        if h.name in ("diffusion", "kernel"):
            assert h.min_slack == 0.0
    assert hyp(rep, "kbe").passed
    assert abs(rep.conclusion.margin) <= 3


def test_brownian_diffusion_slack_and_convexity():
    sc = ComparisonScenario(
        BrownianMotion(1.0, 0.0, 0.3), BrownianMotion(1.0, 0.0, 0.2), AsianPayoff("square"), "emm_cx", GRID, seed=2, **CHEAP
    )
    hs = check_hypotheses(sc)
    assert hyp(hs, "diffusion").min_slack == pytest.approx(0.05, abs=1e-15)
    assert hyp(hs, "kernel").min_slack == 0.0
    assert hyp(hs, "convex").passed
    assert hyp(hs, "kbe").passed


def test_reversal_flips_slacks_and_direction():
    hi, lo = BrownianMotion(1.0, 0.0, 0.3), BrownianMotion(1.0, 0.0, 0.2)
    f = AsianPayoff("square")
    budget = {**CHEAP, "n_out": 40000}
    base = ComparisonScenario(hi, lo, f, "emm_dcx", GRID, seed=3, **budget)
    swapped = ComparisonScenario(lo, hi, f, "emm_dcx", GRID, seed=3, **budget)
    rev = ComparisonScenario(lo, hi, f, "emm_dcx", GRID, seed=3, reversed=True, **budget)
    d0 = hyp(check_hypotheses(base), "diffusion").min_slack
    d1 = hyp(check_hypotheses(swapped), "diffusion").min_slack
    d2 = hyp(check_hypotheses(rev), "diffusion").min_slack
    assert d1 == -d0
    assert d2 == d0
    c = compare_expectations(rev)
    assert c.verdict == "ordered" and c.margin > 3
    assert c.direction == "E f(Y) >= E f(X)"
    assert compare_expectations(swapped).verdict == "violated"


def test_analytic_brownian_expectations():
    sc = ComparisonScenario(
        BrownianMotion(1.0, 0.0, 0.3), BrownianMotion(1.0, 0.0, 0.2), AsianPayoff("square"), "emm_cx", GRID, seed=4, **CHEAP
    )
    c = compare_expectations(sc)
    N, dt = GRID.n_steps, GRID.dt
    var = dt**3 * (N - 1) * N * (2 * N - 1) / 6
    assert abs(c.EX - (1 + 0.09 * var)) <= 3 * c.se_X
    assert abs(c.EY - (1 + 0.04 * var)) <= 3 * c.se_Y
    assert c.margin > 3


def test_expectation_monotone_in_sigma():
    f = AsianPayoff("square")
    ests = [expectation_mc(f, BrownianMotion(1.0, 0.0, s), GRID, 20000, seed=5) for s in (0.1, 0.2, 0.3, 0.4)]
    for (e0, s0), (e1, s1) in zip(ests, ests[1:]):
        assert e1 - e0 >= -3 * np.hypot(s0, s1)


def test_two_kernel_examples():
    base = LevyJumpDiffusion(0.0, 0.0, 0.2)
    K1 = [(0.2, 1.0), (-0.2, 1.0)]
    f = AsianPayoff("softplus")
    rep = two_kernel_compare(base, K1, K1, f, GRID, seed=6, **CHEAP)
    assert abs(rep.conclusion.margin) <= 3
    assert hyp(rep, "kernel").min_slack == 0.0
    doubled = [(s, 2 * i) for s, i in K1]
    rep = two_kernel_compare(base, K1, doubled, TerminalPayoff("square"), GRID, seed=7, **CHEAP)
    assert hyp(rep, "kernel").passed and hyp(rep, "kernel").min_slack > 0
    assert rep.conclusion.verdict == "ordered" and rep.conclusion.margin > 3
    added = K1 + [(0.5, 1.0), (-0.5, 1.0)]
    rep = two_kernel_compare(base, K1, added, TerminalPayoff("square"), GRID, seed=8, **CHEAP)
    assert hyp(rep, "kernel").min_slack > 0
    assert rep.conclusion.verdict == "ordered"


def test_selector_mismatches_raise():
    drifting = BrownianMotion(0.0, 0.1, 0.3)
    still = BrownianMotion(0.0, 0.0, 0.3)
    sc = ComparisonScenario(drifting, still, AsianPayoff("square"), "emm_cx", GRID, seed=9, **CHEAP)
    with pytest.raises(ValueError):
        check_hypotheses(sc)
    sc = ComparisonScenario(still, BrownianMotion(0.0, 0.0, 0.2), AsianPayoff("square"), "emm_two_kernels", GRID, **CHEAP)
    with pytest.raises(ValueError):
        check_hypotheses(sc)
    with pytest.raises(ValueError):
        ComparisonScenario(still, BrownianMotion(1.0, 0.0, 0.2), AsianPayoff("square"), "emm_cx", GRID)
    with pytest.raises(ValueError):
        ComparisonScenario(still, still, AsianPayoff("square"), "bogus", GRID)
    with pytest.raises(ValueError):
        ComparisonScenario(still, still, AsianPayoff("square"), "emm_cx", GRID, n_out=0)


def test_P_theorem_with_drift_and_jumps():
    X = CompoundPoisson(0.0, 2.0, ((0.3, 0.5), (-0.1, 0.5)))
    Y = CompoundPoisson(0.0, 1.0, ((0.3, 0.5), (-0.1, 0.5)))
    sc = ComparisonScenario(X, Y, IntegralPayoff("softplus"), "P_incr_dcx", GRID, seed=10, **CHEAP)
    rep = run_scenario(sc)
    assert hyp(rep, "drift").min_slack == pytest.approx(0.1)
    assert hyp(rep, "kernel").min_slack > 0
    assert hyp(rep, "monotone").passed
    assert rep.conclusion.verdict == "ordered"


def test_general_selector_combined_slack():
    X = BrownianMotion(0.0, 0.0, 0.4)
    Y = LevyJumpDiffusion(0.0, 0.0, 0.0, ((0.2, 1.0), (-0.2, 1.0)))
    sc = ComparisonScenario(X, Y, TerminalPayoff("square"), "emm_general", GRID, seed=11, **CHEAP)
    hs = check_hypotheses(sc)
    # G = x^2 + remaining variance: generator gap is sigma^2 - sum lambda x^2
    assert hyp(hs, "combined").min_slack == pytest.approx(0.16 - 2 * 0.04, rel=1e-3)


def test_report_serialization():
    sc = ComparisonScenario(
        BrownianMotion(1.0, 0.0, 0.3), BrownianMotion(1.0, 0.0, 0.2), AsianPayoff("square"), "emm_cx", GRID, seed=12, **CHEAP
    )
    rep = run_scenario(sc)
    d = rep.to_dict()
    assert d["schema_version"] == "1.0" and d["pass"] is True
    assert "class_DL" in d["declarations"]
    rows = rep.to_csv().strip().splitlines()
    assert rows[0].startswith("schema_version,row,name")
    assert len(rows) == 1 + len(rep.hypotheses) + 1
    assert rep.failures() == []


def test_theorem_table_complete():
    assert set(THEOREMS) == {"emm_dcx", "emm_cx", "emm_general", "emm_two_kernels", "P_incr_dcx", "P_incr_cx", "P_general"}

import math

import numpy as np
import pytest

from fairshield.core import (DP, Counters, FairnessSpec, Group, InputEvent,
                             bias, trace_counters, welfare, zero_counters)
from fairshield.distribution import InputDistribution, ThetaEntry, build_theta
from fairshield.errors import SequencingError, ValidationError
from fairshield.periodic import (BoundaryReport, DynamicShield,
                                 PassThroughShield, StaticBWShield,
                                 StaticFairShield, WelfareBounds,
                                 check_balanced, check_dynamic_assumption,
                                 min_balance, period_boundary, periodic_step,
                                 synthesize_static_bw)
from fairshield.sim import SimConfig, run
from fairshield.synthesis import (BoundedWelfareTerminal, BufferedTerminal,
                                  FairTerminal, synthesize)

A, B = Group.A, Group.B


# -- min_balance / check_balanced ---------------------------------------------

def test_min_balance_values():
    assert min_balance(WelfareBounds(0.2, 0.4)) == 5
    assert min_balance(WelfareBounds(0.0, 1.0)) == 1
    assert min_balance(WelfareBounds(0.45, 0.55)) == 10


def test_welfare_bounds_validation():
    with pytest.raises(ValidationError):
        WelfareBounds(0.4, 0.4)
    with pytest.raises(ValidationError):
        WelfareBounds(-0.1, 0.5)
    with pytest.raises(ValidationError):
        WelfareBounds(0.5, 1.1)


def test_check_balanced():
    assert check_balanced(Counters(5, 2, 5, 1), 5)
    assert not check_balanced(Counters(4, 2, 6, 1), 5)
    assert check_balanced(Counters(0, 0, 0, 0), 0)


# -- dynamic assumption --------------------------------------------------------

def test_dynamic_assumption_satisfied():
    accumulated = Counters(50, 25, 50, 25)  # bias 0
    period_end = Counters(75, 30, 75, 40)
    assert check_dynamic_assumption(accumulated, period_end, kappa=0.1)


def test_dynamic_assumption_violated_by_skew():
    accumulated = Counters(0, 0, 0, 0)
    period_end = Counters(2, 1, 98, 49)
    # 1/2 + 1/98 = 0.5102 > 0.01
    assert not check_dynamic_assumption(accumulated, period_end, kappa=0.01)


def test_dynamic_assumption_vacuous_kappa():
    assert check_dynamic_assumption(Counters(), Counters(2, 0, 2, 0), kappa=1.0)


def test_dynamic_assumption_zero_denominator():
    assert not check_dynamic_assumption(Counters(), Counters(5, 2, 0, 0), kappa=1.0)


def test_dynamic_assumption_requires_extension():
    with pytest.raises(ValidationError):
        check_dynamic_assumption(Counters(3, 1, 3, 1), Counters(2, 1, 5, 2), 0.1)


# -- static-bw synthesis -------------------------------------------------------

def test_static_bw_short_period_never_intervenes():
    # N = 5 > T = 2: no length-2 trace is balanced, the escape clause
    # fires everywhere, and the optimum is free
    theta = build_theta("constant", 0.5)
    table = synthesize_static_bw(theta, 2, WelfareBounds(0.2, 0.4))
    assert table.root_value == 0.0
    for t, counters in [(0, zero_counters(DP)), (1, Counters(1, 1, 0, 0))]:
        for e in theta.entries:
            event = InputEvent(e.group, e.recommendation, 1.0)
            assert table.decide(t, counters, event) == e.recommendation


def test_static_bw_one_group_distribution_never_intervenes():
    theta = InputDistribution(
        cost_set=(1.0,),
        entries=(ThetaEntry(A, 0, 0, 0.5), ThetaEntry(A, 1, 0, 0.5),
                 ThetaEntry(B, 0, 0, 0.0), ThetaEntry(B, 1, 0, 0.0)),
    )
    table = synthesize_static_bw(theta, 10, WelfareBounds(0.0, 0.1))
    assert table.root_value == 0.0


def test_static_bw_balanced_periods_hit_bounds():
    # every simulated balanced period must end with both welfares inside
    bounds = WelfareBounds(0.3, 0.5)
    theta = build_theta("constant", 0.5)
    table = synthesize_static_bw(theta, 12, bounds)
    results = run(theta, lambda: StaticBWShield(table),
                  SimConfig(seed=99, runs=1000, horizon=12))
    balanced_runs = 0
    for r in results:
        report = r.metrics.reports[0]
        counters = trace_counters(DP, r.trace)
        if report.balanced:
            balanced_runs += 1
            for g in (A, B):
                w = welfare(g, counters)
                assert bounds.lower <= w <= bounds.upper
    assert balanced_runs > 800  # N=5 on T=12 at p=0.5 is rarely missed


# -- composition lemmas ---------------------------------------------------------

def test_welfare_composition_on_random_periods():
    rng = np.random.default_rng(42)
    for _ in range(300):
        lower, width = rng.uniform(0.05, 0.6), rng.uniform(0.05, 0.35)
        upper = min(lower + width, 1.0)
        pooled_num = pooled_den = 0
        ok = True
        for _ in range(rng.integers(1, 8)):
            den = int(rng.integers(1, 40))
            lo = math.ceil(lower * den)
            hi = math.floor(upper * den)
            if lo > hi:
                ok = False
                break
            num = int(rng.integers(lo, hi + 1))
            pooled_num += num
            pooled_den += den
        if not ok:
            continue
        assert lower - 1e-12 <= pooled_num / pooled_den <= upper + 1e-12


def test_dor_implication_bw_implies_fair():
    # u - l <= kappa and both welfares inside [l, u] force bias <= kappa
    rng = np.random.default_rng(7)
    for _ in range(500):
        lower = rng.uniform(0, 0.8)
        upper = lower + rng.uniform(0.01, 0.2)
        kappa = upper - lower
        den_a, den_b = rng.integers(1, 60, size=2)
        lo_a, hi_a = math.ceil(lower * den_a), math.floor(upper * den_a)
        lo_b, hi_b = math.ceil(lower * den_b), math.floor(upper * den_b)
        if lo_a > hi_a or lo_b > hi_b:
            continue
        counters = Counters(int(den_a), int(rng.integers(lo_a, hi_a + 1)),
                            int(den_b), int(rng.integers(lo_b, hi_b + 1)))
        assert bias(DP, counters) <= kappa + 1e-12


def test_static_fair_conditional_correctness_constructed():
    # equal denominators T/2 per period and per-period bias <= kappa
    # compose to cumulative bias <= kappa
    rng = np.random.default_rng(11)
    horizon, kappa = 20, 0.2
    half = horizon // 2
    for _ in range(200):
        total = Counters()
        periods = rng.integers(1, 10)
        for _ in range(periods):
            budget = math.floor(kappa * half)
            num_a = int(rng.integers(0, half + 1))
            lo = max(0, num_a - budget)
            hi = min(half, num_a + budget)
            num_b = int(rng.integers(lo, hi + 1))
            c = Counters(half, num_a, half, num_b)
            assert bias(DP, c) <= kappa + 1e-12
            total = Counters(total.n_a + half, total.n_a1 + num_a,
                             total.n_b + half, total.n_b1 + num_b)
        assert bias(DP, total) <= kappa + 1e-12


# -- periodic drivers -----------------------------------------------------------

def _feed(shield, group, recommendation, count, z=None):
    for _ in range(count):
        periodic_step(shield, InputEvent(Group(group), recommendation, 1.0), z)


def test_static_fair_counterexample_accounting():
    # vacuous threshold so the table provably never intervenes; the driver
    # then just accounts for the adversarial two-period stream
    theta = build_theta("constant", 0.5)
    table = synthesize(theta, FairnessSpec(DP, 1.0, 100))
    shield = StaticFairShield(table)
    _feed(shield, "a", 0, 1)
    _feed(shield, "b", 0, 99)
    first = period_boundary(shield)
    _feed(shield, "a", 1, 99)
    _feed(shield, "b", 1, 1)
    second = period_boundary(shield)
    assert first.period_bias == 0.0 and second.period_bias == 0.0
    assert first.cumulative_bias == 0.0
    assert second.cumulative_bias == 0.98
    assert first.equal_denominators is False
    assert shield.cumulative_counters == Counters(100, 99, 100, 1)


def test_sequencing_errors():
    theta = build_theta("constant", 0.5)
    table = synthesize(theta, FairnessSpec(DP, 0.5, 2))
    shield = StaticFairShield(table)
    with pytest.raises(SequencingError):
        period_boundary(shield)  # too early
    _feed(shield, "a", 1, 2)
    with pytest.raises(SequencingError):
        periodic_step(shield, InputEvent(A, 1, 1.0))  # boundary missed
    period_boundary(shield)
    assert shield.steps_in_period == 0


def test_static_bw_flags_balancedness():
    theta = build_theta("constant", 0.5)
    table = synthesize_static_bw(theta, 4, WelfareBounds(0.2, 0.7))
    shield = StaticBWShield(table)
    _feed(shield, "a", 1, 2)
    _feed(shield, "b", 1, 2)
    report = period_boundary(shield)
    assert report.balanced is True  # N = 2, both denominators are 2
    assert report.assumption_satisfied is True


def test_dynamic_driver_resynthesizes_each_period():
    theta = build_theta("constant", 0.5)
    shield = DynamicShield(theta, FairnessSpec(DP, 0.2, 4))
    for _ in range(3):
        _feed(shield, "a", 1, 2)
        _feed(shield, "b", 0, 2)
        report = period_boundary(shield)
        assert report.cumulative_bias <= 0.2 + 1e-12
        assert report.fallback is False
    assert shield.resynth_count == 3
    assert shield.accumulated == shield.cumulative_counters


def test_dynamic_fallback_and_retry_mechanism():
    # force the accumulated history into a state whose buffered synthesis
    # is provably infeasible (locked-in bias 0.5 against kappa 0.01), then
    # check one pass-through period and the retry at the next boundary
    theta = build_theta("constant", 0.5)
    shield = DynamicShield(theta, FairnessSpec(DP, 0.01, 3))
    bad = Counters(2, 1, 98, 98)
    shield.cumulative_counters = bad
    shield.steps_in_period = 3
    shield.period_counters = Counters(1, 1, 2, 2)
    report = period_boundary(shield)
    assert report.fallback is False  # flag describes the period just closed
    assert shield.fallback is True and shield.table is None
    # pass-through period: recommendations go through untouched
    out = periodic_step(shield, InputEvent(A, 0, 1.0))
    assert out == 0
    _feed(shield, "b", 1, 2)
    report2 = period_boundary(shield)
    assert report2.fallback is True
    assert shield.resynth_count == 2  # retried after the fallback period


def test_buffered_resynthesis_of_published_history_is_feasible():
    # history (2,1,98,49) with kappa=0.1, T=100: the shield picks its
    # decision on the final group-a arrival after seeing it, so a fair
    # continuation policy exists, but not a free one
    theta = build_theta("constant", 0.5)
    table = synthesize(theta, FairnessSpec(DP, 0.1, 100),
                       BufferedTerminal(Counters(2, 1, 98, 49), 0.1))
    assert table.feasible
    assert table.root_value > 0.0


def test_pass_through_shield_counts_and_costs():
    shield = PassThroughShield(FairnessSpec(DP, 1.0, 3))
    _feed(shield, "a", 1, 1)
    _feed(shield, "b", 0, 2)
    report = period_boundary(shield)
    assert report.period_cost == 0.0
    assert report.period_interventions == 0
    assert report.period_bias == 1.0  # 1/1 vs 0/2

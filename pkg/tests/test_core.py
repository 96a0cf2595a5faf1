import math

import pytest
from hypothesis import given, strategies as st

from fairshield.core import (ACCEPT, DP, EQOPP, REJECT, Counters, FairnessSpec,
                             Group, InputEvent, StepRecord, bias,
                             disparate_impact, trace_cost, trace_counters,
                             update_counters, welfare, zero_counters)
from fairshield.errors import ValidationError


def ev(g, r, c=1.0):
    return InputEvent(Group(g), r, c)


# -- bias ------------------------------------------------------------------

def test_bias_single_a_among_rejected_b():
    assert bias(DP, Counters(1, 0, 99, 0)) == 0.0


def test_bias_null_denominator_is_zero():
    assert bias(DP, Counters(0, 0, 7, 3)) == 0.0


def test_bias_counterexample_concatenation():
    assert bias(DP, Counters(100, 99, 100, 1)) == 0.98


def test_bias_eqopp_uses_primed_counters():
    assert bias(EQOPP, Counters(4, 2, 2, 2, stage=10)) == 0.5


# -- welfare ---------------------------------------------------------------

def test_welfare_basic():
    c = Counters(2, 1, 5, 0)
    assert welfare(Group.A, c) == 0.5
    assert welfare(Group.B, c) == 0.0


def test_welfare_undefined_marker():
    assert welfare(Group.A, Counters(0, 0, 5, 2)) is None


def test_disparate_impact_metric():
    assert disparate_impact(Counters(4, 2, 4, 1)) == 2.0
    assert disparate_impact(Counters(0, 0, 4, 1)) == 0.0
    assert disparate_impact(Counters(4, 2, 4, 0)) == math.inf


# -- update_counters -------------------------------------------------------

def test_update_dp_accept():
    out = update_counters(DP, Counters(), ev("a", 1), ACCEPT)
    assert out == Counters(1, 1, 0, 0)


def test_update_dp_reject_group_b():
    out = update_counters(DP, Counters(1, 1, 0, 0), ev("b", 0), REJECT)
    assert out == Counters(1, 1, 1, 0)


def test_update_eqopp_negative_label_only_moves_stage():
    out = update_counters(EQOPP, zero_counters(EQOPP), ev("a", 1), ACCEPT,
                          ground_truth=0)
    assert out == Counters(0, 0, 0, 0, stage=1)


def test_update_eqopp_positive_label():
    out = update_counters(EQOPP, zero_counters(EQOPP), ev("b", 1), ACCEPT,
                          ground_truth=1)
    assert out == Counters(0, 0, 1, 1, stage=1)


def test_update_eqopp_requires_ground_truth():
    with pytest.raises(ValidationError):
        update_counters(EQOPP, zero_counters(EQOPP), ev("a", 1), ACCEPT)


def test_counter_invariants_enforced():
    with pytest.raises(ValidationError):
        Counters(1, 2, 0, 0)
    with pytest.raises(ValidationError):
        Counters(2, 0, 3, 0, stage=4)
    with pytest.raises(ValidationError):
        Counters(-1, 0, 0, 0)


# -- trace cost ------------------------------------------------------------

def _trace(*steps):
    return [StepRecord(ev(g, r, c), y) for (g, r, c, y) in steps]


def test_trace_cost_no_interventions():
    t = _trace(("a", 1, 2.0, 1), ("b", 0, 3.0, 0))
    assert trace_cost(t) == 0.0


def test_trace_cost_single_flip():
    t = _trace(("a", 1, 1.0, 0))
    assert trace_cost(t) == 1.0


def test_trace_cost_partial_sums():
    t = _trace(("a", 1, 0.2, 0), ("b", 0, 0.3, 0), ("a", 0, 0.5, 1))
    assert trace_cost(t) == pytest.approx(0.7, abs=1e-15)
    assert trace_cost(t, upto=1) == 0.2
    assert trace_cost(t, upto=0) == 0.0
    with pytest.raises(ValidationError):
        trace_cost(t, upto=5)


# -- property tests --------------------------------------------------------

steps = st.tuples(
    st.sampled_from(["a", "b"]),
    st.integers(0, 1),
    st.floats(0.0, 10.0, allow_nan=False),
    st.integers(0, 1),
    st.integers(0, 1),
)


@st.composite
def traces(draw, max_len=25):
    raw = draw(st.lists(steps, max_size=max_len))
    return [StepRecord(ev(g, r, c), y, z) for (g, r, c, y, z) in raw]


@given(traces())
def test_bias_in_unit_interval(trace):
    for kind in (DP, EQOPP):
        c = trace_counters(kind, trace)
        assert 0.0 <= bias(kind, c) <= 1.0


@given(traces())
def test_fold_matches_direct_statistic(trace):
    c = trace_counters(DP, trace)
    assert c.n_a == sum(1 for s in trace if s.input.group == Group.A)
    assert c.n_a1 == sum(1 for s in trace
                         if s.input.group == Group.A and s.final == 1)
    ce = trace_counters(EQOPP, trace)
    assert ce.stage == len(trace)
    assert ce.n_a == sum(1 for s in trace
                         if s.input.group == Group.A and s.ground_truth == 1)


@given(traces())
def test_bias_zero_when_rates_equal(trace):
    c = trace_counters(DP, trace)
    if c.n_a > 0 and c.n_b > 0 and c.n_a1 * c.n_b == c.n_b1 * c.n_a:
        assert bias(DP, c) == 0.0


@given(traces(), traces())
def test_cost_additive_under_concatenation(t1, t2):
    total = trace_cost(list(t1) + list(t2))
    assert total == pytest.approx(trace_cost(t1) + trace_cost(t2), rel=1e-12, abs=1e-12)
    assert trace_cost([]) == 0.0


@given(traces(), st.randoms())
def test_permutation_invariance(trace, rng):
    shuffled = list(trace)
    rng.shuffle(shuffled)
    for kind in (DP, EQOPP):
        assert bias(kind, trace_counters(kind, shuffled)) == \
            bias(kind, trace_counters(kind, trace))
    assert trace_cost(shuffled) == pytest.approx(trace_cost(trace), rel=1e-12, abs=1e-12)


def test_fairness_spec_validation():
    FairnessSpec(DP, 1.0, 1)
    with pytest.raises(ValidationError):
        FairnessSpec(DP, 0.0, 5)
    with pytest.raises(ValidationError):
        FairnessSpec(DP, 1.2, 5)
    with pytest.raises(ValidationError):
        FairnessSpec(DP, 0.5, 0)
    with pytest.raises(ValidationError):
        FairnessSpec("parity", 0.5, 5)

"""Independent ground-truth machinery for validating the synthesis engine.

:func:`exact_enumerate` reruns the value recursion over *trace prefixes*
with no counter abstraction: every length-t prefix gets its own value, so
the enumeration covers exactly ``branching**T`` leaves.  It shares no code
with the lattice engine (its own counter bookkeeping, its own terminal
evaluation), which is the point: agreement between the two is evidence,
not tautology.

The rest are closed-form constructions and checks lifted from the theory:

* counterexample generators showing that per-period fairness does not
  compose (and how badly);
* the mediant inequality bounding a pooled ratio by the per-part ratios;
* the ceil(l*n) staircase witnessing that bounded welfare is enforceable
  once a group's denominator reaches ceil(1/(u-l));
* the exact binomial probability of a period being N-balanced;
* the closed-form expectation of signed demographic parity under the
  independence model.

Closed-form bias values are computed in exact rational arithmetic and
returned as their float images, so stated constants like 0.98 or 0.375
compare exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .core import DP, EQOPP, Counters, FairnessSpec, Group
from .distribution import PROB_EPS, InputDistribution
from .errors import SizeGuardError, ValidationError
from .periodic import WelfareBounds, exact_bounds, min_balance
from .synthesis import (BoundedWelfareTerminal, BufferedTerminal, FairTerminal,
                        TerminalRule)

#: Branch-value differences at or below this are treated as ties when
#: comparing oracle decisions against table decisions.
GAP_EPS = 1e-9

_MAX_HORIZON = 8
_MAX_INPUTS = 8
_MAX_NODES = 1 << 25


# ---------------------------------------------------------------------------
# exact enumeration (the brute-force oracle)
# ---------------------------------------------------------------------------

@dataclass
class ExactResult:
    """Exhaustive recursion output, indexed by trace prefix.

    Level ``t`` arrays cover all ``branching**t`` prefixes in encoding
    order (prefix id * branching + step digit).  ``counters[t]`` holds the
    four counter arrays of each prefix, ``decisions[t]`` the optimal
    decision per (prefix, input), and ``significant[t]`` flags where the
    two branch values differ by more than ``GAP_EPS`` (elsewhere the
    decision is a tie and either branch is optimal).
    """

    kind: str
    root_value: float
    leaf_count: int
    branching: int
    n_inputs: int
    counters: list
    decisions: list
    significant: list

    @property
    def enumeration_size(self) -> int:
        return self.leaf_count


def _oracle_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.full(num.shape, np.nan)
    np.divide(num, den, out=out, where=den > 0)
    return out


def _oracle_terminal(terminal: TerminalRule, na, na1, nb, nb1) -> np.ndarray:
    # deliberately a separate implementation from the synthesis engine
    if isinstance(terminal, BufferedTerminal):
        base = terminal.base
        na, na1 = na + base.n_a, na1 + base.n_a1
        nb, nb1 = nb + base.n_b, nb1 + base.n_b1
        terminal = FairTerminal(terminal.kappa)
    wa = _oracle_ratio(na1, na)
    wb = _oracle_ratio(nb1, nb)
    if isinstance(terminal, FairTerminal):
        gap = np.abs(wa - wb)
        ok = np.where(np.isnan(wa) | np.isnan(wb), True, gap <= terminal.kappa)
    elif isinstance(terminal, BoundedWelfareTerminal):
        unbalanced = (na < terminal.min_count) | (nb < terminal.min_count)
        inside = ((wa >= terminal.lower) & (wa <= terminal.upper)
                  & (wb >= terminal.lower) & (wb <= terminal.upper))
        ok = unbalanced | inside
    else:
        raise ValidationError(f"unknown terminal rule {terminal!r}")
    return np.where(ok, 0.0, np.inf)


def exact_enumerate(
    theta: InputDistribution,
    spec: FairnessSpec,
    terminal: Optional[TerminalRule] = None,
) -> ExactResult:
    """Value recursion over raw trace prefixes (no counter merging).

    Guarded to horizon <= 8, at most 8 inputs, and ``branching**horizon``
    below 2**25 nodes; beyond that the blow-up is the whole reason the
    lattice engine exists.
    """
    if terminal is None:
        terminal = FairTerminal(spec.kappa)
    horizon = spec.horizon
    n_inputs = len(theta.entries)
    if horizon > _MAX_HORIZON or n_inputs > _MAX_INPUTS:
        raise SizeGuardError(
            f"exact enumeration limited to horizon <= {_MAX_HORIZON} and "
            f"{_MAX_INPUTS} inputs, got T={horizon}, |X|={n_inputs}"
        )
    per_step = 2 * n_inputs if spec.kind == DP else 4 * n_inputs
    if per_step ** horizon > _MAX_NODES:
        raise SizeGuardError(
            f"enumeration of {per_step}**{horizon} leaves exceeds the node budget"
        )
    if spec.kind == EQOPP:
        for e in theta.entries:
            if e.probability >= PROB_EPS:
                theta.p_z1(e.group, e.recommendation)
        return _enumerate_eqopp(theta, spec, terminal)
    return _enumerate_dp(theta, spec, terminal)


def _level_counters(horizon: int, increments: np.ndarray):
    """Per-level counter arrays grown step by step.

    ``increments`` has one row per step digit and one column per counter;
    level t+1 prefixes extend level t by one digit, so counters are a
    repeat of the parent counters plus a tile of the digit increments.
    """
    per_step = increments.shape[0]
    levels = [np.zeros((1, increments.shape[1]), dtype=np.int32)]
    for t in range(horizon):
        parents = np.repeat(levels[t], per_step, axis=0)
        levels.append(parents + np.tile(increments, (levels[t].shape[0], 1)))
    return levels


def _enumerate_dp(theta, spec, terminal):
    entries = list(theta.entries)
    costs = [theta.cost_set[e.cost_index] for e in entries]
    horizon = spec.horizon
    n_inputs = len(entries)

    # step digit = input index * 2 + decision
    inc = np.zeros((2 * n_inputs, 4), dtype=np.int32)
    for x, e in enumerate(entries):
        for y in (0, 1):
            d = x * 2 + y
            if e.group == Group.A:
                inc[d, 0], inc[d, 1] = 1, y
            else:
                inc[d, 2], inc[d, 3] = 1, y
    counters = _level_counters(horizon, inc)

    leaf = counters[horizon]
    v = _oracle_terminal(terminal, leaf[:, 0], leaf[:, 1], leaf[:, 2], leaf[:, 3])

    decisions: list = [None] * horizon
    significant: list = [None] * horizon
    for t in range(horizon - 1, -1, -1):
        n_prefix = counters[t].shape[0]
        v_children = v.reshape(n_prefix, n_inputs, 2)
        v_here = np.zeros(n_prefix)
        dec = np.empty((n_prefix, n_inputs), dtype=np.uint8)
        sig = np.empty((n_prefix, n_inputs), dtype=bool)
        for x, e in enumerate(entries):
            r = e.recommendation
            agree = v_children[:, x, r]
            flip = v_children[:, x, 1 - r] + costs[x]
            flips = flip < agree
            dec[:, x] = np.where(flips, 1 - r, r)
            with np.errstate(invalid="ignore"):
                diff = np.abs(agree - flip)  # inf-inf ties -> nan -> not significant
            sig[:, x] = np.where(np.isnan(diff), False, diff > GAP_EPS)
            if e.probability >= PROB_EPS:
                v_here += e.probability * np.where(flips, flip, agree)
        decisions[t] = dec
        significant[t] = sig
        v = v_here
    return ExactResult(
        kind=DP,
        root_value=float(v[0]),
        leaf_count=(2 * n_inputs) ** horizon,
        branching=2 * n_inputs,
        n_inputs=n_inputs,
        counters=[(c[:, 0], c[:, 1], c[:, 2], c[:, 3]) for c in counters[:horizon]],
        decisions=decisions,
        significant=significant,
    )


def _enumerate_eqopp(theta, spec, terminal):
    entries = list(theta.entries)
    costs = [theta.cost_set[e.cost_index] for e in entries]
    pz1 = [theta.p_z1(e.group, e.recommendation) for e in entries]
    horizon = spec.horizon
    n_inputs = len(entries)

    # step digit = (input index * 2 + decision) * 2 + label; the primed
    # counters move only on label 1
    inc = np.zeros((4 * n_inputs, 4), dtype=np.int32)
    for x, e in enumerate(entries):
        for y in (0, 1):
            d = (x * 2 + y) * 2 + 1
            if e.group == Group.A:
                inc[d, 0], inc[d, 1] = 1, y
            else:
                inc[d, 2], inc[d, 3] = 1, y
    counters = _level_counters(horizon, inc)

    leaf = counters[horizon]
    v = _oracle_terminal(terminal, leaf[:, 0], leaf[:, 1], leaf[:, 2], leaf[:, 3])

    decisions: list = [None] * horizon
    significant: list = [None] * horizon
    for t in range(horizon - 1, -1, -1):
        n_prefix = counters[t].shape[0]
        v_children = v.reshape(n_prefix, n_inputs, 2, 2)
        v_here = np.zeros(n_prefix)
        dec = np.empty((n_prefix, n_inputs), dtype=np.uint8)
        sig = np.empty((n_prefix, n_inputs), dtype=bool)
        for x, e in enumerate(entries):
            r = e.recommendation
            p1 = pz1[x]

            def branch(y):
                if p1 < PROB_EPS:
                    return v_children[:, x, y, 0]
                if p1 > 1.0 - PROB_EPS:
                    return v_children[:, x, y, 1]
                return (1.0 - p1) * v_children[:, x, y, 0] + p1 * v_children[:, x, y, 1]

            agree = branch(r)
            flip = branch(1 - r) + costs[x]
            flips = flip < agree
            dec[:, x] = np.where(flips, 1 - r, r)
            with np.errstate(invalid="ignore"):
                diff = np.abs(agree - flip)
            sig[:, x] = np.where(np.isnan(diff), False, diff > GAP_EPS)
            if e.probability >= PROB_EPS:
                v_here += e.probability * np.where(flips, flip, agree)
        decisions[t] = dec
        significant[t] = sig
        v = v_here
    return ExactResult(
        kind=EQOPP,
        root_value=float(v[0]),
        leaf_count=(4 * n_inputs) ** horizon,
        branching=4 * n_inputs,
        n_inputs=n_inputs,
        counters=[(c[:, 0], c[:, 1], c[:, 2], c[:, 3]) for c in counters[:horizon]],
        decisions=decisions,
        significant=significant,
    )


# ---------------------------------------------------------------------------
# counterexample constructions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CounterexamplePair:
    """Two period counter tuples, their biases, and the pooled bias."""

    first: Counters
    second: Counters
    first_bias: float
    second_bias: float
    combined_bias: float
    violation: bool

    @property
    def combined(self) -> Counters:
        return Counters(
            self.first.n_a + self.second.n_a,
            self.first.n_a1 + self.second.n_a1,
            self.first.n_b + self.second.n_b,
            self.first.n_b1 + self.second.n_b1,
        )


def counterexample_static_fair(horizon: int) -> CounterexamplePair:
    """Two zero-bias periods whose concatenation has bias 1 - 2/T.

    Period one: a single rejected group-a individual among T-1 rejected
    group-b individuals; period two mirrors it with acceptances.  Each
    period is perfectly fair; pooled, group a's acceptance rate is
    (T-1)/T against group b's 1/T.  Degenerate at T=2 (combined bias 0).
    """
    if horizon < 2:
        raise ValidationError(f"construction needs horizon >= 2, got {horizon}")
    t = horizon
    first = Counters(1, 0, t - 1, 0)
    second = Counters(t - 1, t - 1, 1, 1)
    combined = Fraction(t - 2, t)
    return CounterexamplePair(
        first=first,
        second=second,
        first_bias=0.0,
        second_bias=0.0,
        combined_bias=float(combined),
        violation=combined > 0,
    )


def counterexample_family(horizon: int, k: int) -> CounterexamplePair:
    """The (T, K) family: per-period bias (T-2K)/((T-K)K), pooled (T-2K)/T.

    In period one exactly one individual of each group is accepted; in
    period two all but one.  For fixed K the per-period biases tend to
    1/K while the pooled bias tends to 1, so the pair is a violation for
    large enough T (flagged; e.g. (4, 1) is not one).
    """
    if not 0 < k < horizon / 2:
        raise ValidationError(f"need 0 < k < horizon/2, got k={k}, horizon={horizon}")
    t = horizon
    first = Counters(n_a=k, n_a1=1, n_b=t - k, n_b1=1)
    second = Counters(n_a=t - k, n_a1=t - k - 1, n_b=k, n_b1=k - 1)
    per_period = Fraction(t - 2 * k, (t - k) * k)
    combined = Fraction(t - 2 * k, t)
    return CounterexamplePair(
        first=first,
        second=second,
        first_bias=float(per_period),
        second_bias=float(per_period),
        combined_bias=float(combined),
        violation=combined > per_period,
    )


@dataclass(frozen=True)
class TightnessPair:
    """Balanced-trace counterexample showing the equal-denominator
    condition for static-fair correctness is tight."""

    pair: CounterexamplePair
    balance: int  # both periods are `balance`-balanced


def tightness_family(length: int) -> TightnessPair:
    """Balanced counterexamples for combined-trace lengths 2S and 4S+1.

    Both periods are floor((length-1)/2)-balanced yet the pooled bias can
    still exceed the per-period biases.  Constructions exist here for even
    lengths and lengths congruent to 1 mod 4; other congruence classes
    have no published construction and are rejected.
    """
    if length % 2 == 1:
        if length % 4 != 1 or length < 5:
            raise ValidationError(
                f"no construction for odd length {length} (need length = 1 mod 4, >= 5)"
            )
        s = (length - 1) // 2  # even by construction
        first = Counters(s + 1, s // 2 + 1, s, s // 2)
        second = Counters(s, s // 2, s + 1, s // 2)
        per = Fraction(1, 2 * (s + 1))
        combined = Fraction(1, 2 * s + 1)
        pair = CounterexamplePair(first, second, float(per), float(per),
                                  float(combined), combined > per)
        return TightnessPair(pair=pair, balance=s)
    s = length // 2
    if s < 2:
        raise ValidationError(f"even construction needs length >= 4, got {length}")
    first = Counters(s + 1, 2, s - 1, 1)
    second = Counters(s - 1, 1, s + 1, 1)
    bias1 = Fraction(s - 3, s * s - 1)
    bias2 = Fraction(2, s * s - 1)
    combined = Fraction(1, 2 * s)  # from the pooled tuples (3/2s - 2/2s)
    pair = CounterexamplePair(first, second, float(abs(bias1)), float(bias2),
                              float(combined), combined > max(abs(bias1), bias2))
    return TightnessPair(pair=pair, balance=s - 1)


# ---------------------------------------------------------------------------
# lemma checkers and closed forms
# ---------------------------------------------------------------------------

def mediant_check(numerators: Sequence[float], denominators: Sequence[float]) -> bool:
    """True iff min(a_i/b_i) <= sum(a)/sum(b) <= max(a_i/b_i).

    Evaluated in exact rational arithmetic on the given values, so a true
    instance of the inequality is never lost to rounding.
    """
    if len(numerators) != len(denominators) or not numerators:
        raise ValidationError("need equal-length, non-empty sequences")
    if any(x <= 0 for x in numerators) or any(x <= 0 for x in denominators):
        raise ValidationError("mediant inequality needs positive entries")
    ratios = [Fraction(a) / Fraction(b) for a, b in zip(numerators, denominators)]
    pooled = (sum(Fraction(a) for a in numerators)
              / sum(Fraction(b) for b in denominators))
    return min(ratios) <= pooled <= max(ratios)


def feasible_sequence(bounds: WelfareBounds, n_max: int) -> list[int]:
    """Acceptance staircase x_n = ceil(lower * n) for n in [N, n_max].

    Witnesses that once a group's denominator reaches N = ceil(1/(u-l)),
    accepting exactly x_n of n keeps the welfare inside the bounds, with
    x moving by 0 or 1 per arrival.  Both properties are asserted; a
    failure would falsify the existence lemma and raises RuntimeError.
    """
    n_start = min_balance(bounds)
    if n_max < n_start:
        raise ValidationError(f"n_max={n_max} below minimum balance {n_start}")
    lower, upper = exact_bounds(bounds)
    xs = []
    for n in range(n_start, n_max + 1):
        x = math.ceil(lower * n)
        if not lower <= Fraction(x, n) <= upper:
            raise RuntimeError(
                f"x_{n}={x} leaves [{bounds.lower}, {bounds.upper}]; "
                f"this falsifies the existence lemma"
            )
        if xs and x - xs[-1] not in (0, 1):
            raise RuntimeError(f"x_{n}-x_{n-1} = {x - xs[-1]} not in {{0,1}}")
        xs.append(x)
    return xs


def balanced_probability(trials: int, n_min: int, p: float) -> float:
    """P(N <= Bin(trials, p) <= trials - N): the chance a period is balanced.

    Exact big-integer/rational evaluation for trials <= 1000, log-space
    summation beyond.  Returns 0 (with a warning) when n_min > trials/2.
    """
    if not 0.0 < p < 1.0:
        raise ValidationError(f"p must be in (0, 1), got {p}")
    if n_min < 0:
        raise ValidationError(f"n_min must be >= 0, got {n_min}")
    if 2 * n_min > trials:
        warnings.warn(
            f"n_min={n_min} exceeds trials/2={trials / 2}; balance is impossible",
            stacklevel=2,
        )
        return 0.0
    if trials <= 1000:
        q = Fraction(p)
        total = sum(
            math.comb(trials, k) * q ** k * (1 - q) ** (trials - k)
            for k in range(n_min, trials - n_min + 1)
        )
        return float(total)
    log_p = math.log(p)
    log_1p = math.log1p(-p)
    logs = [
        math.lgamma(trials + 1) - math.lgamma(k + 1) - math.lgamma(trials - k + 1)
        + k * log_p + (trials - k) * log_1p
        for k in range(n_min, trials - n_min + 1)
    ]
    top = max(logs)
    return math.exp(top) * sum(math.exp(v - top) for v in logs)


def sdp_expectation(p_a: float, p1_given_a: float, p1_given_b: float,
                    horizon: int) -> float:
    """E[signed empirical parity] = (p1a - p1b) * (1 - p_a^T - (1-p_a)^T).

    The second factor is the probability that both groups appear at all;
    the signed parity is defined as 0 when one group is absent.  Positive
    when group a's acceptance probability is larger.
    """
    for name, v in (("p_a", p_a), ("p1_given_a", p1_given_a),
                    ("p1_given_b", p1_given_b)):
        if not 0.0 < v < 1.0:
            raise ValidationError(f"{name} must be in (0, 1), got {v}")
    if horizon < 1:
        raise ValidationError(f"horizon must be >= 1, got {horizon}")
    both_seen = 1.0 - p_a ** horizon - (1.0 - p_a) ** horizon
    return (p1_given_a - p1_given_b) * both_seen

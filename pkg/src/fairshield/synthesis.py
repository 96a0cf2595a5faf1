"""Cost-optimal shield synthesis by backward induction over the counter lattice.

The value of a trace prefix depends on the prefix only through its counter
statistic, so the dynamic program runs over reachable counter vectors
instead of traces.  Stage ``t`` holds every statistic value reachable by a
length-``t`` trace:

* demographic parity: ``(n_a, n_a1, n_b, n_b1)`` with ``n_a + n_b = t``,
  packed as ``(n_a, n_a1, n_b1)``;
* equal opportunity: the four ground-truth-positive counters plus the
  stage index, ``(n_a', n_a1', n_b', n_b1')`` with ``n_a' + n_b' <= t``.

States of one stage live in flat numpy arrays ordered lexicographically
(C-order over the packed axes); :func:`_dp_rank` / :func:`_eq_rank` give a
state's position in closed form, which is what the decision tables are
indexed by.  Values flow backward one stage at a time, so only two stages
of values are resident; the per-state, per-input argmin decisions are kept
for all stages.

Infeasibility is the IEEE ``inf``: it absorbs added costs and loses every
``min`` against a finite value, exactly the algebra the terminal rules
need.  A shield exists iff the root value is finite.

The recursion at a state with inputs ``x = (g, r, c)`` weighted ``θ(x)``::

    v(s) = Σ_x θ(x) · min( v(child y=r),  v(child y≠r) + c )

and for equal opportunity each branch takes the expectation over the
ground-truth label first::

    v(s) = Σ_x θ(x) · min_y ( cost(y) + Σ_z P(z|x) · v(child y,z) )

Ties prefer the recommendation, so an optimal shield never pays for an
intervention that buys nothing.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Union

import numpy as np

from .core import DP, EQOPP, Counters, FairnessSpec, Group, InputEvent
from .distribution import PROB_EPS, InputDistribution, validate
from .errors import ShieldLookupError, ValidationError


# ---------------------------------------------------------------------------
# terminal rules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FairTerminal:
    """Stage-T value 0 iff the trace bias is within ``kappa``, else infeasible."""

    kappa: float


@dataclass(frozen=True)
class BoundedWelfareTerminal:
    """Stage-T value 0 iff the trace is not ``min_count``-balanced or both
    group welfares lie in ``[lower, upper]``; infeasible otherwise."""

    lower: float
    upper: float
    min_count: int


@dataclass(frozen=True)
class BufferedTerminal:
    """Stage-T value 0 iff the bias of accumulated-plus-period counters is
    within ``kappa``; used by dynamic per-period resynthesis."""

    base: Counters
    kappa: float


TerminalRule = Union[FairTerminal, BoundedWelfareTerminal, BufferedTerminal]


def _bias_grid(na, na1, nb, nb1):
    wa = np.divide(na1, na, out=np.zeros(np.broadcast(na, na1).shape), where=na > 0)
    wb = np.divide(nb1, nb, out=np.zeros(np.broadcast(nb, nb1).shape), where=nb > 0)
    return np.where((na > 0) & (nb > 0), np.abs(wa - wb), 0.0)


def _terminal_values(rule: TerminalRule, na, na1, nb, nb1) -> np.ndarray:
    """Evaluate a terminal rule on flat counter arrays."""
    if isinstance(rule, FairTerminal):
        ok = _bias_grid(na, na1, nb, nb1) <= rule.kappa
    elif isinstance(rule, BufferedTerminal):
        b = rule.base
        ok = _bias_grid(na + b.n_a, na1 + b.n_a1, nb + b.n_b, nb1 + b.n_b1) <= rule.kappa
    elif isinstance(rule, BoundedWelfareTerminal):
        balanced = (na >= rule.min_count) & (nb >= rule.min_count)
        wa = np.divide(na1, na, out=np.zeros(na.shape), where=na > 0)
        wb = np.divide(nb1, nb, out=np.zeros(nb.shape), where=nb > 0)
        in_bounds = ((wa >= rule.lower) & (wa <= rule.upper)
                     & (wb >= rule.lower) & (wb <= rule.upper))
        ok = ~balanced | in_bounds
    else:
        raise ValidationError(f"unknown terminal rule {rule!r}")
    return np.where(ok, 0.0, np.inf)


# ---------------------------------------------------------------------------
# lattice geometry
# ---------------------------------------------------------------------------

def stage_state_count(kind: str, t: int) -> int:
    """Number of reachable counter vectors at stage ``t`` (closed form)."""
    if kind == DP:
        # sum over n_a of (n_a+1)(t-n_a+1)
        return math.comb(t + 3, 3)
    if kind == EQOPP:
        return math.comb(t + 4, 4)
    raise ValidationError(f"unknown fairness kind {kind!r}")


def lattice_size(kind: str, horizon: int) -> int:
    """Total reachable (stage, counters) pairs for stages 0..horizon."""
    if kind == DP:
        return math.comb(horizon + 4, 4)
    if kind == EQOPP:
        return math.comb(horizon + 5, 5)
    raise ValidationError(f"unknown fairness kind {kind!r}")


def reachable_lattice(
    spec: Union[FairnessSpec, str], horizon: Optional[int] = None
) -> Iterator[tuple[int, Counters]]:
    """Enumerate (stage, counters) in table order, stages 0..horizon.

    Accepts either a :class:`FairnessSpec` or a kind string plus an
    explicit horizon.  The order per stage matches the decision tables'
    row order.
    """
    if isinstance(spec, FairnessSpec):
        kind, horizon = spec.kind, spec.horizon
    else:
        kind = spec
        if horizon is None:
            raise ValidationError("horizon required when passing a kind string")
    for t in range(horizon + 1):
        if kind == DP:
            for n_a in range(t + 1):
                for n_a1 in range(n_a + 1):
                    for n_b1 in range(t - n_a + 1):
                        yield t, Counters(n_a, n_a1, t - n_a, n_b1)
        elif kind == EQOPP:
            for i in range(t + 1):
                for j in range(i + 1):
                    for k in range(t - i + 1):
                        for l in range(k + 1):
                            yield t, Counters(i, j, k, l, stage=t)
        else:
            raise ValidationError(f"unknown fairness kind {kind!r}")


@functools.lru_cache(maxsize=512)
def _dp_offsets(t: int) -> np.ndarray:
    # offsets[i] = number of stage-t states with n_a < i
    i = np.arange(t + 1, dtype=np.int64)
    out = np.zeros(t + 2, dtype=np.int64)
    np.cumsum((i + 1) * (t - i + 1), out=out[1:])
    return out


def _dp_states(t: int):
    """Stage-t packed states (n_a, n_a1, n_b1) as flat arrays in rank order."""
    i, j, l = np.ogrid[: t + 1, : t + 1, : t + 1]
    mask = (j <= i) & (l <= t - i)
    idx = np.nonzero(mask)
    return tuple(a.astype(np.int64) for a in idx)


def _dp_rank(t: int, n_a, n_a1, n_b1):
    return _dp_offsets(t)[n_a] + n_a1 * (t - n_a + 1) + n_b1


@functools.lru_cache(maxsize=512)
def _eq_offsets(t: int) -> np.ndarray:
    # offsets[i] = number of stage-t states with n_a' < i
    i = np.arange(t + 1, dtype=np.int64)
    pairs = (t - i + 1) * (t - i + 2) // 2  # (n_b', n_b1') combinations
    out = np.zeros(t + 2, dtype=np.int64)
    np.cumsum((i + 1) * pairs, out=out[1:])
    return out


def _eq_states(t: int):
    """Stage-t states (n_a', n_a1', n_b', n_b1') as flat arrays in rank order."""
    i, j, k, l = np.ogrid[: t + 1, : t + 1, : t + 1, : t + 1]
    mask = (j <= i) & (l <= k) & (i + k <= t)
    idx = np.nonzero(mask)
    return tuple(a.astype(np.int64) for a in idx)


def _eq_rank(t: int, i, j, k, l):
    pairs = (t - i + 1) * (t - i + 2) // 2
    return _eq_offsets(t)[i] + j * pairs + k * (k + 1) // 2 + l


def state_rank(kind: str, stage: int, counters: Counters) -> int:
    """Row index of a stage state in table order (also the file layouts' order).

    Raises :class:`ShieldLookupError` if the counters are not a valid
    stage-``stage`` state of the given kind.
    """
    if kind == DP:
        if (counters.stage is not None
                or counters.n_a + counters.n_b != stage):
            raise ShieldLookupError(
                f"counters {counters} are not a stage-{stage} dp state")
        return int(_dp_rank(stage, counters.n_a, counters.n_a1, counters.n_b1))
    if kind == EQOPP:
        if counters.stage != stage or counters.n_a + counters.n_b > stage:
            raise ShieldLookupError(
                f"counters {counters} are not a stage-{stage} eqopp state")
        return int(_eq_rank(stage, counters.n_a, counters.n_a1,
                            counters.n_b, counters.n_b1))
    raise ValidationError(f"unknown fairness kind {kind!r}")


# ---------------------------------------------------------------------------
# the shield table
# ---------------------------------------------------------------------------

@dataclass
class ShieldTable:
    """Synthesized policy: per (stage, counters, input) the final decision.

    ``decisions[t]`` has one row per stage-``t`` state in rank order and
    one column per distribution entry.  ``root_value`` is the optimal
    expected cost of the empty trace; ``inf`` means no shield meets the
    terminal rule on every feasible trace (a reported outcome, not an
    error).  ``values`` holds per-stage optimal costs when requested at
    synthesis time.
    """

    spec: FairnessSpec
    terminal: TerminalRule
    theta: InputDistribution
    theta_digest: str
    root_value: float
    decisions: list
    values: Optional[list] = None

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.root_value)

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    def state_count(self) -> int:
        """Reachable (stage, counters) pairs covered, terminal stage included."""
        return lattice_size(self.spec.kind, self.spec.horizon)

    def decision_entry_count(self) -> int:
        """Stored (stage, counters, input) decision entries."""
        return sum(d.shape[0] * d.shape[1] for d in self.decisions)

    def _state_rank(self, stage: int, counters: Counters) -> int:
        return state_rank(self.spec.kind, stage, counters)

    def decide(self, stage: int, counters: Counters, event: InputEvent) -> int:
        """Final decision for an input at a reachable state.

        Raises :class:`ShieldLookupError` for stages outside [0, T),
        counters that are not a stage state, or inputs outside the
        distribution's support.
        """
        if not 0 <= stage < self.spec.horizon:
            raise ShieldLookupError(
                f"stage {stage} outside [0, {self.spec.horizon})"
            )
        try:
            col = self.theta.entry_index(event.group, event.recommendation, event.cost)
        except KeyError as exc:
            raise ShieldLookupError(str(exc)) from None
        if self.theta.entries[col].probability < PROB_EPS:
            raise ShieldLookupError(
                f"input (g={event.group}, r={event.recommendation}, "
                f"c={event.cost}) has zero probability"
            )
        row = self._state_rank(stage, counters)
        return int(self.decisions[stage][row, col])

    def value_at(self, stage: int, counters: Counters) -> float:
        if self.values is None:
            raise ValidationError("synthesize(..., keep_values=True) to retain values")
        if not 0 <= stage <= self.spec.horizon:
            raise ShieldLookupError(f"stage {stage} outside [0, {self.spec.horizon}]")
        return float(self.values[stage][self._state_rank(stage, counters)])


def decide(table: ShieldTable, stage: int, counters: Counters,
           event: InputEvent) -> int:
    """Module-level alias for :meth:`ShieldTable.decide`."""
    return table.decide(stage, counters, event)


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------

def _entry_tuples(theta: InputDistribution):
    return [
        (0 if e.group == Group.A else 1, e.recommendation,
         theta.cost_set[e.cost_index], e.probability)
        for e in theta.entries
    ]


def synthesize(
    theta: InputDistribution,
    spec: FairnessSpec,
    terminal: Optional[TerminalRule] = None,
    *,
    keep_values: bool = False,
) -> ShieldTable:
    """Backward induction from stage T to 0 under the given terminal rule.

    The default terminal is :class:`FairTerminal` at the spec's threshold.
    An infeasible problem yields a table with ``root_value == inf`` rather
    than an exception; periodic drivers use that as a fallback signal.
    """
    problems = validate(theta)
    if problems:
        raise ValidationError("; ".join(problems))
    if terminal is None:
        terminal = FairTerminal(spec.kappa)
    if spec.kind == EQOPP:
        for e in theta.entries:
            if e.probability >= PROB_EPS:
                theta.p_z1(e.group, e.recommendation)  # raises if missing
    sweep = _sweep_dp if spec.kind == DP else _sweep_eqopp
    root, decisions, values = sweep(theta, spec.horizon, terminal, keep_values)
    return ShieldTable(
        spec=spec,
        terminal=terminal,
        theta=theta,
        theta_digest=theta.digest(),
        root_value=root,
        decisions=decisions,
        values=values,
    )


def _sweep_dp(theta, T, terminal, keep_values):
    entries = _entry_tuples(theta)
    na, na1, nb1 = _dp_states(T)
    v_next = _terminal_values(terminal, na, na1, T - na, nb1)
    values = [None] * (T + 1) if keep_values else None
    if keep_values:
        values[T] = v_next
    decisions = [None] * T
    for t in range(T - 1, -1, -1):
        na, na1, nb1 = _dp_states(t)
        child = {
            # group a arrival: (n_a+1, n_a1+y, n_b1); group b: (n_a, n_a1, n_b1+y)
            (0, 0): _dp_rank(t + 1, na + 1, na1, nb1),
            (0, 1): _dp_rank(t + 1, na + 1, na1 + 1, nb1),
            (1, 0): _dp_rank(t + 1, na, na1, nb1),
            (1, 1): _dp_rank(t + 1, na, na1, nb1 + 1),
        }
        v = np.zeros(na.shape[0])
        dec = np.empty((na.shape[0], len(entries)), dtype=np.uint8)
        for m, (g, r, c, p) in enumerate(entries):
            if p < PROB_EPS:
                dec[:, m] = r
                continue
            agree = v_next[child[(g, r)]]
            flip = v_next[child[(g, 1 - r)]] + c
            flips = flip < agree  # tie keeps the recommendation
            v += p * np.where(flips, flip, agree)
            dec[:, m] = np.where(flips, 1 - r, r)
        decisions[t] = dec
        v_next = v
        if keep_values:
            values[t] = v
    return float(v_next[0]), decisions, values


def _sweep_eqopp(theta, T, terminal, keep_values):
    entries = _entry_tuples(theta)
    pz = [theta.p_z1(e.group, e.recommendation) for e in theta.entries]
    i, j, k, l = _eq_states(T)
    v_next = _terminal_values(terminal, i, j, k, l)
    values = [None] * (T + 1) if keep_values else None
    if keep_values:
        values[T] = v_next
    decisions = [None] * T
    for t in range(T - 1, -1, -1):
        i, j, k, l = _eq_states(t)
        same = _eq_rank(t + 1, i, j, k, l)  # ground truth 0: counters frozen
        child = {
            (0, 0): _eq_rank(t + 1, i + 1, j, k, l),
            (0, 1): _eq_rank(t + 1, i + 1, j + 1, k, l),
            (1, 0): _eq_rank(t + 1, i, j, k + 1, l),
            (1, 1): _eq_rank(t + 1, i, j, k + 1, l + 1),
        }
        v = np.zeros(i.shape[0])
        dec = np.empty((i.shape[0], len(entries)), dtype=np.uint8)
        v_same = v_next[same]
        for m, (g, r, c, p) in enumerate(entries):
            if p < PROB_EPS:
                dec[:, m] = r
                continue
            p1 = pz[m]

            def branch(y):
                # expectation over the label inside the decision branch;
                # degenerate labels avoid 0 * inf
                if p1 < PROB_EPS:
                    return v_same
                if p1 > 1.0 - PROB_EPS:
                    return v_next[child[(g, y)]]
                return p1 * v_next[child[(g, y)]] + (1.0 - p1) * v_same

            agree = branch(r)
            flip = branch(1 - r) + c
            flips = flip < agree
            v += p * np.where(flips, flip, agree)
            dec[:, m] = np.where(flips, 1 - r, r)
        decisions[t] = dec
        v_next = v
        if keep_values:
            values[t] = v
    return float(v_next[0]), decisions, values

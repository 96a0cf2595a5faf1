"""Periodic enforcement: static-fair, static-bw, and dynamic shields.

A bounded-horizon table guarantees fairness at its own horizon only;
repeating it every period can still accumulate bias across periods (two
individually fair periods can combine to a bias arbitrarily close to 1).
Three drivers for the periodic setting:

``static-fair``
    replay one bounded-horizon table every period.  Correct whenever both
    groups appear equally often within each period (reported, never
    enforced).

``static-bw``
    replay one table synthesized against the bounded-welfare terminal:
    on every N-balanced period both group welfares stay in [lower, upper],
    and bounded welfare *is* closed under concatenation, so cumulative
    bias stays within upper - lower.  Unbalanced periods are exempt by
    construction (the terminal's escape clause), which also makes the
    synthesis problem always feasible.

``dynamic``
    resynthesize each period against the accumulated history: the terminal
    condition moves to bias(history + period) <= kappa.  When the
    resynthesis is infeasible the driver installs a pass-through period
    and tries again at the next boundary.

Each driver consumes exactly ``horizon`` steps per period, then
:func:`period_boundary` closes the period and reports per-period and
cumulative bias, cost, and the assumption flag its correctness theorem
needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .core import (DP, Counters, FairnessSpec, Group, InputEvent, bias,
                   update_counters, zero_counters)
from .distribution import InputDistribution
from .errors import SequencingError, ValidationError
from .synthesis import (BoundedWelfareTerminal, BufferedTerminal, FairTerminal,
                        ShieldTable, synthesize)


@dataclass(frozen=True)
class WelfareBounds:
    """Target interval for each group's welfare; implies bias <= upper - lower."""

    lower: float
    upper: float

    def __post_init__(self):
        if not 0.0 <= self.lower < self.upper <= 1.0:
            raise ValidationError(
                f"need 0 <= lower < upper <= 1, got ({self.lower}, {self.upper})"
            )


def exact_bounds(bounds: WelfareBounds) -> tuple[Fraction, Fraction]:
    """The bounds as exact rationals, with float noise snapped away.

    ``0.7 - 0.2`` is a hair under one half in doubles; taking ceilings of
    reciprocals on such values is off by one.  Snapping each bound to the
    nearest rational with denominator <= 10**9 recovers the intended
    values while leaving genuinely irrational-ish inputs untouched within
    1e-9.
    """
    return (Fraction(bounds.lower).limit_denominator(10 ** 9),
            Fraction(bounds.upper).limit_denominator(10 ** 9))


def min_balance(bounds: WelfareBounds) -> int:
    """Smallest N such that a welfare in [lower, upper] is maintainable for
    every group denominator >= N: ceil(1 / (upper - lower)), computed in
    exact rational arithmetic on the snapped bounds."""
    lower, upper = exact_bounds(bounds)
    return math.ceil(1 / (upper - lower))


def synthesize_static_bw(
    theta: InputDistribution,
    horizon: int,
    bounds: WelfareBounds,
    kind: str = DP,
) -> ShieldTable:
    """Bounded-welfare table for one period (the static-bw building block)."""
    n = min_balance(bounds)
    spec = FairnessSpec(kind, bounds.upper - bounds.lower, horizon)
    terminal = BoundedWelfareTerminal(bounds.lower, bounds.upper, n)
    return synthesize(theta, spec, terminal)


def check_balanced(period_counters: Counters, n: int) -> bool:
    """True iff both group denominators reached ``n`` within the period."""
    return (period_counters.denominator(Group.A) >= n
            and period_counters.denominator(Group.B) >= n)


def check_dynamic_assumption(
    accumulated: Counters,
    period_end: Counters,
    kappa: float,
    kind: str = DP,
) -> bool:
    """Realized-suffix check behind dynamic conditional correctness.

    ``accumulated`` is the history before the period, ``period_end`` the
    cumulative counters after it.  The inequality

        1/den_a(period_end) + 1/den_b(period_end) <= kappa + bias(accumulated)

    must hold; a zero denominator makes it unsatisfiable.
    """
    for g in (Group.A, Group.B):
        if period_end.denominator(g) < accumulated.denominator(g):
            raise ValidationError("period_end does not extend accumulated counters")
    den_a = period_end.denominator(Group.A)
    den_b = period_end.denominator(Group.B)
    if den_a == 0 or den_b == 0:
        return False
    return 1.0 / den_a + 1.0 / den_b <= kappa + bias(kind, accumulated)


@dataclass(frozen=True)
class BoundaryReport:
    """What a period boundary reports: biases, costs, assumption flags."""

    period: int
    period_bias: float
    cumulative_bias: float
    period_cost: float
    cumulative_cost: float
    period_interventions: int
    balanced: Optional[bool] = None            # static-bw: N-balanced period
    equal_denominators: Optional[bool] = None  # static-fair: den_a == den_b
    assumption: Optional[bool] = None          # dynamic: realized-suffix check
    fallback: Optional[bool] = None            # dynamic: period ran pass-through

    @property
    def assumption_satisfied(self) -> Optional[bool]:
        """The flag relevant to the driver's correctness theorem, if any."""
        for flag in (self.assumption, self.balanced, self.equal_denominators):
            if flag is not None:
                return flag
        return None


class PeriodicShield:
    """Common stepping/accounting; subclasses choose the per-step decision."""

    kind_name = "base"

    def __init__(self, spec: FairnessSpec):
        self.spec = spec
        self.periods_done = 0
        self.steps_in_period = 0
        self.period_counters = zero_counters(spec.kind)
        self.cumulative_counters = zero_counters(spec.kind)
        self.period_cost = 0.0
        self.cumulative_cost = 0.0
        self.period_interventions = 0

    # subclass hooks -----------------------------------------------------

    def _decide(self, event: InputEvent) -> int:
        raise NotImplementedError

    def _boundary_flags(self) -> dict:
        return {}

    def _after_boundary(self) -> None:
        pass

    # driver protocol ------------------------------------------------------

    def step(self, event: InputEvent, ground_truth: Optional[int] = None) -> int:
        if self.steps_in_period >= self.spec.horizon:
            raise SequencingError(
                f"period boundary missed: {self.steps_in_period} steps taken, "
                f"call period_boundary() before stepping on"
            )
        final = self._decide(event)
        kind = self.spec.kind
        self.period_counters = update_counters(
            kind, self.period_counters, event, final, ground_truth)
        self.cumulative_counters = update_counters(
            kind, self.cumulative_counters, event, final, ground_truth)
        if final != event.recommendation:
            self.period_cost += event.cost
            self.period_interventions += 1
        self.steps_in_period += 1
        return final

    def period_boundary(self) -> BoundaryReport:
        if self.steps_in_period != self.spec.horizon:
            raise SequencingError(
                f"period boundary after {self.steps_in_period} steps, "
                f"expected exactly {self.spec.horizon}"
            )
        self.cumulative_cost += self.period_cost
        self.periods_done += 1
        report = BoundaryReport(
            period=self.periods_done,
            period_bias=bias(self.spec.kind, self.period_counters),
            cumulative_bias=bias(self.spec.kind, self.cumulative_counters),
            period_cost=self.period_cost,
            cumulative_cost=self.cumulative_cost,
            period_interventions=self.period_interventions,
            **self._boundary_flags(),
        )
        self.period_counters = zero_counters(self.spec.kind)
        self.period_cost = 0.0
        self.period_interventions = 0
        self.steps_in_period = 0
        self._after_boundary()
        return report


class PassThroughShield(PeriodicShield):
    """Never intervenes; the unshielded baseline with the same accounting."""

    kind_name = "pass-through"

    def _decide(self, event: InputEvent) -> int:
        return event.recommendation


class StaticFairShield(PeriodicShield):
    """One bounded-horizon table replayed every period."""

    kind_name = "static-fair"

    def __init__(self, table: ShieldTable):
        super().__init__(table.spec)
        self.table = table

    def _decide(self, event: InputEvent) -> int:
        return self.table.decide(self.steps_in_period, self.period_counters, event)

    def _boundary_flags(self) -> dict:
        den_a = self.period_counters.denominator(Group.A)
        den_b = self.period_counters.denominator(Group.B)
        return {"equal_denominators": den_a == den_b}


class StaticBWShield(PeriodicShield):
    """One bounded-welfare table replayed every period."""

    kind_name = "static-bw"

    def __init__(self, table: ShieldTable):
        if not isinstance(table.terminal, BoundedWelfareTerminal):
            raise ValidationError("static-bw needs a bounded-welfare table")
        super().__init__(table.spec)
        self.table = table
        self.min_count = table.terminal.min_count

    def _decide(self, event: InputEvent) -> int:
        return self.table.decide(self.steps_in_period, self.period_counters, event)

    def _boundary_flags(self) -> dict:
        return {"balanced": check_balanced(self.period_counters, self.min_count)}


class DynamicShield(PeriodicShield):
    """Per-period resynthesis against the accumulated history.

    Period 1 runs the plain bounded-horizon table.  Every boundary folds
    the period into the accumulated counters and resynthesizes with the
    buffered terminal; an infeasible root installs a pass-through period
    (resynthesis is attempted again at the next boundary).
    """

    kind_name = "dynamic"

    def __init__(self, theta: InputDistribution, spec: FairnessSpec):
        super().__init__(spec)
        self.theta = theta
        self.table: Optional[ShieldTable] = synthesize(
            theta, spec, FairTerminal(spec.kappa))
        self.accumulated = zero_counters(spec.kind)  # history before this period
        self.fallback = False
        self.resynth_count = 0

    def _decide(self, event: InputEvent) -> int:
        if self.fallback:
            return event.recommendation
        return self.table.decide(self.steps_in_period, self.period_counters, event)

    def _boundary_flags(self) -> dict:
        return {
            "assumption": check_dynamic_assumption(
                self.accumulated, self.cumulative_counters,
                self.spec.kappa, self.spec.kind),
            "fallback": self.fallback,
        }

    def _after_boundary(self) -> None:
        self.accumulated = self.cumulative_counters
        table = synthesize(
            self.theta, self.spec,
            BufferedTerminal(self.accumulated, self.spec.kappa))
        self.resynth_count += 1
        if table.feasible:
            self.table = table
            self.fallback = False
        else:
            self.table = None
            self.fallback = True


def periodic_step(shield: PeriodicShield, event: InputEvent,
                  ground_truth: Optional[int] = None) -> int:
    """One shielded decision within the current period."""
    return shield.step(event, ground_truth)


def period_boundary(shield: PeriodicShield) -> BoundaryReport:
    """Close the current period and report its statistics."""
    return shield.period_boundary()

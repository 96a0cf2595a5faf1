"""Domain types, trace statistics, and cost accounting.

Conventions used throughout the package:

* two groups labelled ``"a"`` and ``"b"``; every individual belongs to
  exactly one;
* binary decisions, ``1`` = accept, ``0`` = reject;
* two fairness properties over a trace's counter statistic:

  ============ =========================================================
  ``"dp"``     demographic parity, ``|n_a1/n_a - n_b1/n_b|``
  ``"eqopp"``  equal opportunity, the same difference restricted to
               individuals whose ground-truth label is 1
  ============ =========================================================

A welfare ratio with a zero denominator is *undefined*; a bias involving
an undefined welfare is 0 by convention.  :func:`welfare` returns ``None``
for the undefined case so that callers which need to distinguish
"no individuals seen" from "welfare = 0" (the bounded-welfare terminal
rule) can do so.

All types are immutable values and all operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from .errors import ValidationError

DP = "dp"
EQOPP = "eqopp"
KINDS = (DP, EQOPP)

ACCEPT = 1
REJECT = 0


class Group(str, Enum):
    A = "a"
    B = "b"

    def __str__(self) -> str:  # "a" rather than "Group.A" in messages/CSV
        return self.value


def _check_decision(value: int, name: str = "decision") -> int:
    if value not in (0, 1):
        raise ValidationError(f"{name} must be 0 or 1, got {value!r}")
    return value


@dataclass(frozen=True)
class InputEvent:
    """One arrival: group, recommended decision, and intervention cost."""

    group: Group
    recommendation: int
    cost: float = 1.0

    def __post_init__(self):
        _check_decision(self.recommendation, "recommendation")
        if self.cost < 0:
            raise ValidationError(f"cost must be non-negative, got {self.cost}")


@dataclass(frozen=True)
class StepRecord:
    """One shielded step: the input, the final decision, optional label."""

    input: InputEvent
    final: int
    ground_truth: Optional[int] = None

    def __post_init__(self):
        _check_decision(self.final, "final")
        if self.ground_truth is not None:
            _check_decision(self.ground_truth, "ground_truth")


Trace = Sequence[StepRecord]


@dataclass(frozen=True)
class Counters:
    """The counter statistic of a trace.

    For demographic parity the four counters are the appeared/accepted
    totals per group and ``stage`` is ``None`` (the trace length is
    ``n_a + n_b``).  For equal opportunity the four counters track only
    ground-truth-positive individuals and ``stage`` counts every
    individual seen, so ``n_a + n_b <= stage``.
    """

    n_a: int = 0
    n_a1: int = 0
    n_b: int = 0
    n_b1: int = 0
    stage: Optional[int] = None

    def __post_init__(self):
        for name in ("n_a", "n_a1", "n_b", "n_b1"):
            if getattr(self, name) < 0:
                raise ValidationError(f"counter {name} must be non-negative")
        if self.n_a1 > self.n_a or self.n_b1 > self.n_b:
            raise ValidationError(
                f"accepted counters exceed appeared counters: {self}"
            )
        if self.stage is not None and self.n_a + self.n_b > self.stage:
            raise ValidationError(
                f"group counters exceed stage {self.stage}: {self}"
            )

    def length(self, kind: str = DP) -> int:
        """Trace length represented by these counters."""
        if kind == EQOPP:
            if self.stage is None:
                raise ValidationError("eqopp counters need a stage index")
            return self.stage
        return self.n_a + self.n_b

    def denominator(self, group: Group) -> int:
        return self.n_a if group == Group.A else self.n_b

    def numerator(self, group: Group) -> int:
        return self.n_a1 if group == Group.A else self.n_b1

    def astuple(self) -> tuple[int, int, int, int]:
        return (self.n_a, self.n_a1, self.n_b, self.n_b1)


def zero_counters(kind: str = DP) -> Counters:
    """The statistic of the empty trace."""
    return Counters(stage=0) if kind == EQOPP else Counters()


@dataclass(frozen=True)
class FairnessSpec:
    """Property kind, bias threshold, and horizon/period length."""

    kind: str
    kappa: float
    horizon: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown fairness kind {self.kind!r}")
        if not 0 < self.kappa <= 1:
            raise ValidationError(f"kappa must be in (0, 1], got {self.kappa}")
        if self.horizon < 1:
            raise ValidationError(f"horizon must be >= 1, got {self.horizon}")


def welfare(group: Group, counters: Counters, kind: str = DP) -> Optional[float]:
    """Group acceptance rate ``num_g / den_g``, or ``None`` if undefined.

    For ``dp`` the ratio is over all individuals of the group; for
    ``eqopp`` the counters are already restricted to ground-truth-positive
    individuals, so the formula is the same.
    """
    den = counters.denominator(group)
    if den == 0:
        return None
    return counters.numerator(group) / den


def bias(kind: str, counters: Counters) -> float:
    """Absolute welfare difference; 0 whenever either welfare is undefined."""
    wa = welfare(Group.A, counters, kind)
    wb = welfare(Group.B, counters, kind)
    if wa is None or wb is None:
        return 0.0
    return abs(wa - wb)


def disparate_impact(counters: Counters) -> float:
    """Welfare ratio ``w_a / w_b`` (metric only, never enforced).

    Returns 0 when either welfare is undefined (null denominator), and
    ``inf`` when ``w_b`` is 0 while ``w_a`` is positive.
    """
    wa = welfare(Group.A, counters)
    wb = welfare(Group.B, counters)
    if wa is None or wb is None:
        return 0.0
    if wb == 0.0:
        return 0.0 if wa == 0.0 else float("inf")
    return wa / wb


def update_counters(
    kind: str,
    counters: Counters,
    event: InputEvent,
    final: int,
    ground_truth: Optional[int] = None,
) -> Counters:
    """Counter statistic after one more step.

    ``dp``: increments ``n_g``, and ``n_g1`` iff the final decision is
    accept.  ``eqopp``: increments the stage; the primed counters move
    only for ground-truth-positive individuals, whose label is required.
    """
    _check_decision(final, "final")
    accepted = 1 if final == ACCEPT else 0
    if kind == DP:
        if event.group == Group.A:
            return Counters(counters.n_a + 1, counters.n_a1 + accepted,
                            counters.n_b, counters.n_b1)
        return Counters(counters.n_a, counters.n_a1,
                        counters.n_b + 1, counters.n_b1 + accepted)
    if kind == EQOPP:
        if counters.stage is None:
            raise ValidationError("eqopp counters need a stage index")
        if ground_truth is None:
            raise ValidationError("eqopp update requires a ground-truth label")
        _check_decision(ground_truth, "ground_truth")
        stage = counters.stage + 1
        if ground_truth == 0:
            return Counters(counters.n_a, counters.n_a1,
                            counters.n_b, counters.n_b1, stage=stage)
        if event.group == Group.A:
            return Counters(counters.n_a + 1, counters.n_a1 + accepted,
                            counters.n_b, counters.n_b1, stage=stage)
        return Counters(counters.n_a, counters.n_a1,
                        counters.n_b + 1, counters.n_b1 + accepted, stage=stage)
    raise ValidationError(f"unknown fairness kind {kind!r}")


def trace_counters(kind: str, trace: Trace) -> Counters:
    """Fold :func:`update_counters` over a trace."""
    counters = zero_counters(kind)
    for step in trace:
        counters = update_counters(kind, counters, step.input, step.final,
                                   step.ground_truth)
    return counters


def trace_cost(trace: Trace, upto: Optional[int] = None) -> float:
    """Total intervention cost: sum of costs at steps where final != recommendation."""
    if upto is None:
        upto = len(trace)
    if upto > len(trace):
        raise ValidationError(f"upto={upto} exceeds trace length {len(trace)}")
    return sum(
        step.input.cost
        for step in trace[:upto]
        if step.final != step.input.recommendation
    )

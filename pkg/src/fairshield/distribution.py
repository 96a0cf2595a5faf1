"""Input distributions over (group, recommendation, cost).

Four closed-form approximations of the joint distribution, ordered by how
much is known about the classifier:

============== ==================================================
``constant``   uniform recommendation, unit cost: θ(g,r,1) = p_g/2
``constant_k`` uniform recommendation and cost:   θ(g,r,c) = p_g/(2|C|)
``hybrid``     known acceptance rates, unit cost: θ(g,r,1) = p_g·p_gr
``hybrid_k``   known acceptance rates, uniform cost:
               θ(g,r,c) = p_g·p_gr/|C|
============== ==================================================

plus :func:`paired_estimate`, a data-driven histogram estimator built from
classifier scores: the cost of flipping a decision is the score's distance
from the 0.5 threshold, binned over [0, 0.5].

Entries keep a fixed order (group a then b, reject then accept, costs in
declared order); simulation samples by inverse CDF over that order, so the
entry order is part of the distribution's identity (and of its digest).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from . import canonical
from .core import Group, InputEvent
from .errors import ValidationError

BUILDER_KINDS = ("constant", "constant_k", "hybrid", "hybrid_k")

#: Probabilities below this are treated as exact zeros (pruned branches).
PROB_EPS = 1e-15

#: Per-dataset group-a shares from published summary statistics, used by
#: the CLI's ``"preset"`` shorthand for constant distributions.
PRESETS = {
    "adult-race": 0.098,
    "adult-gender": 0.325,
    "bank-age": 0.0259,
    "compas-gender": 0.1904,
    "compas-race": 0.6593,
    "german-gender": 0.31,
    "german-age": 0.19,
}


@dataclass(frozen=True)
class ThetaEntry:
    group: Group
    recommendation: int
    cost_index: int
    probability: float


@dataclass(frozen=True)
class InputDistribution:
    """Joint probability over (group, recommendation, cost index).

    ``ground_truth`` optionally maps (group, recommendation) to
    P(z=1 | g, r); it is required for equal-opportunity synthesis and for
    utility accounting in simulation.
    """

    cost_set: tuple[float, ...]
    entries: tuple[ThetaEntry, ...]
    ground_truth: Optional[Mapping[tuple[Group, int], float]] = None

    # -- lookups ---------------------------------------------------------

    def probability(self, group: Group, recommendation: int, cost_index: int) -> float:
        for e in self.entries:
            if (e.group, e.recommendation, e.cost_index) == (group, recommendation, cost_index):
                return e.probability
        return 0.0

    def entry_index(self, group: Group, recommendation: int, cost: float) -> int:
        """Index of the entry matching the event (costs compared exactly)."""
        for i, e in enumerate(self.entries):
            if (e.group == group and e.recommendation == recommendation
                    and self.cost_set[e.cost_index] == cost):
                return i
        raise KeyError(f"(g={group}, r={recommendation}, c={cost}) not among entries")

    def event(self, index: int) -> InputEvent:
        e = self.entries[index]
        return InputEvent(e.group, e.recommendation, self.cost_set[e.cost_index])

    def p_z1(self, group: Group, recommendation: int) -> float:
        if self.ground_truth is None:
            raise ValidationError("distribution has no ground-truth model")
        try:
            return self.ground_truth[(group, recommendation)]
        except KeyError:
            raise ValidationError(
                f"ground-truth model missing cell (g={group}, r={recommendation})"
            ) from None

    def group_marginal(self, group: Group) -> float:
        return sum(e.probability for e in self.entries if e.group == group)

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        doc = {
            "groups": ["a", "b"],
            "cost_set": list(self.cost_set),
            "entries": [
                {"g": e.group.value, "r": e.recommendation,
                 "c_index": e.cost_index, "p": e.probability}
                for e in self.entries
            ],
        }
        if self.ground_truth is not None:
            doc["ground_truth"] = [
                {"g": g.value, "r": r, "p_z1": p}
                for (g, r), p in sorted(self.ground_truth.items())
            ]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "InputDistribution":
        try:
            cost_set = tuple(float(c) for c in doc["cost_set"])
            entries = tuple(
                ThetaEntry(Group(e["g"]), int(e["r"]), int(e["c_index"]), float(e["p"]))
                for e in doc["entries"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed distribution document: {exc}") from exc
        ground_truth = None
        if "ground_truth" in doc and doc["ground_truth"] is not None:
            ground_truth = {
                (Group(gt["g"]), int(gt["r"])): float(gt["p_z1"])
                for gt in doc["ground_truth"]
            }
        return cls(cost_set=cost_set, entries=entries, ground_truth=ground_truth)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; embedded in shield files."""
        return canonical.digest(self.to_dict())


@dataclass(frozen=True)
class ScoredDataset:
    """Classifier scores per labelled group; optional ground-truth labels.

    ``rows`` holds (group, score) or (group, score, label) tuples with
    scores in [0, 1].  Labels must be present on all rows or none.
    """

    rows: tuple[tuple, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.rows:
            raise ValidationError("scored dataset is empty")
        labelled = [len(r) == 3 for r in self.rows]
        if any(labelled) and not all(labelled):
            raise ValidationError("labels must be present on all rows or none")
        for r in self.rows:
            if not 0.0 <= r[1] <= 1.0:
                raise ValidationError(f"score {r[1]} outside [0, 1]")

    @property
    def has_labels(self) -> bool:
        return len(self.rows[0]) == 3


def load_scored_csv(path: str) -> ScoredDataset:
    """Read a scored dataset from CSV with header ``group,score[,label]``."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["group", "score"]:
            raise ValidationError(f"{path}: expected header 'group,score[,label]'")
        with_label = len(header) >= 3 and header[2].strip() == "label"
        for line in reader:
            if not line:
                continue
            group = Group(line[0].strip())
            score = float(line[1])
            if with_label:
                rows.append((group, score, int(line[2])))
            else:
                rows.append((group, score))
    return ScoredDataset(tuple(rows))


def _check_probability(value: float, name: str, *, open_interval: bool = False):
    if open_interval:
        if not 0.0 < value < 1.0:
            raise ValidationError(f"{name} must be in (0, 1), got {value}")
    elif not 0.0 <= value <= 1.0:
        raise ValidationError(f"{name} must be in [0, 1], got {value}")


def build_theta(
    kind: str,
    p_a: float,
    acceptance: Optional[Mapping[Group, float]] = None,
    cost_set: Optional[Sequence[float]] = None,
    ground_truth: Optional[Mapping[tuple[Group, int], float]] = None,
) -> InputDistribution:
    """Construct one of the four closed-form approximations.

    ``acceptance`` maps each group to P(r=1 | g) and is required for the
    hybrid kinds.  ``cost_set`` is required for the ``_k`` kinds; the
    others fix C = {1}.  An optional ground-truth model is attached as is.
    """
    if kind not in BUILDER_KINDS:
        raise ValidationError(f"unknown builder kind {kind!r}")
    _check_probability(p_a, "p_a", open_interval=True)
    p_group = {Group.A: p_a, Group.B: 1.0 - p_a}

    if kind in ("constant", "hybrid"):
        if cost_set is not None and tuple(cost_set) != (1.0,):
            raise ValidationError(f"{kind} fixes the cost set to  {{1}}")
        costs: tuple[float, ...] = (1.0,)
    else:
        if not cost_set:
            raise ValidationError(f"{kind} requires a non-empty cost set")
        costs = tuple(float(c) for c in cost_set)
        if any(c < 0 for c in costs):
            raise ValidationError("costs must be non-negative")
        if len(set(costs)) != len(costs):
            raise ValidationError("cost set has duplicate values")

    if kind in ("hybrid", "hybrid_k"):
        if acceptance is None or set(acceptance) != {Group.A, Group.B}:
            raise ValidationError(f"{kind} requires acceptance rates for both groups")
        for g in (Group.A, Group.B):
            _check_probability(acceptance[g], f"acceptance[{g}]")
        p_rec = {
            (g, r): (acceptance[g] if r == 1 else 1.0 - acceptance[g])
            for g in (Group.A, Group.B) for r in (0, 1)
        }
    else:
        p_rec = {(g, r): 0.5 for g in (Group.A, Group.B) for r in (0, 1)}

    entries = tuple(
        ThetaEntry(g, r, ci, p_group[g] * p_rec[(g, r)] / len(costs))
        for g in (Group.A, Group.B)
        for r in (0, 1)
        for ci in range(len(costs))
    )
    theta = InputDistribution(cost_set=costs, entries=entries, ground_truth=ground_truth)
    problems = validate(theta)
    if problems:
        raise ValidationError("; ".join(problems))
    return theta


def paired_estimate(data: ScoredDataset, p_a: float, bins: int) -> InputDistribution:
    """Histogram estimator from classifier scores.

    The cost set is the midpoints of *bins* uniform bins over [0, 0.5].
    A row's recommendation is ``score > 0.5`` and its cost is the distance
    ``|score - 0.5|``; a distance exactly on an interior bin edge belongs
    to the lower bin.  The joint probability of (g, r, bin i) is
    ``p_g * N_gri / N_g``, i.e. the group weight times the within-group
    empirical frequency of the (recommendation, bin) cell, which makes
    the result a proper joint distribution.
    """
    if bins < 1:
        raise ValidationError(f"bins must be >= 1, got {bins}")
    _check_probability(p_a, "p_a", open_interval=True)

    edges = [0.5 * i / bins for i in range(bins + 1)]
    midpoints = tuple((edges[i] + edges[i - 1]) / 2.0 for i in range(1, bins + 1))

    def bin_of(distance: float) -> int:
        # smallest i >= 1 with distance <= edges[i]; edge ties go low
        for i in range(1, bins + 1):
            if distance <= edges[i]:
                return i - 1
        return bins - 1

    n_group = {Group.A: 0, Group.B: 0}
    n_cell: dict[tuple[Group, int, int], int] = {}
    n_rec: dict[tuple[Group, int], int] = {}
    pos: dict[tuple[Group, int], int] = {}
    for row in data.rows:
        g, score = row[0], row[1]
        r = 1 if score > 0.5 else 0
        ci = bin_of(abs(score - 0.5))
        n_group[g] += 1
        n_cell[(g, r, ci)] = n_cell.get((g, r, ci), 0) + 1
        n_rec[(g, r)] = n_rec.get((g, r), 0) + 1
        if data.has_labels:
            pos[(g, r)] = pos.get((g, r), 0) + row[2]
    for g in (Group.A, Group.B):
        if n_group[g] == 0:
            raise ValidationError(f"scored dataset has no rows for group {g}")

    p_group = {Group.A: p_a, Group.B: 1.0 - p_a}
    entries = tuple(
        ThetaEntry(g, r, ci,
                   p_group[g] * n_cell.get((g, r, ci), 0) / n_group[g])
        for g in (Group.A, Group.B)
        for r in (0, 1)
        for ci in range(bins)
    )

    ground_truth = None
    if data.has_labels:
        # empty (g, r) cells carry zero probability; rate pinned to 0
        ground_truth = {
            (g, r): (pos.get((g, r), 0) / n_rec[(g, r)] if (g, r) in n_rec else 0.0)
            for g in (Group.A, Group.B) for r in (0, 1)
        }

    theta = InputDistribution(cost_set=midpoints, entries=entries,
                              ground_truth=ground_truth)
    problems = validate(theta)
    if problems:
        raise ValidationError("; ".join(problems))
    return theta


def validate(theta: InputDistribution) -> list[str]:
    """Diagnostics for a distribution; empty list means it is well formed."""
    problems = []
    if not theta.entries:
        problems.append("entries: distribution has no entries")
        return problems
    if any(c < 0 for c in theta.cost_set):
        problems.append("cost-set: negative cost value")
    if len(set(theta.cost_set)) != len(theta.cost_set):
        problems.append("cost-set: duplicate cost values")
    seen = set()
    for e in theta.entries:
        if not 0.0 <= e.probability <= 1.0:
            problems.append(
                f"range: entry (g={e.group}, r={e.recommendation}, "
                f"c_index={e.cost_index}) has probability {e.probability}"
            )
        if not 0 <= e.cost_index < len(theta.cost_set):
            problems.append(f"cost-set: entry cost_index {e.cost_index} out of range")
        key = (e.group, e.recommendation, e.cost_index)
        if key in seen:
            problems.append(f"entries: duplicate entry for {key}")
        seen.add(key)
    total = sum(Fraction(e.probability) for e in theta.entries
                if 0.0 <= e.probability <= 1.0)
    if abs(float(total) - 1.0) > 1e-9:
        problems.append(f"normalization: probabilities sum to {float(total):.12g}")
    if theta.ground_truth is not None:
        for (g, r), p in theta.ground_truth.items():
            if not 0.0 <= p <= 1.0:
                problems.append(f"ground-truth: P(z=1 | g={g}, r={r}) = {p}")
    return problems

"""Seeded Monte Carlo simulation of shielded decision runs.

Reproducibility contract: the random stream of run ``i`` comes from a
Philox4x64 counter-based bit generator keyed with the two 64-bit words
``(seed, i)``; within a run, step ``s`` consumes one uniform variate for
the input draw and, when a ground-truth model is configured, a second one
for the label draw.  Inputs are sampled by inverse CDF over the fixed
entry order of the distribution, so zero-probability entries are never
drawn.  The stream depends only on (seed, run index, step) and the
distribution, never on the shield, so a shielded run and its unshielded
baseline see the identical input/label sequence (common random numbers).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import (DP, EQOPP, FairnessSpec, StepRecord, bias)
from .distribution import InputDistribution, validate
from .errors import ValidationError
from .periodic import (BoundaryReport, PassThroughShield, PeriodicShield,
                       StaticFairShield)
from .synthesis import ShieldTable

ShieldSource = Union[None, ShieldTable, Callable[[], PeriodicShield]]


@dataclass(frozen=True)
class SimConfig:
    """Run layout: ``runs`` independent runs of ``periods`` x ``horizon`` steps."""

    seed: int
    runs: int
    horizon: int
    periods: int = 1

    def __post_init__(self):
        if self.runs < 1:
            raise ValidationError(f"runs must be >= 1, got {self.runs}")
        if self.horizon < 1:
            raise ValidationError(f"horizon must be >= 1, got {self.horizon}")
        if self.periods < 1:
            raise ValidationError(f"periods must be >= 1, got {self.periods}")


@dataclass
class RunMetrics:
    run_index: int
    kappa: Optional[float]
    boundary_biases: list = field(default_factory=list)
    cumulative_biases: list = field(default_factory=list)
    total_cost: float = 0.0
    interventions: int = 0
    utility: Optional[float] = None
    utility_loss: Optional[float] = None
    reports: list = field(default_factory=list)

    def to_dict(self) -> dict:
        doc = {
            "run": self.run_index,
            "boundary_biases": list(self.boundary_biases),
            "cumulative_biases": list(self.cumulative_biases),
            "total_cost": self.total_cost,
            "interventions": self.interventions,
        }
        if self.kappa is not None:
            doc["kappa"] = self.kappa
        if self.utility is not None:
            doc["utility"] = self.utility
        if self.utility_loss is not None:
            doc["utility_loss"] = self.utility_loss
        flags = []
        for r in self.reports:
            flags.append({
                "period": r.period,
                "balanced": r.balanced,
                "equal_denominators": r.equal_denominators,
                "assumption": r.assumption,
                "fallback": r.fallback,
            })
        doc["period_flags"] = flags
        return doc


@dataclass
class RunResult:
    trace: list
    metrics: RunMetrics


def _stream(seed: int, run_index: int) -> np.random.Generator:
    key = np.array([seed, run_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _make_runner(shield: ShieldSource, config: SimConfig,
                 spec: Optional[FairnessSpec]) -> PeriodicShield:
    if shield is None:
        runner_spec = spec or FairnessSpec(DP, 1.0, config.horizon)
        return PassThroughShield(runner_spec)
    if isinstance(shield, ShieldTable):
        return StaticFairShield(shield)
    if callable(shield):
        runner = shield()
        if not isinstance(runner, PeriodicShield):
            raise ValidationError("shield factory must return a PeriodicShield")
        return runner
    raise ValidationError(
        "shield must be None, a ShieldTable, or a factory returning a "
        "fresh PeriodicShield per run"
    )


def _check_compatible(runner: PeriodicShield, theta: InputDistribution,
                      config: SimConfig) -> None:
    if runner.spec.horizon != config.horizon:
        raise ValidationError(
            f"shield horizon {runner.spec.horizon} != config horizon {config.horizon}"
        )
    digest = theta.digest()
    table = getattr(runner, "table", None)
    if table is not None and table.theta_digest != digest:
        raise ValidationError(
            f"shield was synthesized for distribution {table.theta_digest[:12]}..., "
            f"simulation uses {digest[:12]}..."
        )
    own_theta = getattr(runner, "theta", None)
    if own_theta is not None and own_theta.digest() != digest:
        raise ValidationError("dynamic shield distribution differs from simulation distribution")
    if runner.spec.kind == EQOPP and theta.ground_truth is None:
        raise ValidationError("eqopp simulation needs a ground-truth model in theta")


def run(
    theta: InputDistribution,
    shield: ShieldSource,
    config: SimConfig,
    *,
    spec: Optional[FairnessSpec] = None,
    paired_baseline: bool = False,
    keep_traces: bool = True,
) -> list[RunResult]:
    """Simulate ``config.runs`` seeded runs under the given shield source.

    ``shield`` may be ``None`` (pass-through), a bounded-horizon table
    (replayed each period), or a factory producing a fresh periodic
    driver per run.  With ``paired_baseline`` each run is re-simulated
    unshielded on the same stream and ``utility_loss`` is filled in
    (requires a ground-truth model).
    """
    problems = validate(theta)
    if problems:
        raise ValidationError("; ".join(problems))
    has_labels = theta.ground_truth is not None
    if paired_baseline and not has_labels:
        raise ValidationError("paired baseline needs a ground-truth model for utility")

    cdf = np.cumsum([e.probability for e in theta.entries])
    probe = _make_runner(shield, config, spec)
    _check_compatible(probe, theta, config)

    def one(run_index: int) -> RunResult:
        runner = probe if run_index == 0 else _make_runner(shield, config, spec)
        result = _simulate_one(theta, cdf, runner, config, run_index,
                               has_labels, keep_traces,
                               report_kappa=spec.kappa if spec else None)
        if paired_baseline:
            baseline = _simulate_one(
                theta, cdf, PassThroughShield(runner.spec), config, run_index,
                has_labels, keep_traces=False, report_kappa=None)
            result.metrics.utility_loss = (baseline.metrics.utility
                                           - result.metrics.utility)
        return result

    workers = _max_workers(config.runs)
    if workers <= 1:
        return [one(i) for i in range(config.runs)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(config.runs)))


def _max_workers(runs: int) -> int:
    """Parallelism cap from FAIRSHIELD_THREADS (default 1: sequential)."""
    raw = os.environ.get("FAIRSHIELD_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise ValidationError(f"FAIRSHIELD_THREADS must be an integer, got {raw!r}")
    return max(1, min(cap, runs))


def _simulate_one(theta, cdf, runner, config, run_index, has_labels,
                  keep_traces, report_kappa=None) -> RunResult:
    rng = _stream(config.seed, run_index)
    kappa = report_kappa
    if kappa is None and not isinstance(runner, PassThroughShield):
        kappa = runner.spec.kappa
    metrics = RunMetrics(run_index=run_index, kappa=kappa)
    trace = []
    agreements = 0
    steps = 0
    for _ in range(config.periods):
        for _ in range(config.horizon):
            u = rng.random()
            idx = int(np.searchsorted(cdf, u, side="right"))
            idx = min(idx, len(theta.entries) - 1)
            event = theta.event(idx)
            z = None
            if has_labels:
                z = int(rng.random() < theta.p_z1(event.group, event.recommendation))
            final = runner.step(event, z)
            steps += 1
            if z is not None and final == z:
                agreements += 1
            if keep_traces:
                trace.append(StepRecord(event, final, z))
        report = runner.period_boundary()
        metrics.reports.append(report)
        metrics.boundary_biases.append(report.period_bias)
        metrics.cumulative_biases.append(report.cumulative_bias)
    metrics.total_cost = runner.cumulative_cost
    metrics.interventions = sum(r.period_interventions for r in metrics.reports)
    if has_labels:
        metrics.utility = agreements / steps
    return RunResult(trace=trace, metrics=metrics)


def _quartiles(xs: Sequence[float]) -> dict:
    arr = np.asarray(xs, dtype=float)
    return {
        "mean": float(arr.mean()),
        "median": float(np.median(arr)),
        "q25": float(np.percentile(arr, 25)),
        "q75": float(np.percentile(arr, 75)),
    }


def aggregate(metrics: Sequence[RunMetrics], kappa: Optional[float] = None) -> dict:
    """Cross-run summary: violation rate, cost/utility-loss statistics,
    and per-flag assumption satisfaction rates."""
    if not metrics:
        raise ValidationError("aggregate needs at least one run")
    if kappa is None:
        kappa = metrics[0].kappa
    doc: dict = {"runs": len(metrics)}
    if kappa is not None:
        violations = sum(
            1 for m in metrics if any(b > kappa for b in m.boundary_biases)
        )
        doc["kappa"] = kappa
        doc["violation_rate"] = violations / len(metrics)
        cumulative_violations = sum(
            1 for m in metrics if any(b > kappa for b in m.cumulative_biases)
        )
        doc["cumulative_violation_rate"] = cumulative_violations / len(metrics)
    doc["cost"] = _quartiles([m.total_cost for m in metrics])
    losses = [m.utility_loss for m in metrics if m.utility_loss is not None]
    if losses:
        doc["utility_loss"] = _quartiles(losses)
    utilities = [m.utility for m in metrics if m.utility is not None]
    if utilities:
        doc["utility"] = _quartiles(utilities)
    for flag in ("balanced", "equal_denominators", "assumption"):
        values = [
            getattr(r, flag)
            for m in metrics for r in m.reports
            if getattr(r, flag) is not None
        ]
        if values:
            doc[f"{flag}_rate"] = sum(values) / len(values)
    return doc

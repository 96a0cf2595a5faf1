"""Cost-optimal fairness shields.

A fairness shield watches a black-box classifier's per-individual
recommendations and may override them, paying a per-intervention cost, so
that an empirical group-fairness property (demographic parity or equal
opportunity) provably holds at a horizon or at every period boundary.
Synthesis is backward induction over the reachable counter lattice; an
exhaustive trace-level oracle, counterexample constructions, and a seeded
simulator validate the engine.
"""

from .core import (ACCEPT, DP, EQOPP, REJECT, Counters, FairnessSpec, Group,
                   InputEvent, StepRecord, bias, disparate_impact,
                   trace_cost, trace_counters, update_counters, welfare,
                   zero_counters)
from .distribution import (InputDistribution, PRESETS, ScoredDataset,
                           ThetaEntry, build_theta, load_scored_csv,
                           paired_estimate, validate)
from .errors import (SequencingError, ShieldLookupError, SizeGuardError,
                     ValidationError)
from .oracle import (CounterexamplePair, ExactResult, TightnessPair,
                     balanced_probability, counterexample_family,
                     counterexample_static_fair, exact_enumerate,
                     feasible_sequence, mediant_check, sdp_expectation,
                     tightness_family)
from .periodic import (BoundaryReport, DynamicShield, PassThroughShield,
                       PeriodicShield, StaticBWShield, StaticFairShield,
                       WelfareBounds, check_balanced,
                       check_dynamic_assumption, min_balance,
                       period_boundary, periodic_step, synthesize_static_bw)
from .sim import RunMetrics, RunResult, SimConfig, aggregate, run
from .synthesis import (BoundedWelfareTerminal, BufferedTerminal, FairTerminal,
                        ShieldTable, decide, lattice_size, reachable_lattice,
                        stage_state_count, state_rank, synthesize)

__version__ = "0.1.0"

__all__ = [
    "ACCEPT", "DP", "EQOPP", "REJECT",
    "BoundaryReport", "BoundedWelfareTerminal", "BufferedTerminal",
    "Counters", "CounterexamplePair", "DynamicShield", "ExactResult",
    "FairTerminal", "FairnessSpec", "Group", "InputDistribution",
    "InputEvent", "PRESETS", "PassThroughShield", "PeriodicShield",
    "RunMetrics", "RunResult", "ScoredDataset", "SequencingError",
    "ShieldLookupError", "ShieldTable", "SimConfig", "SizeGuardError",
    "StaticBWShield", "StaticFairShield", "StepRecord", "ThetaEntry",
    "TightnessPair", "ValidationError", "WelfareBounds",
    "aggregate", "balanced_probability", "bias", "build_theta",
    "check_balanced", "check_dynamic_assumption", "counterexample_family",
    "counterexample_static_fair", "decide", "disparate_impact",
    "exact_enumerate", "feasible_sequence", "lattice_size",
    "load_scored_csv", "mediant_check", "min_balance", "paired_estimate",
    "period_boundary", "periodic_step", "reachable_lattice", "run",
    "sdp_expectation", "stage_state_count", "state_rank", "synthesize",
    "synthesize_static_bw", "tightness_family", "trace_cost",
    "trace_counters", "update_counters", "validate", "welfare",
    "zero_counters",
]

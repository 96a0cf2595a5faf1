"""Command-line surface: ``fairshield synth | sim | oracle``.

File formats
------------

Distribution file (JSON): either an explicit document

    {"groups": ["a", "b"], "cost_set": [...],
     "entries": [{"g": "a", "r": 1, "c_index": 0, "p": 0.25}, ...],
     "ground_truth": [{"g": "a", "r": 1, "p_z1": 0.8}, ...]}        # optional

or a preset reference ``{"preset": "adult-gender"}`` (group-a share from
the published dataset summary table; optional ``kind``, ``cost_set``,
``acceptance`` and ``ground_truth`` keys refine the expansion).

Shield file: canonical JSON (sorted keys, floats with 17 significant
digits) listing every (stage, counters, input) decision in table order,
or the compact binary companion (magic ``FSH1``, little-endian header,
then per stage a u64 state count and the packed u8 decision matrix in
lattice order; see ``save_shield``).  The distribution digest is embedded
and checked at load time, so a shield can never silently run against a
different distribution than it was synthesized for.

Trace CSVs have columns ``step,g,r,c,y,z,cost`` where ``c`` is the offered
intervention cost and ``cost`` the incurred one.

Exit codes: 0 success, 2 infeasible synthesis, 3 validation error
(including bad usage), 4 I/O error.  ``sim`` requires ``--seed``; the
environment variable ``FAIRSHIELD_THREADS`` caps run-level parallelism.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import resource
import struct
import sys
import time
from typing import Optional

import numpy as np

from .canonical import atomic_write_bytes, atomic_write_text, canonical_dumps
from .core import Counters, FairnessSpec, Group
from .distribution import PRESETS, InputDistribution, build_theta, validate
from .errors import (SequencingError, ShieldLookupError, SizeGuardError,
                     ValidationError)
from .oracle import (balanced_probability, counterexample_family,
                     counterexample_static_fair, exact_enumerate,
                     mediant_check, sdp_expectation, tightness_family)
from .periodic import (DynamicShield, StaticBWShield, StaticFairShield,
                       WelfareBounds)
from .sim import SimConfig, aggregate, run
from .synthesis import (BoundedWelfareTerminal, BufferedTerminal, FairTerminal,
                        ShieldTable, lattice_size, reachable_lattice,
                        state_rank, stage_state_count, synthesize)

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4

SHIELD_MAGIC = b"FSH1"
_TERMINAL_CODES = {"fair": 0, "bounded-welfare": 1, "buffered": 2}


# ---------------------------------------------------------------------------
# distribution files
# ---------------------------------------------------------------------------

def load_theta(path: str) -> InputDistribution:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON: {exc}") from exc
    if "preset" in doc:
        name = doc["preset"]
        if name not in PRESETS:
            raise ValidationError(
                f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
        acceptance = None
        if "acceptance" in doc:
            acceptance = {Group(g): float(p) for g, p in doc["acceptance"].items()}
        ground_truth = None
        if "ground_truth" in doc:
            ground_truth = {
                (Group(gt["g"]), int(gt["r"])): float(gt["p_z1"])
                for gt in doc["ground_truth"]
            }
        theta = build_theta(
            doc.get("kind", "constant"),
            PRESETS[name],
            acceptance=acceptance,
            cost_set=doc.get("cost_set"),
            ground_truth=ground_truth,
        )
    else:
        theta = InputDistribution.from_dict(doc)
    problems = validate(theta)
    if problems:
        raise ValidationError(f"{path}: " + "; ".join(problems))
    return theta


def save_theta(theta: InputDistribution, path: str) -> None:
    atomic_write_text(path, canonical_dumps(theta.to_dict()) + "\n")


# ---------------------------------------------------------------------------
# shield files
# ---------------------------------------------------------------------------

def _terminal_to_dict(terminal) -> dict:
    if isinstance(terminal, FairTerminal):
        return {"kind": "fair", "kappa": terminal.kappa}
    if isinstance(terminal, BoundedWelfareTerminal):
        return {"kind": "bounded-welfare", "lower": terminal.lower,
                "upper": terminal.upper, "min_count": terminal.min_count}
    if isinstance(terminal, BufferedTerminal):
        base = terminal.base
        return {"kind": "buffered", "kappa": terminal.kappa,
                "base": [base.n_a, base.n_a1, base.n_b, base.n_b1],
                "base_stage": base.stage}
    raise ValidationError(f"unknown terminal rule {terminal!r}")


def _terminal_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "fair":
        return FairTerminal(float(doc["kappa"]))
    if kind == "bounded-welfare":
        return BoundedWelfareTerminal(float(doc["lower"]), float(doc["upper"]),
                                      int(doc["min_count"]))
    if kind == "buffered":
        base = doc["base"]
        return BufferedTerminal(
            Counters(base[0], base[1], base[2], base[3],
                     stage=doc.get("base_stage")),
            float(doc["kappa"]))
    raise ValidationError(f"unknown terminal kind {kind!r}")


def save_shield(table: ShieldTable, path: str, fmt: str = "json") -> None:
    """Write a shield table; ``fmt`` is ``json`` or ``binary``.

    The JSON decision list and the binary per-stage blocks both follow
    table order: states ranked by :func:`fairshield.synthesis.state_rank`,
    inputs in the distribution's entry order.
    """
    if not table.feasible:
        raise ValidationError("refusing to save an infeasible shield table")
    if fmt == "json":
        _save_shield_json(table, path)
    elif fmt == "binary":
        atomic_write_bytes(path, _shield_to_bytes(table))
    else:
        raise ValidationError(f"unknown shield format {fmt!r}")


def _shield_envelope(table: ShieldTable) -> dict:
    return {
        "format_version": 1,
        "property": table.spec.kind,
        "kappa": table.spec.kappa,
        "T": table.spec.horizon,
        "terminal": _terminal_to_dict(table.terminal),
        "theta_digest": table.theta_digest,
        "root_value": table.root_value,
        "decisions": [],
    }


def _save_shield_json(table: ShieldTable, path: str) -> None:
    spec = table.spec
    head = canonical_dumps(_shield_envelope(table))
    marker = '"decisions":[]'
    cut = head.index(marker) + len(marker) - 1
    buf = io.StringIO()
    buf.write(head[:cut])
    first = True
    if spec.horizon >= 1:
        for stage, counters in reachable_lattice(spec.kind, spec.horizon - 1):
            row = table.decisions[stage][state_rank(spec.kind, stage, counters)]
            for col, entry in enumerate(table.theta.entries):
                record = {
                    "stage": stage,
                    "counters": list(counters.astuple()),
                    "g": entry.group.value,
                    "r": entry.recommendation,
                    "c_index": entry.cost_index,
                    "y": int(row[col]),
                }
                buf.write("" if first else ",")
                buf.write(canonical_dumps(record))
                first = False
    buf.write(head[cut:])
    buf.write("\n")
    atomic_write_text(path, buf.getvalue())


def _shield_to_bytes(table: ShieldTable) -> bytes:
    spec = table.spec
    out = bytearray()
    out += SHIELD_MAGIC
    out += struct.pack("<IB", 1, 0 if spec.kind == "dp" else 1)
    out += struct.pack("<dI", spec.kappa, spec.horizon)
    term = table.terminal
    if isinstance(term, FairTerminal):
        out += struct.pack("<Bd", _TERMINAL_CODES["fair"], term.kappa)
    elif isinstance(term, BoundedWelfareTerminal):
        out += struct.pack("<BddI", _TERMINAL_CODES["bounded-welfare"],
                           term.lower, term.upper, term.min_count)
    else:
        b = term.base
        out += struct.pack("<Bd5q", _TERMINAL_CODES["buffered"], term.kappa,
                           b.n_a, b.n_a1, b.n_b, b.n_b1,
                           -1 if b.stage is None else b.stage)
    digest = table.theta_digest.encode("ascii")
    out += struct.pack("<I", len(digest)) + digest
    out += struct.pack("<dII", table.root_value, len(table.theta.entries),
                       spec.horizon)
    for dec in table.decisions:
        out += struct.pack("<Q", dec.shape[0])
        out += dec.tobytes()
    return bytes(out)


def load_shield(path: str, theta: InputDistribution) -> ShieldTable:
    """Load a shield file (JSON or binary) against its distribution.

    The embedded digest must match ``theta``; loading then deciding
    reproduces the synthesized decisions bit-exactly.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] == SHIELD_MAGIC:
        return _shield_from_bytes(blob, theta, path)
    try:
        doc = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: neither FSH1 binary nor JSON: {exc}") from exc
    return _shield_from_dict(doc, theta, path)


def _check_digest(digest: str, theta: InputDistribution, path: str) -> None:
    actual = theta.digest()
    if digest != actual:
        raise ValidationError(
            f"{path}: shield was synthesized for distribution {digest[:12]}..., "
            f"but the given distribution has digest {actual[:12]}..."
        )


def _shield_from_dict(doc: dict, theta: InputDistribution, path: str) -> ShieldTable:
    try:
        kind = doc["property"]
        spec = FairnessSpec(kind, float(doc["kappa"]), int(doc["T"]))
        terminal = _terminal_from_dict(doc["terminal"])
        digest = doc["theta_digest"]
        root_value = float(doc["root_value"])
        records = doc["decisions"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed shield file: {exc}") from exc
    _check_digest(digest, theta, path)
    columns = {
        (e.group, e.recommendation, e.cost_index): i
        for i, e in enumerate(theta.entries)
    }
    decisions = [
        np.full((stage_state_count(kind, t), len(theta.entries)), 255, np.uint8)
        for t in range(spec.horizon)
    ]
    for rec in records:
        stage = int(rec["stage"])
        c = rec["counters"]
        counters = Counters(c[0], c[1], c[2], c[3],
                            stage=stage if kind == "eqopp" else None)
        row = state_rank(kind, stage, counters)
        key = (Group(rec["g"]), int(rec["r"]), int(rec["c_index"]))
        if key not in columns:
            raise ValidationError(f"{path}: decision for unknown input {key}")
        decisions[stage][row, columns[key]] = int(rec["y"])
    for t, dec in enumerate(decisions):
        if (dec == 255).any():
            raise ValidationError(f"{path}: decision list incomplete at stage {t}")
    return ShieldTable(spec=spec, terminal=terminal, theta=theta,
                       theta_digest=digest, root_value=root_value,
                       decisions=decisions)


def _shield_from_bytes(blob: bytes, theta: InputDistribution,
                       path: str) -> ShieldTable:
    off = 4
    try:
        version, prop = struct.unpack_from("<IB", blob, off)
        off += 5
        if version != 1:
            raise ValidationError(f"{path}: unsupported shield format version {version}")
        kappa, horizon = struct.unpack_from("<dI", blob, off)
        off += 12
        kind = "dp" if prop == 0 else "eqopp"
        (term_code,) = struct.unpack_from("<B", blob, off)
        off += 1
        if term_code == _TERMINAL_CODES["fair"]:
            (tk,) = struct.unpack_from("<d", blob, off)
            off += 8
            terminal = FairTerminal(tk)
        elif term_code == _TERMINAL_CODES["bounded-welfare"]:
            lo, up, n = struct.unpack_from("<ddI", blob, off)
            off += 20
            terminal = BoundedWelfareTerminal(lo, up, n)
        elif term_code == _TERMINAL_CODES["buffered"]:
            tk, na, na1, nb, nb1, stage = struct.unpack_from("<d5q", blob, off)
            off += 48
            terminal = BufferedTerminal(
                Counters(na, na1, nb, nb1, stage=None if stage < 0 else stage), tk)
        else:
            raise ValidationError(f"{path}: unknown terminal code {term_code}")
        (digest_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        digest = blob[off:off + digest_len].decode("ascii")
        off += digest_len
        root_value, n_inputs, n_stages = struct.unpack_from("<dII", blob, off)
        off += 16
    except struct.error as exc:
        raise ValidationError(f"{path}: truncated shield file: {exc}") from exc
    _check_digest(digest, theta, path)
    if n_inputs != len(theta.entries):
        raise ValidationError(
            f"{path}: shield has {n_inputs} inputs, distribution has "
            f"{len(theta.entries)}")
    decisions = []
    for t in range(n_stages):
        (n_states,) = struct.unpack_from("<Q", blob, off)
        off += 8
        if n_states != stage_state_count(kind, t):
            raise ValidationError(f"{path}: stage {t} has {n_states} states, "
                                  f"expected {stage_state_count(kind, t)}")
        size = n_states * n_inputs
        dec = np.frombuffer(blob, dtype=np.uint8, count=size, offset=off)
        off += size
        decisions.append(dec.reshape(n_states, n_inputs).copy())
    spec = FairnessSpec(kind, kappa, horizon)
    return ShieldTable(spec=spec, terminal=terminal, theta=theta,
                       theta_digest=digest, root_value=root_value,
                       decisions=decisions)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    theta = load_theta(args.theta)
    if args.terminal == "bw":
        if args.l is None or args.u is None:
            raise ValidationError("--terminal bw requires --l and --u")
        bounds = WelfareBounds(args.l, args.u)
        from .periodic import min_balance
        terminal = BoundedWelfareTerminal(bounds.lower, bounds.upper,
                                          min_balance(bounds))
        kappa = bounds.upper - bounds.lower
    else:
        if args.kappa is None:
            raise ValidationError("--kappa is required for --terminal fair")
        kappa = args.kappa
        terminal = FairTerminal(kappa)
    spec = FairnessSpec(args.property, kappa, args.horizon)
    started = time.perf_counter()
    table = synthesize(theta, spec, terminal)
    elapsed = time.perf_counter() - started
    peak_mb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0
    if not table.feasible:
        print("infeasible", file=sys.stderr)
        return EXIT_INFEASIBLE
    save_shield(table, args.out, fmt=args.format)
    print(f"root_value {table.root_value:.17g}")
    print(f"lattice_size {table.state_count()}")
    print(f"wall_time_s {elapsed:.3f}")
    print(f"peak_memory_mb {peak_mb:.1f}")
    return EXIT_OK


def _cmd_sim(args) -> int:
    theta = load_theta(args.theta)
    table = load_shield(args.shield, theta)
    if args.periodic == "static-bw":
        factory = lambda: StaticBWShield(table)  # noqa: E731
        shield_name = "static-bw"
    elif args.periodic == "dynamic":
        spec = table.spec
        factory = lambda: DynamicShield(theta, spec)  # noqa: E731
        shield_name = "dynamic"
    else:
        factory = lambda: StaticFairShield(table)  # noqa: E731
        shield_name = args.periodic or "table"
    config = SimConfig(seed=args.seed, runs=args.runs,
                       horizon=table.spec.horizon, periods=args.periods)
    results = run(theta, factory, config,
                  paired_baseline=args.unshielded_baseline)
    metrics = [r.metrics for r in results]
    doc = {
        "metrics_version": 1,
        "config": {
            "seed": args.seed,
            "runs": args.runs,
            "horizon": table.spec.horizon,
            "periods": args.periods,
            "property": table.spec.kind,
            "kappa": table.spec.kappa,
            "shield": shield_name,
            "theta_digest": theta.digest(),
            "unshielded_baseline": bool(args.unshielded_baseline),
        },
        "runs": [m.to_dict() for m in metrics],
        "aggregate": aggregate(metrics, kappa=table.spec.kappa),
    }
    atomic_write_text(args.out, canonical_dumps(doc) + "\n")
    if args.trace_dir:
        os.makedirs(args.trace_dir, exist_ok=True)
        for r in results:
            _write_trace_csv(
                os.path.join(args.trace_dir, f"run-{r.metrics.run_index:04d}.csv"),
                r.trace)
    agg = doc["aggregate"]
    print(f"runs {len(metrics)}")
    if "violation_rate" in agg:
        print(f"violation_rate {agg['violation_rate']:.4f}")
    print(f"mean_cost {agg['cost']['mean']:.6g}")
    return EXIT_OK


def _write_trace_csv(path: str, trace) -> None:
    lines = ["step,g,r,c,y,z,cost"]
    for i, step in enumerate(trace, start=1):
        z = "" if step.ground_truth is None else step.ground_truth
        incurred = step.input.cost if step.final != step.input.recommendation else 0.0
        lines.append(f"{i},{step.input.group},{step.input.recommendation},"
                     f"{step.input.cost:.17g},{step.final},{z},{incurred:.17g}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def _cmd_oracle(args) -> int:
    if args.oracle_cmd == "exact":
        theta = load_theta(args.theta)
        if args.terminal == "bw":
            if args.l is None or args.u is None:
                raise ValidationError("--terminal bw requires --l and --u")
            bounds = WelfareBounds(args.l, args.u)
            from .periodic import min_balance
            terminal = BoundedWelfareTerminal(bounds.lower, bounds.upper,
                                              min_balance(bounds))
            kappa = bounds.upper - bounds.lower
        else:
            if args.kappa is None:
                raise ValidationError("--kappa is required for --terminal fair")
            kappa = args.kappa
            terminal = FairTerminal(kappa)
        spec = FairnessSpec(args.property, kappa, args.horizon)
        result = exact_enumerate(theta, spec, terminal)
        doc = {
            "root_value": result.root_value,
            "leaf_count": result.leaf_count,
            "branching": result.branching,
            "property": result.kind,
        }
    elif args.oracle_cmd == "counterexample":
        if args.tightness:
            pair = tightness_family(args.t)
            doc = _pair_dict(pair.pair)
            doc["balance"] = pair.balance
        elif args.k is not None:
            doc = _pair_dict(counterexample_family(args.t, args.k))
        else:
            doc = _pair_dict(counterexample_static_fair(args.t))
    elif args.oracle_cmd == "mediant":
        nums = [float(x) for x in args.num.split(",")]
        dens = [float(x) for x in args.den.split(",")]
        pooled = sum(nums) / sum(dens)
        doc = {"holds": mediant_check(nums, dens), "pooled": pooled}
    elif args.oracle_cmd == "balance-prob":
        doc = {"probability": balanced_probability(args.t, args.n, args.p)}
    elif args.oracle_cmd == "sdp-expect":
        doc = {"expectation": sdp_expectation(args.pa, args.p1a, args.p1b, args.t)}
    else:  # pragma: no cover - argparse enforces choices
        raise ValidationError(f"unknown oracle command {args.oracle_cmd!r}")
    text = canonical_dumps(doc)
    if getattr(args, "out", None):
        atomic_write_text(args.out, text + "\n")
    print(text)
    return EXIT_OK


def _pair_dict(pair) -> dict:
    return {
        "t1": list(pair.first.astuple()),
        "t2": list(pair.second.astuple()),
        "bias_1": pair.first_bias,
        "bias_2": pair.second_bias,
        "combined_bias": pair.combined_bias,
        "violation": pair.violation,
    }


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    # usage errors are validation errors (exit 3); argparse defaults to 2,
    # which this tool reserves for infeasible synthesis
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairshield",
                     description="Synthesize and evaluate fairness shields.")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="synthesize a shield table")
    synth.add_argument("--theta", required=True, help="distribution JSON file")
    synth.add_argument("--property", choices=["dp", "eqopp"], required=True)
    synth.add_argument("--kappa", type=float, default=None, help="bias threshold")
    synth.add_argument("--horizon", type=int, required=True)
    synth.add_argument("--terminal", choices=["fair", "bw"], default="fair")
    synth.add_argument("--l", type=float, default=None, help="welfare lower bound (bw)")
    synth.add_argument("--u", type=float, default=None, help="welfare upper bound (bw)")
    synth.add_argument("--out", required=True)
    synth.add_argument("--format", choices=["json", "binary"], default="json")
    synth.set_defaults(func=_cmd_synth)

    simp = sub.add_parser("sim", help="run seeded simulations")
    simp.add_argument("--shield", required=True, help="shield file from synth")
    simp.add_argument("--periodic", choices=["static-fair", "static-bw", "dynamic"],
                      default=None)
    simp.add_argument("--theta", required=True)
    simp.add_argument("--runs", type=int, required=True)
    simp.add_argument("--seed", type=int, required=True)
    simp.add_argument("--periods", type=int, default=1)
    simp.add_argument("--unshielded-baseline", action="store_true")
    simp.add_argument("--out", required=True)
    simp.add_argument("--trace-dir", default=None)
    simp.set_defaults(func=_cmd_sim)

    orc = sub.add_parser("oracle", help="independent checks and closed forms")
    osub = orc.add_subparsers(dest="oracle_cmd", required=True)

    exact = osub.add_parser("exact", help="brute-force enumeration value")
    exact.add_argument("--theta", required=True)
    exact.add_argument("--property", choices=["dp", "eqopp"], default="dp")
    exact.add_argument("--kappa", type=float, default=None)
    exact.add_argument("--horizon", type=int, required=True)
    exact.add_argument("--terminal", choices=["fair", "bw"], default="fair")
    exact.add_argument("--l", type=float, default=None)
    exact.add_argument("--u", type=float, default=None)
    exact.add_argument("--out", default=None)
    exact.set_defaults(func=_cmd_oracle)

    cex = osub.add_parser("counterexample", help="period-composition counterexamples")
    cex.add_argument("--t", type=int, required=True)
    cex.add_argument("--k", type=int, default=None)
    cex.add_argument("--tightness", action="store_true",
                     help="balanced-trace family for combined length --t")
    cex.add_argument("--out", default=None)
    cex.set_defaults(func=_cmd_oracle)

    med = osub.add_parser("mediant", help="min-ratio <= pooled <= max-ratio check")
    med.add_argument("--num", required=True, help="comma-separated numerators")
    med.add_argument("--den", required=True, help="comma-separated denominators")
    med.add_argument("--out", default=None)
    med.set_defaults(func=_cmd_oracle)

    bal = osub.add_parser("balance-prob", help="P(N <= Bin(T, p) <= T - N)")
    bal.add_argument("--t", type=int, required=True)
    bal.add_argument("--n", type=int, required=True)
    bal.add_argument("--p", type=float, required=True)
    bal.add_argument("--out", default=None)
    bal.set_defaults(func=_cmd_oracle)

    sdp = osub.add_parser("sdp-expect", help="closed-form expected signed parity")
    sdp.add_argument("--pa", type=float, required=True)
    sdp.add_argument("--p1a", type=float, required=True)
    sdp.add_argument("--p1b", type=float, required=True)
    sdp.add_argument("--t", type=int, required=True)
    sdp.add_argument("--out", default=None)
    sdp.set_defaults(func=_cmd_oracle)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ValidationError, SizeGuardError, ShieldLookupError,
            SequencingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

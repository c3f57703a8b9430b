"""Command line front end: parse, analyze, simulate, audit, check, whatif.

Every command reads one system file, does its job, prints a report and
exits with a stable code: 0 for success or a passing check, 1 when the
command found violations or counterexamples (including parse diagnostics
from the `parse` command, failed policy verdicts from `check`, and audit
counterexamples), 2 for usage, input or I/O errors. All output is
deterministic given the flags and the seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from typing import List, Optional, Tuple

from .parser import ParseError, parse_system
from .syntax import (PolicyConfig, System, WellFormedError, system_to_source,
                     well_formed)
from .semantics import (config_to_json, explore, run, trace_to_jsonl)
from .cfa import (Estimate, check_estimate, solve, soundness_audit,
                  what_if_comp)
from .policy import run_policy, validate_policy, policy_from_json

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_ERROR = 2


class CliError(Exception):
    """Fatal command error; `code` becomes the process exit status."""

    def __init__(self, message: str, code: int = EXIT_ERROR):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class RunConfig:
    """Everything a command invocation depends on, gathered in one place."""
    command: str
    path: str
    seed: int = 0
    steps: int = 100
    depth: int = 50
    cap: int = 100_000
    fmt: str = "text"
    strict: bool = False
    policy_path: Optional[str] = None
    estimate_path: Optional[str] = None
    trace_path: Optional[str] = None
    out: Optional[str] = None
    phys: bool = False
    exhaustive: bool = False
    max_productions: int = 100_000
    drops: Tuple[Tuple[str, str], ...] = ()

    def __post_init__(self):
        for name in ("seed", "steps", "depth", "cap", "max_productions"):
            if getattr(self, name) < 0:
                raise CliError("%s must be >= 0" % name)


def _read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise CliError("cannot read %s: %s" % (path, exc))


def _write_text(path: str, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliError("cannot write %s: %s" % (path, exc))


def _load_system(path: str, parse_exit: int = EXIT_ERROR) -> System:
    source = _read_text(path)
    try:
        system = parse_system(source)
    except ParseError as exc:
        raise CliError("%s: %s" % (path, exc), parse_exit)
    problems = well_formed(system)
    if problems:
        raise CliError("%s:\n  %s" % (path, "\n  ".join(problems)), parse_exit)
    return system


def system_digest(system: System) -> str:
    """Fingerprint of a system, stable across reparses of equivalent text."""
    src = system_to_source(system)
    return hashlib.sha256(src.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# AST dump helpers
# ---------------------------------------------------------------------------

def ast_to_json(obj) -> object:
    """Generic structural dump: dataclasses become {"kind": ..., fields},
    tuples become lists, the utility tables become sorted summaries."""
    from .syntax import CompRelation, FunctionTable
    if isinstance(obj, CompRelation):
        return {"kind": "CompRelation", "links": obj.describe()}
    if isinstance(obj, FunctionTable):
        return {"kind": "FunctionTable",
                "declared": [{"name": s.name, "arity": s.arity,
                              "evaluator": s.evaluator, "sealed": s.sealed}
                             for s in obj.declared()]}
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        out = {"kind": type(obj).__name__}
        for f in dataclasses.fields(obj):
            out[f.name] = ast_to_json(getattr(obj, f.name))
        return out
    if isinstance(obj, tuple):
        return [ast_to_json(x) for x in obj]
    if isinstance(obj, dict):
        return {str(k): ast_to_json(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, frozenset):
        return sorted(str(x) for x in obj)
    return obj


def count_constructs(system: System) -> int:
    """Number of syntax-tree nodes in the node bodies: processes, sensor and
    actuator programs, and the terms inside them. Declarations and wiring
    (stores, scripts, links, policy) are not counted."""
    def walk(x) -> int:
        if dataclasses.is_dataclass(x) and not isinstance(x, type):
            return 1 + sum(walk(getattr(x, f.name))
                           for f in dataclasses.fields(x))
        if isinstance(x, tuple):
            return sum(walk(v) for v in x)
        return 0

    total = 0
    for node in system.nodes:
        for proc in node.procs:
            total += walk(proc)
        for _, body in node.sensors:
            total += walk(body)
        for _, body in node.actuators:
            total += walk(body)
    return total


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_parse(cfg: RunConfig) -> int:
    system = _load_system(cfg.path, parse_exit=EXIT_FINDINGS)
    constructs = count_constructs(system)
    if cfg.fmt == "json":
        doc = {
            "file": cfg.path,
            "nodes": list(system.labels()),
            "constructs": constructs,
            "system": ast_to_json(system),
        }
        print(json.dumps(doc, sort_keys=True, indent=1))
    else:
        print("parsed %s: %d nodes, %d constructs"
              % (cfg.path, len(system.nodes), constructs))
        print(system_to_source(system), end="")
    return EXIT_OK


def _estimate_summary(est: Estimate, system: System, strict: bool) -> List[Tuple[str, dict]]:
    rows = []
    for label in system.labels():
        node = system.node(label)
        sigma = sum(len(est.sigma_starts(label, loc))
                    for loc in node.store_locations())
        row = {
            "sigma": sigma,
            "kappa": len(est.kappa_entries(label)),
            "theta": len(est.theta_avs(label)),
        }
        if not strict:
            row["alpha"] = sum(len(est.alpha_actions(label, j))
                               for j in node.actuator_ids())
        rows.append((label, row))
    return rows


def cmd_analyze(cfg: RunConfig) -> int:
    system = _load_system(cfg.path)
    est = solve(system, strict=cfg.strict)
    if len(est.table) > cfg.max_productions:
        raise CliError("analysis produced %d productions, over the cap of %d"
                       % (len(est.table), cfg.max_productions))
    problems = check_estimate(system, est)
    if problems:
        raise CliError("internal: computed estimate failed its own check:\n  "
                       + "\n  ".join(problems))
    out = cfg.out or "estimate.json"
    _write_text(out, est.dumps() + "\n")
    rows = _estimate_summary(est, system, cfg.strict)
    if cfg.fmt == "json":
        doc = {"file": cfg.path, "output": out,
               "productions": len(est.table),
               "summary": {label: row for label, row in rows}}
        print(json.dumps(doc, sort_keys=True, indent=1))
    else:
        print("estimate written to %s (%d productions)"
              % (out, len(est.table)))
        for label, row in rows:
            bits = ["%s=%d" % (k, row[k]) for k in ("sigma", "kappa", "theta")]
            if "alpha" in row:
                bits.append("alpha=%d" % row["alpha"])
            print("  %-8s %s" % (label, "  ".join(bits)))
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    system = _load_system(cfg.path)
    if cfg.exhaustive:
        res = explore(system, max_depth=cfg.depth, cap=cfg.cap)
        lines = sorted(json.dumps(config_to_json(c), sort_keys=True)
                       for c in res.states)
        out = cfg.out or "states.jsonl"
        _write_text(out, "\n".join(lines) + ("\n" if lines else ""))
        doc = {"file": cfg.path, "output": out, "states": len(res.states),
               "terminals": len(res.terminals), "complete": res.complete,
               "depth": res.max_depth_reached}
        if cfg.fmt == "json":
            print(json.dumps(doc, sort_keys=True, indent=1))
        else:
            print("explored %(states)d states (%(terminals)d terminal) to "
                  "depth %(depth)d; complete: %(complete)s" % doc)
            print("states written to %s" % out)
        return EXIT_OK

    result = run(system, seed=cfg.seed, max_steps=cfg.steps, phys=cfg.phys)
    header = json.dumps({"kind": "Header", "system": system_digest(system),
                         "seed": cfg.seed, "steps": cfg.steps,
                         "phys": cfg.phys}, sort_keys=True)
    out = cfg.out or "trace.jsonl"
    _write_text(out, header + "\n" + trace_to_jsonl(result))
    if result.terminal:
        reason = ("no action enabled after %d steps" % result.steps)
    else:
        reason = ("step budget of %d exhausted" % cfg.steps)
    if cfg.fmt == "json":
        doc = {"file": cfg.path, "output": out, "seed": cfg.seed,
               "steps": result.steps, "terminated": result.terminal,
               "reason": reason}
        print(json.dumps(doc, sort_keys=True, indent=1))
    else:
        print("ran %d steps (seed %d): %s" % (result.steps, cfg.seed, reason))
        print("trace written to %s" % out)
    return EXIT_OK


def cmd_audit(cfg: RunConfig) -> int:
    system = _load_system(cfg.path)
    est_text = _read_text(cfg.estimate_path)
    try:
        est = Estimate.loads(est_text)
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError("%s: not an estimate file (%s)"
                       % (cfg.estimate_path, exc))
    trace_text = _read_text(cfg.trace_path)
    first = trace_text.splitlines()[0] if trace_text.strip() else ""
    if not first:
        print("empty trace: nothing to audit, ok")
        return EXIT_OK
    try:
        header = json.loads(first)
    except ValueError as exc:
        raise CliError("%s: bad header line (%s)" % (cfg.trace_path, exc))
    if header.get("kind") != "Header":
        raise CliError("%s: missing trace header" % cfg.trace_path)
    if header.get("system") != system_digest(system):
        raise CliError("trace %s was recorded from a different system than %s"
                       % (cfg.trace_path, cfg.path))
    result = run(system, seed=int(header["seed"]),
                 max_steps=int(header["steps"]),
                 phys=bool(header.get("phys", False)), collect=True)
    errs = soundness_audit(system, est, result.configs)
    if errs:
        print("audit found %d counterexamples:" % len(errs))
        for e in errs:
            print("  " + e)
        return EXIT_FINDINGS
    print("audited %d configurations against %s: ok"
          % (len(result.configs), cfg.estimate_path))
    return EXIT_OK


def cmd_check(cfg: RunConfig) -> int:
    system = _load_system(cfg.path)
    if cfg.policy_path is not None:
        policy = policy_from_json(_read_text(cfg.policy_path))
    else:
        policy = system.policy
    if policy is None:
        policy = PolicyConfig()
    problems = validate_policy(system, policy)
    if problems:
        raise CliError("policy does not fit the system:\n  "
                       + "\n  ".join(problems))
    est = solve(system, strict=cfg.strict)
    verdicts = run_policy(est, policy)
    if cfg.fmt == "json":
        doc = {"file": cfg.path,
               "verdicts": [v.to_json() for v in verdicts]}
        print(json.dumps(doc, sort_keys=True, indent=1))
    else:
        if not verdicts:
            print("no policies enabled: PASS")
        for v in verdicts:
            print(v.describe())
    return EXIT_OK if all(v.passed for v in verdicts) else EXIT_FINDINGS


def cmd_whatif(cfg: RunConfig) -> int:
    system = _load_system(cfg.path)
    labels = set(system.labels())
    for a, b in cfg.drops:
        if a not in labels or b not in labels:
            raise CliError("unknown node in --drop %s:%s" % (a, b))
    res = what_if_comp(system, cfg.drops, strict=cfg.strict)

    def entries_json(d):
        return {label: [[e.sender] + [sorted(n.name for n in pos)
                                      for pos in e.positions]
                        for e in d[label]]
                for label in sorted(d)}

    if cfg.fmt == "json":
        doc = {"file": cfg.path,
               "drops": ["%s:%s" % d for d in cfg.drops],
               "removed": entries_json(res.removed),
               "added": entries_json(res.added)}
        print(json.dumps(doc, sort_keys=True, indent=1))
    else:
        print(res.describe())
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _env_seed() -> int:
    raw = os.environ.get("ILYSA_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise CliError("ILYSA_SEED must be an integer, got %r" % raw)


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="ilysa",
        description="Parse, simulate and analyze systems of store-sharing "
                    "smart devices.")
    sub = top.add_subparsers(dest="command", required=True)

    def common(p, fmt=True):
        p.add_argument("file", help="system file to read")
        if fmt:
            p.add_argument("--format", choices=["text", "json"],
                           default="text", dest="fmt",
                           help="report format (default text)")

    p = sub.add_parser("parse", help="parse a file and dump the syntax tree")
    common(p)

    p = sub.add_parser("analyze",
                       help="compute the least estimate and write it out")
    common(p)
    p.add_argument("-o", "--out", default=None, metavar="PATH",
                   help="estimate file to write (default estimate.json)")
    p.add_argument("--strict-paper", action="store_true", dest="strict",
                   help="leave actuator actions out of the analysis")
    p.add_argument("--max-productions", type=int, default=100_000,
                   help="abort if the grammar grows past this many "
                        "productions (default 100000)")

    p = sub.add_parser("simulate", help="run one schedule and write a trace")
    common(p)
    p.add_argument("--seed", type=int, default=None,
                   help="schedule seed (default: ILYSA_SEED or 0)")
    p.add_argument("--steps", type=int, default=100,
                   help="step budget (default 100)")
    p.add_argument("-o", "--out", default=None, metavar="PATH",
                   help="trace file to write (default trace.jsonl; "
                        "states.jsonl with --exhaustive)")
    p.add_argument("--phys", action="store_true",
                   help="advance sensor scripts between steps")
    p.add_argument("--exhaustive", action="store_true",
                   help="enumerate all reachable states instead of running "
                        "one schedule")
    p.add_argument("--depth", type=int, default=50,
                   help="depth bound for --exhaustive (default 50)")
    p.add_argument("--cap", type=int, default=100_000,
                   help="state cap for --exhaustive (default 100000)")

    p = sub.add_parser("audit",
                       help="replay a trace and check every configuration "
                            "against an estimate")
    common(p, fmt=False)
    p.add_argument("--estimate", required=True, dest="estimate_path",
                   metavar="PATH", help="estimate file (from analyze)")
    p.add_argument("--trace", required=True, dest="trace_path",
                   metavar="PATH", help="trace file (from simulate)")

    p = sub.add_parser("check", help="evaluate security policies")
    common(p)
    p.add_argument("--policy", default=None, dest="policy_path",
                   metavar="PATH",
                   help="policy JSON file (default: the policy block of the "
                        "system file, if any)")
    p.add_argument("--strict-paper", action="store_true", dest="strict",
                   help="leave actuator actions out of the analysis")

    p = sub.add_parser("whatif",
                       help="drop links and report the message-entry diff")
    common(p)
    p.add_argument("--drop", action="append", default=[], metavar="FROM:TO",
                   help="directed link to remove (repeatable)")
    p.add_argument("--strict-paper", action="store_true", dest="strict",
                   help="leave actuator actions out of the analysis")

    return top


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    drops = []
    for raw in getattr(args, "drop", []):
        if raw.count(":") != 1:
            raise CliError("--drop takes FROM:TO, got %r" % raw)
        a, b = raw.split(":")
        if not a or not b:
            raise CliError("--drop takes FROM:TO, got %r" % raw)
        drops.append((a, b))
    seed = getattr(args, "seed", None)
    if seed is None:
        seed = _env_seed()
    return RunConfig(
        command=args.command,
        path=args.file,
        seed=seed,
        steps=getattr(args, "steps", 100),
        depth=getattr(args, "depth", 50),
        cap=getattr(args, "cap", 100_000),
        fmt=getattr(args, "fmt", "text"),
        strict=getattr(args, "strict", False),
        policy_path=getattr(args, "policy_path", None),
        estimate_path=getattr(args, "estimate_path", None),
        trace_path=getattr(args, "trace_path", None),
        out=getattr(args, "out", None),
        phys=getattr(args, "phys", False),
        exhaustive=getattr(args, "exhaustive", False),
        max_productions=getattr(args, "max_productions", 100_000),
        drops=tuple(drops),
    )


COMMANDS = {
    "parse": cmd_parse,
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "audit": cmd_audit,
    "check": cmd_check,
    "whatif": cmd_whatif,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        return COMMANDS[cfg.command](cfg)
    except CliError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

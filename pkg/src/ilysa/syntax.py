"""Abstract syntax for node systems.

A system is a set of labelled nodes. Each node owns a store (its variable
and sensor locations), any number of processes, and its sensors and
actuators. Terms are first order: literals, variables, sensor locations,
function applications and encryptions.

All nodes are frozen dataclasses so that runtime configurations built from
them hash and compare structurally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple, Union

from .treegram import Atom, LitValue, cached_hash, render_lit


# ---------------------------------------------------------------------------
# terms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Lit:
    value: LitValue


@dataclass(frozen=True)
class SensorLoc:
    """Read of sensor location #i of the enclosing node's store."""
    sensor: int


@dataclass(frozen=True)
class Var:
    name: str


@cached_hash
@dataclass(frozen=True)
class App:
    fn: str
    args: Tuple["Term", ...]


@cached_hash
@dataclass(frozen=True)
class EncTerm:
    """{E1,...,Er}_k, encryption of r >= 1 terms under key k."""
    args: Tuple["Term", ...]
    key: str


Term = Union[Lit, SensorLoc, Var, App, EncTerm]


# ---------------------------------------------------------------------------
# processes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PNil:
    pass


@cached_hash
@dataclass(frozen=True)
class POut:
    """out(E1,...,Er) to {l1,...}. cont"""
    terms: Tuple[Term, ...]
    targets: Tuple[str, ...]
    cont: "Process"


@cached_hash
@dataclass(frozen=True)
class PIn:
    """in(E1,...,Ej ; x_{j+1},...,x_r). cont"""
    match: Tuple[Term, ...]
    binders: Tuple[str, ...]
    cont: "Process"


@cached_hash
@dataclass(frozen=True)
class PCond:
    guard: Term
    then: "Process"
    els: "Process"


@cached_hash
@dataclass(frozen=True)
class PAssign:
    var: str
    term: Term
    cont: "Process"


@cached_hash
@dataclass(frozen=True)
class PActCmd:
    """act(j, gamma). cont : command actuator j to perform gamma."""
    actuator: int
    action: str
    cont: "Process"


@cached_hash
@dataclass(frozen=True)
class PDecrypt:
    """decrypt E as {E1,...,Ej ; x_{j+1},...,x_r}_k in cont"""
    subject: Term
    match: Tuple[Term, ...]
    binders: Tuple[str, ...]
    key: str
    cont: "Process"


@cached_hash
@dataclass(frozen=True)
class PIter:
    """mu h. body"""
    var: str
    body: "Process"


@dataclass(frozen=True)
class PCall:
    """Iteration variable occurrence."""
    var: str


Process = Union[PNil, POut, PIn, PCond, PAssign, PActCmd, PDecrypt, PIter, PCall]


# ---------------------------------------------------------------------------
# sensors and actuators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SNil:
    pass


@cached_hash
@dataclass(frozen=True)
class STau:
    cont: "SensorBody"


@cached_hash
@dataclass(frozen=True)
class SProbe:
    """probe(#i). cont : deposit a fresh reading in store location i."""
    sensor: int
    cont: "SensorBody"


@cached_hash
@dataclass(frozen=True)
class SIter:
    var: str
    body: "SensorBody"


@dataclass(frozen=True)
class SCall:
    var: str


SensorBody = Union[SNil, STau, SProbe, SIter, SCall]


@dataclass(frozen=True)
class ANil:
    pass


@cached_hash
@dataclass(frozen=True)
class ATau:
    cont: "ActuatorBody"


@cached_hash
@dataclass(frozen=True)
class AAwait:
    """await(j, {g1,...}). cont : accept any command in the set."""
    actuator: int
    actions: Tuple[str, ...]
    cont: "ActuatorBody"


@cached_hash
@dataclass(frozen=True)
class ADo:
    """A command being performed; arises at runtime when an await accepts,
    and may also be written in source."""
    action: str
    cont: "ActuatorBody"


@cached_hash
@dataclass(frozen=True)
class AIter:
    var: str
    body: "ActuatorBody"


@dataclass(frozen=True)
class ACall:
    var: str


ActuatorBody = Union[ANil, ATau, AAwait, ADo, AIter, ACall]


# ---------------------------------------------------------------------------
# declarations
# ---------------------------------------------------------------------------

# evaluator tags a declared function may carry
EVAL_BUILTIN = "builtin"
EVAL_RECORD = "record"    # uninterpreted: builds a tagged record
EVAL_CAMERA = "camera"    # scenario predicate, see semantics.camera_predicate

BUILTINS: Dict[str, int] = {
    "add": 2, "sub": 2, "mul": 2,
    "eq": 2, "ge": 2, "le": 2, "gt": 2, "lt": 2,
    "and": 2, "or": 2, "not": 1,
    "tuple": -1,  # variadic
    "id": 1,
}

INFIX_NAMES = {
    "add": "+", "sub": "-", "mul": "*",
    "eq": "=", "ge": ">=", "le": "<=", "gt": ">", "lt": "<",
    "and": "and", "or": "or",
}


@dataclass(frozen=True)
class FunSig:
    name: str
    arity: int            # -1 means variadic
    evaluator: str = EVAL_RECORD
    sealed: bool = False  # sealed results do not expose their arguments
                          # to the flow analysis


class FunctionTable:
    """Declared function signatures, with the builtins preloaded."""

    def __init__(self, sigs: Iterable[FunSig] = ()):
        self._sigs: Dict[str, FunSig] = {
            name: FunSig(name, ar, EVAL_BUILTIN) for name, ar in BUILTINS.items()
        }
        for s in sigs:
            self.declare(s)

    def declare(self, sig: FunSig) -> None:
        if sig.name in BUILTINS:
            raise ValueError("cannot redeclare builtin %s" % sig.name)
        self._sigs[sig.name] = sig

    def lookup(self, name: str) -> Optional[FunSig]:
        return self._sigs.get(name)

    def declared(self) -> List[FunSig]:
        return sorted((s for s in self._sigs.values() if s.evaluator != EVAL_BUILTIN),
                      key=lambda s: s.name)

    def __contains__(self, name: str) -> bool:
        return name in self._sigs


@dataclass(frozen=True)
class Script:
    """Environment script for one sensor: the readings it will produce."""
    values: Tuple[LitValue, ...]
    mode: str = "cycle"  # cycle | hold | stuck


class CompRelation:
    """Which directed links may carry messages. Either everything minus a
    removal set, or an explicit edge set."""

    def __init__(self, mode: str = "all",
                 edges: Iterable[Tuple[str, str]] = (),
                 removed: Iterable[Tuple[str, str]] = ()):
        if mode not in ("all", "edges", "none"):
            raise ValueError(mode)
        self.mode = mode
        self.edges = frozenset(edges)
        self.removed = frozenset(removed)

    def allows(self, sender: str, receiver: str) -> bool:
        if (sender, receiver) in self.removed:
            return False
        if self.mode == "all":
            return True
        if self.mode == "none":
            return False
        return (sender, receiver) in self.edges

    def without(self, dropped: Iterable[Tuple[str, str]]) -> "CompRelation":
        return CompRelation(self.mode, self.edges, self.removed | frozenset(dropped))

    def describe(self) -> str:
        if self.mode == "all" and not self.removed:
            return "all"
        parts = [self.mode]
        if self.edges:
            parts.append("edges=" + ",".join("%s->%s" % e for e in sorted(self.edges)))
        if self.removed:
            parts.append("removed=" + ",".join("%s->%s" % e for e in sorted(self.removed)))
        return " ".join(parts)


@dataclass(frozen=True)
class PolicyConfig:
    """Security classifications, parsed from the policy block or a JSON file.
    Empty fields disable the corresponding check."""
    secret: Tuple[Tuple[str, Tuple[int, ...]], ...] = ()      # label -> sensor ids
    confined: Tuple[Tuple[str, Tuple[int, ...]], ...] = ()
    anonymisers: Tuple[str, ...] = ()
    levels: Tuple[Tuple[str, int], ...] = ()
    allowed: Tuple[str, ...] = ()                              # trusted node set
    flows: Tuple[Tuple[str, Tuple[str, ...]], ...] = ()        # sender -> receivers

    def secret_map(self) -> Dict[str, FrozenSet[int]]:
        return {lab: frozenset(ids) for lab, ids in self.secret}

    def confined_map(self) -> Dict[str, FrozenSet[int]]:
        return {lab: frozenset(ids) for lab, ids in self.confined}

    def level_map(self) -> Dict[str, int]:
        return dict(self.levels)

    def flow_map(self) -> Dict[str, FrozenSet[str]]:
        return {lab: frozenset(rs) for lab, rs in self.flows}


@dataclass(frozen=True)
class NodeDef:
    label: str
    variables: Tuple[str, ...]
    sensors: Tuple[Tuple[int, SensorBody], ...]
    actuators: Tuple[Tuple[int, ActuatorBody], ...]
    procs: Tuple[Process, ...]

    def sensor_ids(self) -> Tuple[int, ...]:
        return tuple(i for i, _ in self.sensors)

    def actuator_ids(self) -> Tuple[int, ...]:
        return tuple(j for j, _ in self.actuators)

    def store_locations(self) -> Tuple[Union[str, int], ...]:
        return self.variables + self.sensor_ids()


@dataclass(frozen=True)
class System:
    nodes: Tuple[NodeDef, ...]
    functions: FunctionTable = field(default_factory=FunctionTable, compare=False)
    keys: Tuple[str, ...] = ()
    comp: CompRelation = field(default_factory=CompRelation, compare=False)
    scripts: Tuple[Tuple[Tuple[str, int], Script], ...] = ()
    cameras: Tuple[str, ...] = ()
    policy: Optional[PolicyConfig] = None

    def node(self, label: str) -> NodeDef:
        for n in self.nodes:
            if n.label == label:
                return n
        raise KeyError(label)

    def labels(self) -> Tuple[str, ...]:
        return tuple(n.label for n in self.nodes)

    def script_map(self) -> Dict[Tuple[str, int], Script]:
        return dict(self.scripts)

    def with_comp(self, comp: CompRelation) -> "System":
        return System(self.nodes, self.functions, self.keys, comp,
                      self.scripts, self.cameras, self.policy)


# ---------------------------------------------------------------------------
# free variables
# ---------------------------------------------------------------------------

def free_variables(x: Union[Term, Process]) -> Set[str]:
    """Store variables read by a term, or read anywhere in a process.
    Binders do not bind scopes here (the store is imperative), so this is
    simply the set of Var occurrences."""
    if isinstance(x, Var):
        return {x.name}
    if isinstance(x, (Lit, SensorLoc)):
        return set()
    if isinstance(x, App):
        out: Set[str] = set()
        for a in x.args:
            out |= free_variables(a)
        return out
    if isinstance(x, EncTerm):
        out = set()
        for a in x.args:
            out |= free_variables(a)
        return out
    if isinstance(x, PNil) or isinstance(x, PCall):
        return set()
    if isinstance(x, POut):
        out = set()
        for t in x.terms:
            out |= free_variables(t)
        return out | free_variables(x.cont)
    if isinstance(x, PIn):
        out = set()
        for t in x.match:
            out |= free_variables(t)
        return out | free_variables(x.cont)
    if isinstance(x, PCond):
        return free_variables(x.guard) | free_variables(x.then) | free_variables(x.els)
    if isinstance(x, PAssign):
        return free_variables(x.term) | free_variables(x.cont)
    if isinstance(x, PActCmd):
        return free_variables(x.cont)
    if isinstance(x, PDecrypt):
        out = free_variables(x.subject)
        for t in x.match:
            out |= free_variables(t)
        return out | free_variables(x.cont)
    if isinstance(x, PIter):
        return free_variables(x.body)
    raise TypeError(x)


# ---------------------------------------------------------------------------
# well-formedness
# ---------------------------------------------------------------------------

class WellFormedError(Exception):
    def __init__(self, errors: List[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


def _check_iter_vars(body, bound: Tuple[str, ...], where: str, errs: List[str],
                     kind: str) -> None:
    """Iteration variables must be bound, and shadowing is an error."""
    if isinstance(body, (PNil, SNil, ANil)):
        return
    if isinstance(body, (PCall, SCall, ACall)):
        if body.var not in bound:
            errs.append("%s: unbound iteration variable %s" % (where, body.var))
        return
    if isinstance(body, (PIter, SIter, AIter)):
        if body.var in bound:
            errs.append("%s: iteration variable %s shadows an enclosing binding"
                        % (where, body.var))
        _check_iter_vars(body.body, bound + (body.var,), where, errs, kind)
        return
    if isinstance(body, PCond):
        _check_iter_vars(body.then, bound, where, errs, kind)
        _check_iter_vars(body.els, bound, where, errs, kind)
        return
    _check_iter_vars(body.cont, bound, where, errs, kind)


def _check_terms(term: Term, node: NodeDef, system: System, where: str,
                 errs: List[str]) -> None:
    if isinstance(term, Var):
        if term.name not in node.variables:
            errs.append("%s: variable %s is not in the store of node %s"
                        % (where, term.name, node.label))
    elif isinstance(term, SensorLoc):
        if term.sensor not in node.sensor_ids():
            errs.append("%s: node %s has no sensor #%d"
                        % (where, node.label, term.sensor))
    elif isinstance(term, App):
        sig = system.functions.lookup(term.fn)
        if sig is None:
            errs.append("%s: undeclared function %s" % (where, term.fn))
        elif sig.arity >= 0 and sig.arity != len(term.args):
            errs.append("%s: %s expects %d arguments, got %d"
                        % (where, term.fn, sig.arity, len(term.args)))
        for a in term.args:
            _check_terms(a, node, system, where, errs)
    elif isinstance(term, EncTerm):
        if not term.args:
            errs.append("%s: encryption needs at least one payload" % where)
        if term.key not in system.keys:
            errs.append("%s: undeclared key %s" % (where, term.key))
        for a in term.args:
            _check_terms(a, node, system, where, errs)


def _check_process(p: Process, node: NodeDef, system: System, where: str,
                   errs: List[str]) -> None:
    if isinstance(p, (PNil, PCall)):
        return
    if isinstance(p, POut):
        for t in p.terms:
            _check_terms(t, node, system, where, errs)
        labels = set(system.labels())
        for tgt in p.targets:
            if tgt not in labels:
                errs.append("%s: unknown target node %s" % (where, tgt))
        _check_process(p.cont, node, system, where, errs)
    elif isinstance(p, PIn):
        for t in p.match:
            _check_terms(t, node, system, where, errs)
        for b in p.binders:
            if b not in node.variables:
                errs.append("%s: binder %s is not in the store of node %s"
                            % (where, b, node.label))
        _check_process(p.cont, node, system, where, errs)
    elif isinstance(p, PCond):
        _check_terms(p.guard, node, system, where, errs)
        _check_process(p.then, node, system, where, errs)
        _check_process(p.els, node, system, where, errs)
    elif isinstance(p, PAssign):
        if p.var not in node.variables:
            errs.append("%s: assignment target %s is not in the store of node %s"
                        % (where, p.var, node.label))
        _check_terms(p.term, node, system, where, errs)
        _check_process(p.cont, node, system, where, errs)
    elif isinstance(p, PActCmd):
        if p.actuator not in node.actuator_ids():
            errs.append("%s: node %s has no actuator %d"
                        % (where, node.label, p.actuator))
        _check_process(p.cont, node, system, where, errs)
    elif isinstance(p, PDecrypt):
        _check_terms(p.subject, node, system, where, errs)
        for t in p.match:
            _check_terms(t, node, system, where, errs)
        for b in p.binders:
            if b not in node.variables:
                errs.append("%s: binder %s is not in the store of node %s"
                            % (where, b, node.label))
        if p.key not in system.keys:
            errs.append("%s: undeclared key %s" % (where, p.key))
        if not p.match and not p.binders:
            errs.append("%s: decrypt pattern must name at least one component" % where)
        _check_process(p.cont, node, system, where, errs)
    elif isinstance(p, PIter):
        _check_process(p.body, node, system, where, errs)
    else:
        raise TypeError(p)


def well_formed(system: System) -> List[str]:
    """All structural checks; returns the list of problems (empty = fine)."""
    errs: List[str] = []
    seen_labels: Set[str] = set()
    for node in system.nodes:
        if node.label in seen_labels:
            errs.append("duplicate node label %s" % node.label)
        seen_labels.add(node.label)
        ids = [i for i, _ in node.sensors] + [j for j, _ in node.actuators]
        if len(ids) != len(set(ids)):
            errs.append("node %s: sensor and actuator ids must be distinct" % node.label)
        if len(set(node.variables)) != len(node.variables):
            errs.append("node %s: duplicate store variable" % node.label)
        for i, body in node.sensors:
            where = "node %s sensor #%d" % (node.label, i)
            _check_iter_vars(body, (), where, errs, "sensor")
            # probes inside sensor i must name i itself
            stack = [body]
            while stack:
                b = stack.pop()
                if isinstance(b, SProbe):
                    if b.sensor != i:
                        errs.append("%s: probes sensor #%d" % (where, b.sensor))
                    stack.append(b.cont)
                elif isinstance(b, STau):
                    stack.append(b.cont)
                elif isinstance(b, SIter):
                    stack.append(b.body)
        for j, body in node.actuators:
            where = "node %s actuator %d" % (node.label, j)
            _check_iter_vars(body, (), where, errs, "actuator")
            stack = [body]
            while stack:
                b = stack.pop()
                if isinstance(b, AAwait):
                    if b.actuator != j:
                        errs.append("%s: awaits commands for actuator %d" % (where, b.actuator))
                    stack.append(b.cont)
                elif isinstance(b, (ATau, ADo)):
                    stack.append(b.cont)
                elif isinstance(b, AIter):
                    stack.append(b.body)
        for idx, proc in enumerate(node.procs):
            where = "node %s process %d" % (node.label, idx)
            _check_iter_vars(proc, (), where, errs, "process")
            _check_process(proc, node, system, where, errs)
    for (label, sensor), script in system.scripts:
        if label not in seen_labels:
            errs.append("script for unknown node %s" % label)
        else:
            if sensor not in system.node(label).sensor_ids():
                errs.append("script for unknown sensor #%d of node %s" % (sensor, label))
        if not script.values and script.mode != "stuck":
            errs.append("empty script for %s.#%d must be stuck" % (label, sensor))
    for cam in system.cameras:
        if cam not in seen_labels:
            errs.append("camera declaration names unknown node %s" % cam)
    return errs


# ---------------------------------------------------------------------------
# pretty printing (the inverse of the parser)
# ---------------------------------------------------------------------------

def term_to_source(t: Term) -> str:
    if isinstance(t, Lit):
        return render_lit(t.value)
    if isinstance(t, SensorLoc):
        return "#%d" % t.sensor
    if isinstance(t, Var):
        return t.name
    if isinstance(t, App):
        # infix sugar is not reconstructed; prefix form always reparses
        return "%s(%s)" % (t.fn, ", ".join(term_to_source(a) for a in t.args))
    if isinstance(t, EncTerm):
        return "{%s}_%s" % (", ".join(term_to_source(a) for a in t.args), t.key)
    raise TypeError(t)


def process_to_source(p: Process) -> str:
    if isinstance(p, PNil):
        return "nil"
    if isinstance(p, PCall):
        return p.var
    if isinstance(p, PIter):
        return "mu %s. %s" % (p.var, process_to_source(p.body))
    if isinstance(p, POut):
        return "out(%s) to {%s}. %s" % (
            ", ".join(term_to_source(t) for t in p.terms),
            ", ".join(p.targets),
            process_to_source(p.cont))
    if isinstance(p, PIn):
        return "in(%s; %s). %s" % (
            ", ".join(term_to_source(t) for t in p.match),
            ", ".join(p.binders),
            process_to_source(p.cont))
    if isinstance(p, PCond):
        return "if %s then %s else %s" % (
            term_to_source(p.guard), process_to_source(p.then), process_to_source(p.els))
    if isinstance(p, PAssign):
        return "%s := %s. %s" % (p.var, term_to_source(p.term), process_to_source(p.cont))
    if isinstance(p, PActCmd):
        return "act(%d, %s). %s" % (p.actuator, p.action, process_to_source(p.cont))
    if isinstance(p, PDecrypt):
        return "decrypt %s as {%s; %s}_%s in %s" % (
            term_to_source(p.subject),
            ", ".join(term_to_source(t) for t in p.match),
            ", ".join(p.binders),
            p.key,
            process_to_source(p.cont))
    raise TypeError(p)


def sensor_to_source(s: SensorBody) -> str:
    if isinstance(s, SNil):
        return "nil"
    if isinstance(s, SCall):
        return s.var
    if isinstance(s, SIter):
        return "mu %s. %s" % (s.var, sensor_to_source(s.body))
    if isinstance(s, STau):
        return "tau. %s" % sensor_to_source(s.cont)
    if isinstance(s, SProbe):
        return "probe(#%d). %s" % (s.sensor, sensor_to_source(s.cont))
    raise TypeError(s)


def actuator_to_source(a: ActuatorBody) -> str:
    if isinstance(a, ANil):
        return "nil"
    if isinstance(a, ACall):
        return a.var
    if isinstance(a, AIter):
        return "mu %s. %s" % (a.var, actuator_to_source(a.body))
    if isinstance(a, ATau):
        return "tau. %s" % actuator_to_source(a.cont)
    if isinstance(a, AAwait):
        return "await(%d, {%s}). %s" % (a.actuator, ", ".join(a.actions),
                                        actuator_to_source(a.cont))
    if isinstance(a, ADo):
        return "%s. %s" % (a.action, actuator_to_source(a.cont))
    raise TypeError(a)


def system_to_source(s: System) -> str:
    lines: List[str] = []
    declared = s.functions.declared()
    if declared:
        lines.append("functions {")
        for sig in declared:
            extra = ""
            if sig.evaluator != EVAL_RECORD:
                extra += " = %s" % sig.evaluator
            if sig.sealed:
                extra += " sealed"
            lines.append("  %s/%d%s;" % (sig.name, sig.arity, extra))
        lines.append("}")
    if s.keys:
        lines.append("keys { %s; }" % "; ".join(s.keys))
    if s.comp.mode != "all" or s.comp.removed:
        if s.comp.mode == "none":
            lines.append("comp none;")
        elif s.comp.mode == "edges":
            lines.append("comp { %s; }" % "; ".join("%s -> %s" % e
                                                    for e in sorted(s.comp.edges)))
    for (label, sensor), script in s.scripts:
        mode = "" if script.mode == "cycle" else " " + script.mode
        lines.append("script %s.#%d = [%s]%s;" % (
            label, sensor, ", ".join(render_lit(v) for v in script.values), mode))
    if s.cameras:
        lines.append("cameras { %s; }" % "; ".join(s.cameras))
    if s.policy is not None:
        p = s.policy
        lines.append("policy {")
        if p.secret:
            lines.append("  secret { %s; }" % "; ".join(
                "%s.#%d" % (lab, i) for lab, ids in p.secret for i in ids))
        if p.confined:
            lines.append("  confined { %s; }" % "; ".join(
                "%s.#%d" % (lab, i) for lab, ids in p.confined for i in ids))
        if p.anonymisers:
            lines.append("  anonymisers { %s; }" % "; ".join(p.anonymisers))
        if p.levels:
            lines.append("  levels { %s; }" % "; ".join(
                "%s = %d" % (lab, lv) for lab, lv in p.levels))
        if p.allowed:
            lines.append("  allowed { %s; }" % "; ".join(p.allowed))
        if p.flows:
            lines.append("  flows { %s; }" % "; ".join(
                "%s -> {%s}" % (lab, ", ".join(rs)) for lab, rs in p.flows))
        lines.append("}")
    lines.append("system {")
    for node in s.nodes:
        lines.append("  node %s {" % node.label)
        lines.append("    store { %s }" % ", ".join(node.variables))
        for i, body in node.sensors:
            lines.append("    sensor #%d = %s;" % (i, sensor_to_source(body)))
        for j, body in node.actuators:
            lines.append("    actuator %d = %s;" % (j, actuator_to_source(body)))
        for proc in node.procs:
            lines.append("    proc = %s;" % process_to_source(proc))
        lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"

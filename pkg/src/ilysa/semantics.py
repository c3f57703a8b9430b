"""Small-step operational semantics for node systems.

Configurations are immutable and hashable, so exhaustive exploration can
deduplicate states. Every runtime value is paired with a provenance tree
(see treegram) recording which sensors, literals, functions and
encryptions produced it; evaluation itself only ever inspects the plain
value, never the provenance.

The step relation, one rule per redex kind:

  EvOut    out(E..) to L. P   evaluates its terms and becomes a message
           ready to transmit; P stays blocked until every reachable
           target has taken the message.
  Deliver  a ready message reaches one input on a distinct listed target
           whose first j components match; the target is crossed off.
  Assign   x := E. P          writes the store.
  Cond     if E then P else Q picks a branch.
  Decrypt  fires when the subject is a ciphertext under the stated key
           with the right arity and matching prefix; binds the rest.
  ActCmd   act(j, g). P meets await(j, G) with g in G.
  Act      an actuator performs the accepted action.
  Probe    a sensor deposits the next scripted reading in its store slot.
  Tau      internal sensor or actuator step.

Iteration (mu) unfolds lazily through closures, so configurations stay
finite; a recursion that never reaches a real prefix normalises to nil.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import (Callable, Dict, FrozenSet, Iterable, Iterator, List,
                    Optional, Sequence, Set, Tuple, Union)

from .treegram import (
    cached_hash,
    Atom, TRUE, FALSE, LitValue, render_lit,
    ProvTree, SensorLeaf, ValueLeaf, FunNode, EncNode, tree_to_json,
)
from .syntax import (
    Lit, SensorLoc, Var, App, EncTerm, Term,
    PNil, POut, PIn, PCond, PAssign, PActCmd, PDecrypt, PIter, PCall, Process,
    SNil, STau, SProbe, SIter, SCall, SensorBody,
    ANil, ATau, AAwait, ADo, AIter, ACall, ActuatorBody,
    FunctionTable, FunSig, Script, System, NodeDef,
    EVAL_BUILTIN, EVAL_CAMERA, EVAL_RECORD,
    term_to_source, process_to_source, sensor_to_source, actuator_to_source,
)

UNDEF = Atom("undef")
ERR = Atom("err")

_UNFOLD_FUEL = 64


# ---------------------------------------------------------------------------
# values
# ---------------------------------------------------------------------------

@cached_hash
@dataclass(frozen=True)
class Rec:
    """Result of an uninterpreted function: a record of its inputs tagged
    with the function name and, for node-level computations, the label of
    the node that built it. Builtins like tuple leave the label empty."""
    fn: str
    args: Tuple["Value", ...]
    label: str = ""


@cached_hash
@dataclass(frozen=True)
class Cipher:
    """A ciphertext. The payload is carried but opaque to evaluation."""
    args: Tuple["Value", ...]
    key: str


Value = Union[int, str, Atom, Rec, Cipher]


@cached_hash
@dataclass(frozen=True)
class IVal:
    """A value together with the provenance tree that produced it."""
    value: Value
    prov: ProvTree


def render_value(v: Value) -> str:
    if isinstance(v, Rec):
        head = "%s@%s" % (v.fn, v.label) if v.label else v.fn
        return "%s(%s)" % (head, ", ".join(render_value(a) for a in v.args))
    if isinstance(v, Cipher):
        return "{%s}_%s" % (", ".join(render_value(a) for a in v.args), v.key)
    return render_lit(v)


def value_to_json(v: Value):
    if isinstance(v, bool):
        raise TypeError("booleans are atoms")
    if isinstance(v, int):
        return {"t": "int", "v": v}
    if isinstance(v, str):
        return {"t": "str", "v": v}
    if isinstance(v, Atom):
        return {"t": "atom", "v": v.name}
    if isinstance(v, Rec):
        out = {"t": "rec", "fn": v.fn, "args": [value_to_json(a) for a in v.args]}
        if v.label:
            out["label"] = v.label
        return out
    if isinstance(v, Cipher):
        return {"t": "cipher", "key": v.key, "args": [value_to_json(a) for a in v.args]}
    raise TypeError(v)


def ival_to_json(iv: IVal):
    return {"value": value_to_json(iv.value), "prov": tree_to_json(iv.prov)}


def _truthy(v: Value) -> bool:
    return v == TRUE


# ---------------------------------------------------------------------------
# term evaluation
# ---------------------------------------------------------------------------

class EvalError(Exception):
    pass


class EvalStuck(EvalError):
    """Reading a store variable nothing has written yet. The enclosing
    redex simply is not enabled."""


def camera_tag(name: str) -> str:
    """Recognizer functions test their argument against a tag derived from
    the function name: is_a_car checks for car."""
    if name.startswith("is_a_"):
        return name[len("is_a_"):]
    return name


def _recognize(v: Value, tag: str, cameras: FrozenSet[str]) -> bool:
    """A recognizer accepts atoms spelling its tag, records constructed
    under that tag, records built by a declared camera node, and anything
    that embeds one of those (processing a picture keeps it a picture)."""
    if isinstance(v, Atom):
        return v.name == tag
    if isinstance(v, Rec):
        if v.fn == tag or (v.label and v.label in cameras):
            return True
        return any(_recognize(a, tag, cameras) for a in v.args)
    return False


def _apply_builtin(fn: str, vals: Tuple[Value, ...]) -> Value:
    def ints() -> Optional[Tuple[int, int]]:
        a, b = vals
        if isinstance(a, int) and isinstance(b, int) \
                and not isinstance(a, bool) and not isinstance(b, bool):
            return a, b
        return None

    if fn == "add":
        p = ints()
        return p[0] + p[1] if p else ERR
    if fn == "sub":
        p = ints()
        return p[0] - p[1] if p else ERR
    if fn == "mul":
        p = ints()
        return p[0] * p[1] if p else ERR
    if fn == "eq":
        return TRUE if vals[0] == vals[1] else FALSE
    if fn in ("ge", "le", "gt", "lt"):
        p = ints()
        if p is None:
            return FALSE
        a, b = p
        ok = {"ge": a >= b, "le": a <= b, "gt": a > b, "lt": a < b}[fn]
        return TRUE if ok else FALSE
    if fn == "and":
        return TRUE if (_truthy(vals[0]) and _truthy(vals[1])) else FALSE
    if fn == "or":
        return TRUE if (_truthy(vals[0]) or _truthy(vals[1])) else FALSE
    if fn == "not":
        return FALSE if _truthy(vals[0]) else TRUE
    if fn == "tuple":
        return Rec("tuple", vals)
    if fn == "id":
        return vals[0]
    raise EvalError("unknown builtin %s" % fn)


def eval_term(term: Term, store: Dict[Union[str, int], IVal], label: str,
              functions: FunctionTable,
              cameras: FrozenSet[str] = frozenset()) -> IVal:
    """Evaluate a term against a node store. Total: type mismatches give
    the err atom rather than failing, so exploration never dies on them."""
    if isinstance(term, Lit):
        return IVal(term.value, ValueLeaf(term.value, label))
    if isinstance(term, SensorLoc):
        return store[term.sensor]
    if isinstance(term, Var):
        iv = store.get(term.name)
        if iv is None:
            raise EvalStuck(term.name)
        return iv
    if isinstance(term, App):
        ivals = tuple(eval_term(a, store, label, functions, cameras)
                      for a in term.args)
        vals = tuple(iv.value for iv in ivals)
        provs = tuple(iv.prov for iv in ivals)
        sig = functions.lookup(term.fn)
        if sig is None:
            raise EvalError("undeclared function %s" % term.fn)
        if sig.evaluator == EVAL_BUILTIN:
            out = _apply_builtin(term.fn, vals)
        elif sig.evaluator == EVAL_CAMERA:
            out = TRUE if _recognize(vals[0], camera_tag(term.fn), cameras) \
                else FALSE
        else:
            out = Rec(term.fn, vals, label)
        return IVal(out, FunNode(term.fn, label, provs))
    if isinstance(term, EncTerm):
        ivals = tuple(eval_term(a, store, label, functions, cameras)
                      for a in term.args)
        return IVal(
            Cipher(tuple(iv.value for iv in ivals), term.key),
            EncNode(label, tuple(iv.prov for iv in ivals), term.key))
    raise TypeError(term)


# ---------------------------------------------------------------------------
# runtime process forms
# ---------------------------------------------------------------------------

@cached_hash
@dataclass(frozen=True)
class POutV:
    """An evaluated output waiting for its remaining targets to take it."""
    ivals: Tuple[IVal, ...]
    targets: Tuple[str, ...]
    cont: Process


RtProcess = Union[Process, POutV]


@cached_hash
@dataclass(frozen=True)
class Closure:
    binder: object   # PIter | SIter | AIter
    env: "Env"


Env = Tuple[Tuple[str, Closure], ...]


def _env_lookup(env: Env, name: str) -> Optional[Closure]:
    for n, c in reversed(env):
        if n == name:
            return c
    return None


@cached_hash
@dataclass(frozen=True)
class ProcState:
    proc: RtProcess
    env: Env = ()


@cached_hash
@dataclass(frozen=True)
class SensorState:
    sensor: int
    body: SensorBody
    env: Env = ()
    cursor: int = 0


@cached_hash
@dataclass(frozen=True)
class ActuatorState:
    actuator: int
    body: ActuatorBody
    env: Env = ()


def normalize_proc(ps: ProcState) -> ProcState:
    """Unfold mu-binders and calls until a real prefix (or nil) is on top.
    A recursion that never reaches a prefix is indistinguishable from nil,
    so it normalises to nil when the fuel runs out."""
    proc, env = ps.proc, ps.env
    for _ in range(_UNFOLD_FUEL):
        if isinstance(proc, PIter):
            env = env + ((proc.var, Closure(proc, env)),)
            proc = proc.body
        elif isinstance(proc, PCall):
            cl = _env_lookup(env, proc.var)
            if cl is None:
                return ProcState(PNil(), ())
            env = cl.env + ((cl.binder.var, cl),)
            proc = cl.binder.body
        elif isinstance(proc, POutV) and not proc.targets:
            proc = proc.cont
        else:
            return ProcState(proc, env)
    return ProcState(PNil(), ())


def normalize_sensor(ss: SensorState) -> SensorState:
    body, env = ss.body, ss.env
    for _ in range(_UNFOLD_FUEL):
        if isinstance(body, SIter):
            env = env + ((body.var, Closure(body, env)),)
            body = body.body
        elif isinstance(body, SCall):
            cl = _env_lookup(env, body.var)
            if cl is None:
                return SensorState(ss.sensor, SNil(), (), ss.cursor)
            env = cl.env + ((cl.binder.var, cl),)
            body = cl.binder.body
        else:
            return SensorState(ss.sensor, body, env, ss.cursor)
    return SensorState(ss.sensor, SNil(), (), ss.cursor)


def normalize_actuator(acts: ActuatorState) -> ActuatorState:
    body, env = acts.body, acts.env
    for _ in range(_UNFOLD_FUEL):
        if isinstance(body, AIter):
            env = env + ((body.var, Closure(body, env)),)
            body = body.body
        elif isinstance(body, ACall):
            cl = _env_lookup(env, body.var)
            if cl is None:
                return ActuatorState(acts.actuator, ANil(), ())
            env = cl.env + ((cl.binder.var, cl),)
            body = cl.binder.body
        else:
            return ActuatorState(acts.actuator, body, env)
    return ActuatorState(acts.actuator, ANil(), ())


# ---------------------------------------------------------------------------
# configurations
# ---------------------------------------------------------------------------

@cached_hash
@dataclass(frozen=True)
class NodeState:
    label: str
    store: Tuple[Tuple[Union[str, int], IVal], ...]   # sorted by key kind+name
    procs: Tuple[ProcState, ...]
    sensors: Tuple[SensorState, ...]
    actuators: Tuple[ActuatorState, ...]

    def store_map(self) -> Dict[Union[str, int], IVal]:
        return dict(self.store)


@cached_hash
@dataclass(frozen=True)
class Config:
    nodes: Tuple[NodeState, ...]

    def node(self, label: str) -> NodeState:
        for n in self.nodes:
            if n.label == label:
                return n
        raise KeyError(label)


def _store_key(loc: Union[str, int]) -> Tuple[int, str]:
    return (0, "%09d" % loc) if isinstance(loc, int) else (1, loc)


def _freeze_store(d: Dict[Union[str, int], IVal]) -> Tuple[Tuple[Union[str, int], IVal], ...]:
    return tuple(sorted(d.items(), key=lambda kv: _store_key(kv[0])))


def _tidy_procs(procs: Iterable[ProcState]) -> Tuple[ProcState, ...]:
    out = []
    for ps in procs:
        ps = normalize_proc(ps)
        if isinstance(ps.proc, PNil):
            continue
        out.append(ps)
    return tuple(out)


def initial_config(system: System) -> Config:
    nodes = []
    for nd in system.nodes:
        # variables stay absent until first written; sensor slots always
        # hold a reading (an arbitrary one before the first probe)
        store: Dict[Union[str, int], IVal] = {}
        for i, _ in nd.sensors:
            store[i] = IVal(UNDEF, SensorLeaf(i, nd.label))
        sensors = tuple(normalize_sensor(SensorState(i, body))
                        for i, body in nd.sensors)
        actuators = tuple(normalize_actuator(ActuatorState(j, body))
                          for j, body in nd.actuators)
        procs = _tidy_procs(ProcState(p) for p in nd.procs)
        nodes.append(NodeState(nd.label, _freeze_store(store), procs,
                               sensors, actuators))
    return Config(tuple(nodes))


# ---------------------------------------------------------------------------
# trace events
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceEvent:
    kind: str
    fields: Tuple[Tuple[str, object], ...]

    def get(self, name: str):
        for k, v in self.fields:
            if k == name:
                return v
        raise KeyError(name)

    def to_json(self):
        out: Dict[str, object] = {"kind": self.kind}
        for k, v in self.fields:
            if isinstance(v, IVal):
                out[k] = ival_to_json(v)
            elif isinstance(v, tuple) and v and all(isinstance(x, IVal) for x in v):
                out[k] = [ival_to_json(x) for x in v]
            elif isinstance(v, tuple) and v and all(
                    isinstance(x, tuple) and len(x) == 2 and isinstance(x[1], IVal)
                    for x in v):
                out[k] = {name: ival_to_json(iv) for name, iv in v}
            elif isinstance(v, tuple):
                out[k] = list(v)
            else:
                out[k] = v
        return out


def _ev(kind: str, **fields) -> TraceEvent:
    return TraceEvent(kind, tuple(fields.items()))


# ---------------------------------------------------------------------------
# redexes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Redex:
    rule: str                       # EvOut | Deliver | Assign | Cond | ...
    label: str                      # node performing the step
    slot: int                       # proc index, sensor id or actuator id
    peer: Optional[str] = None      # Deliver: receiving node
    peer_slot: int = -1             # Deliver: receiving proc index; ActCmd: actuator

    def describe(self) -> str:
        if self.rule == "Deliver":
            return "Deliver %s[%d] -> %s[%d]" % (self.label, self.slot,
                                                 self.peer, self.peer_slot)
        if self.rule == "ActCmd":
            return "ActCmd %s[%d] actuator %d" % (self.label, self.slot,
                                                  self.peer_slot)
        return "%s %s[%d]" % (self.rule, self.label, self.slot)


def _script_for(system: System, label: str, sensor: int) -> Script:
    sc = system.script_map().get((label, sensor))
    if sc is None:
        sc = Script((0,), "cycle")
    return sc


def _script_value(script: Script, cursor: int) -> Optional[LitValue]:
    vals = script.values
    if not vals:
        return None
    if script.mode == "cycle":
        return vals[cursor % len(vals)]
    if script.mode == "hold":
        return vals[min(cursor, len(vals) - 1)]
    # stuck: exhausted scripts stop producing
    if cursor < len(vals):
        return vals[cursor]
    return None


def _all_evaluable(terms: Sequence[Term], store: Dict[Union[str, int], IVal],
                   label: str, functions: FunctionTable,
                   cameras: FrozenSet[str]) -> bool:
    try:
        for t in terms:
            eval_term(t, store, label, functions, cameras)
    except EvalError:
        return False
    return True


def _match_prefix(match: Tuple[Term, ...], ivals: Tuple[IVal, ...],
                  store: Dict[Union[str, int], IVal], label: str,
                  functions: FunctionTable,
                  cameras: FrozenSet[str]) -> bool:
    """First-j matching compares plain values, never provenance."""
    for m, iv in zip(match, ivals):
        try:
            mv = eval_term(m, store, label, functions, cameras)
        except EvalError:
            return False
        if mv.value != iv.value:
            return False
    return True


def enabled(config: Config, system: System) -> List[Redex]:
    """All redexes of the configuration, in a fixed deterministic order."""
    out: List[Redex] = []
    fns = system.functions
    cams = frozenset(system.cameras)
    for node in config.nodes:
        store = node.store_map()
        for p, ps in enumerate(node.procs):
            proc = ps.proc
            if isinstance(proc, POut):
                if _all_evaluable(proc.terms, store, node.label, fns, cams):
                    out.append(Redex("EvOut", node.label, p))
            elif isinstance(proc, POutV):
                r = len(proc.ivals)
                for tgt in proc.targets:
                    if not system.comp.allows(node.label, tgt):
                        continue
                    try:
                        peer = config.node(tgt)
                    except KeyError:
                        continue
                    for q, qs in enumerate(peer.procs):
                        if node.label == tgt and q == p:
                            continue
                        qproc = qs.proc
                        if not isinstance(qproc, PIn):
                            continue
                        if len(qproc.match) + len(qproc.binders) != r:
                            continue
                        if not _match_prefix(qproc.match, proc.ivals,
                                             peer.store_map(), tgt, fns, cams):
                            continue
                        out.append(Redex("Deliver", node.label, p, tgt, q))
            elif isinstance(proc, PAssign):
                if _all_evaluable((proc.term,), store, node.label, fns, cams):
                    out.append(Redex("Assign", node.label, p))
            elif isinstance(proc, PCond):
                if _all_evaluable((proc.guard,), store, node.label, fns, cams):
                    out.append(Redex("Cond", node.label, p))
            elif isinstance(proc, PActCmd):
                for a in node.actuators:
                    if a.actuator != proc.actuator:
                        continue
                    if isinstance(a.body, AAwait) and proc.action in a.body.actions:
                        out.append(Redex("ActCmd", node.label, p,
                                         peer_slot=proc.actuator))
            elif isinstance(proc, PDecrypt):
                try:
                    subject = eval_term(proc.subject, store, node.label, fns, cams)
                except EvalError:
                    continue
                v = subject.value
                if not isinstance(v, Cipher) or v.key != proc.key:
                    continue
                if len(v.args) != len(proc.match) + len(proc.binders):
                    continue
                j = len(proc.match)
                ok = True
                for m, cv in zip(proc.match, v.args[:j]):
                    try:
                        mv = eval_term(m, store, node.label, fns, cams)
                    except EvalError:
                        ok = False
                        break
                    if mv.value != cv:
                        ok = False
                        break
                if ok:
                    out.append(Redex("Decrypt", node.label, p))
        for s in node.sensors:
            if isinstance(s.body, SProbe):
                script = _script_for(system, node.label, s.sensor)
                if _script_value(script, s.cursor) is not None:
                    out.append(Redex("Probe", node.label, s.sensor))
            elif isinstance(s.body, STau):
                out.append(Redex("TauS", node.label, s.sensor))
        for a in node.actuators:
            if isinstance(a.body, ATau):
                out.append(Redex("TauA", node.label, a.actuator))
            elif isinstance(a.body, ADo):
                out.append(Redex("Act", node.label, a.actuator))
    return out


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

def _replace_node(config: Config, new_node: NodeState) -> Config:
    return Config(tuple(new_node if n.label == new_node.label else n
                        for n in config.nodes))


def _with_proc(node: NodeState, idx: int, ps: ProcState) -> NodeState:
    procs = list(node.procs)
    procs[idx] = ps
    return NodeState(node.label, node.store, _tidy_procs(procs),
                     node.sensors, node.actuators)


def step(config: Config, system: System, redex: Redex) -> Tuple[Config, List[TraceEvent]]:
    fns = system.functions
    cams = frozenset(system.cameras)
    node = config.node(redex.label)
    store = node.store_map()
    events: List[TraceEvent] = []

    if redex.rule == "EvOut":
        ps = node.procs[redex.slot]
        proc = ps.proc
        assert isinstance(proc, POut)
        ivals = []
        for t in proc.terms:
            iv = eval_term(t, store, node.label, fns, cams)
            events.append(_ev("Evaluated", label=node.label,
                              source=term_to_source(t), result=iv))
            ivals.append(iv)
        events.append(_ev("MsgSent", sender=node.label,
                          values=tuple(ivals), targets=proc.targets))
        new_ps = ProcState(POutV(tuple(ivals), proc.targets, proc.cont), ps.env)
        return _replace_node(config, _with_proc(node, redex.slot, new_ps)), events

    if redex.rule == "Deliver":
        ps = node.procs[redex.slot]
        proc = ps.proc
        assert isinstance(proc, POutV) and redex.peer is not None
        peer = config.node(redex.peer)
        qs = peer.procs[redex.peer_slot]
        qproc = qs.proc
        assert isinstance(qproc, PIn)
        j = len(qproc.match)
        bindings = tuple(zip(qproc.binders, proc.ivals[j:]))
        new_targets = tuple(t for t in proc.targets if t != redex.peer)
        new_sender_ps = ProcState(POutV(proc.ivals, new_targets, proc.cont), ps.env)
        events.append(_ev("MsgDelivered", sender=node.label, receiver=redex.peer,
                          values=proc.ivals, bindings=bindings))
        if node.label == redex.peer:
            # self-delivery touches one node twice
            peer_store = store
            for name, iv in bindings:
                peer_store[name] = iv
            procs = list(node.procs)
            procs[redex.slot] = new_sender_ps
            procs[redex.peer_slot] = ProcState(qproc.cont, qs.env)
            new_node = NodeState(node.label, _freeze_store(peer_store),
                                 _tidy_procs(procs),
                                 node.sensors, node.actuators)
            return _replace_node(config, new_node), events
        peer_store = peer.store_map()
        for name, iv in bindings:
            peer_store[name] = iv
        new_peer = NodeState(peer.label, _freeze_store(peer_store),
                             _tidy_procs(
                                 [ProcState(qproc.cont, qs.env) if q == redex.peer_slot else x
                                  for q, x in enumerate(peer.procs)]),
                             peer.sensors, peer.actuators)
        cfg = _replace_node(config, _with_proc(node, redex.slot, new_sender_ps))
        return _replace_node(cfg, new_peer), events

    if redex.rule == "Assign":
        ps = node.procs[redex.slot]
        proc = ps.proc
        assert isinstance(proc, PAssign)
        iv = eval_term(proc.term, store, node.label, fns, cams)
        events.append(_ev("Evaluated", label=node.label,
                          source=term_to_source(proc.term), result=iv))
        events.append(_ev("Assigned", label=node.label, var=proc.var, value=iv))
        store[proc.var] = iv
        new_node = NodeState(node.label, _freeze_store(store),
                             _tidy_procs(
                                 [ProcState(proc.cont, ps.env) if q == redex.slot else x
                                  for q, x in enumerate(node.procs)]),
                             node.sensors, node.actuators)
        return _replace_node(config, new_node), events

    if redex.rule == "Cond":
        ps = node.procs[redex.slot]
        proc = ps.proc
        assert isinstance(proc, PCond)
        iv = eval_term(proc.guard, store, node.label, fns, cams)
        taken = _truthy(iv.value)
        events.append(_ev("Evaluated", label=node.label,
                          source=term_to_source(proc.guard), result=iv))
        events.append(_ev("CondTaken", label=node.label,
                          branch="then" if taken else "else"))
        new_ps = ProcState(proc.then if taken else proc.els, ps.env)
        return _replace_node(config, _with_proc(node, redex.slot, new_ps)), events

    if redex.rule == "Decrypt":
        ps = node.procs[redex.slot]
        proc = ps.proc
        assert isinstance(proc, PDecrypt)
        subject = eval_term(proc.subject, store, node.label, fns, cams)
        v = subject.value
        assert isinstance(v, Cipher)
        prov = subject.prov
        if not isinstance(prov, EncNode) or len(prov.args) != len(v.args):
            raise EvalError("ciphertext with inconsistent provenance")
        j = len(proc.match)
        bindings = tuple(
            (name, IVal(v.args[j + k], prov.args[j + k]))
            for k, name in enumerate(proc.binders))
        events.append(_ev("Evaluated", label=node.label,
                          source=term_to_source(proc.subject), result=subject))
        events.append(_ev("Decrypted", label=node.label, key=proc.key,
                          bindings=bindings))
        for name, iv in bindings:
            store[name] = iv
        new_node = NodeState(node.label, _freeze_store(store),
                             _tidy_procs(
                                 [ProcState(proc.cont, ps.env) if q == redex.slot else x
                                  for q, x in enumerate(node.procs)]),
                             node.sensors, node.actuators)
        return _replace_node(config, new_node), events

    if redex.rule == "ActCmd":
        ps = node.procs[redex.slot]
        proc = ps.proc
        assert isinstance(proc, PActCmd)
        new_acts = []
        fired = False
        for a in node.actuators:
            if not fired and a.actuator == proc.actuator \
                    and isinstance(a.body, AAwait) and proc.action in a.body.actions:
                new_acts.append(normalize_actuator(
                    ActuatorState(a.actuator, ADo(proc.action, a.body.cont), a.env)))
                fired = True
            else:
                new_acts.append(a)
        assert fired
        events.append(_ev("ActuatorCmd", label=node.label,
                          actuator=proc.actuator, action=proc.action))
        new_node = NodeState(node.label, node.store,
                             _tidy_procs(
                                 [ProcState(proc.cont, ps.env) if q == redex.slot else x
                                  for q, x in enumerate(node.procs)]),
                             node.sensors, tuple(new_acts))
        return _replace_node(config, new_node), events

    if redex.rule == "Act":
        new_acts = []
        for a in node.actuators:
            if a.actuator == redex.slot and isinstance(a.body, ADo):
                events.append(_ev("ActuatorDid", label=node.label,
                                  actuator=a.actuator, action=a.body.action))
                new_acts.append(normalize_actuator(
                    ActuatorState(a.actuator, a.body.cont, a.env)))
            else:
                new_acts.append(a)
        new_node = NodeState(node.label, node.store, node.procs,
                             node.sensors, tuple(new_acts))
        return _replace_node(config, new_node), events

    if redex.rule == "Probe":
        new_sensors = []
        for s in node.sensors:
            if s.sensor == redex.slot and isinstance(s.body, SProbe):
                script = _script_for(system, node.label, s.sensor)
                v = _script_value(script, s.cursor)
                assert v is not None
                iv = IVal(v, SensorLeaf(s.sensor, node.label))
                events.append(_ev("SensorRead", label=node.label,
                                  sensor=s.sensor, value=iv))
                store[s.sensor] = iv
                cursor = s.cursor + 1
                if script.mode == "cycle" and script.values:
                    cursor %= len(script.values)
                elif cursor > len(script.values):
                    cursor = len(script.values)
                new_sensors.append(normalize_sensor(
                    SensorState(s.sensor, s.body.cont, s.env, cursor)))
            else:
                new_sensors.append(s)
        new_node = NodeState(node.label, _freeze_store(store), node.procs,
                             tuple(new_sensors), node.actuators)
        return _replace_node(config, new_node), events

    if redex.rule == "TauS":
        new_sensors = []
        for s in node.sensors:
            if s.sensor == redex.slot and isinstance(s.body, STau):
                events.append(_ev("Tau", label=node.label, unit="sensor",
                                  ident=s.sensor))
                new_sensors.append(normalize_sensor(
                    SensorState(s.sensor, s.body.cont, s.env, s.cursor)))
            else:
                new_sensors.append(s)
        new_node = NodeState(node.label, node.store, node.procs,
                             tuple(new_sensors), node.actuators)
        return _replace_node(config, new_node), events

    if redex.rule == "TauA":
        new_acts = []
        for a in node.actuators:
            if a.actuator == redex.slot and isinstance(a.body, ATau):
                events.append(_ev("Tau", label=node.label, unit="actuator",
                                  ident=a.actuator))
                new_acts.append(normalize_actuator(
                    ActuatorState(a.actuator, a.body.cont, a.env)))
            else:
                new_acts.append(a)
        new_node = NodeState(node.label, node.store, node.procs,
                             node.sensors, tuple(new_acts))
        return _replace_node(config, new_node), events

    raise ValueError("unknown rule %s" % redex.rule)


# ---------------------------------------------------------------------------
# schedulers
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    final: Config
    steps: int
    terminal: bool
    trace: List[Tuple[int, str, List[TraceEvent]]]
    configs: Optional[List[Config]] = None


def run(system: System, seed: int = 0, max_steps: int = 1000,
        phys: bool = False, collect: bool = False) -> RunResult:
    """Random scheduling with a seeded generator; reruns with the same seed
    take the same schedule. With collect=True the result also carries every
    configuration the run passed through, initial one included."""
    import random
    rng = random.Random(seed)
    config = initial_config(system)
    trace: List[Tuple[int, str, List[TraceEvent]]] = []
    configs: Optional[List[Config]] = [config] if collect else None
    steps = 0
    while steps < max_steps:
        redexes = enabled(config, system)
        if not redexes:
            return RunResult(config, steps, True, trace, configs)
        redex = redexes[rng.randrange(len(redexes))]
        config, events = step(config, system, redex)
        if phys:
            config = _advance_environment(config, system, redex)
        trace.append((steps, redex.describe(), events))
        if configs is not None:
            configs.append(config)
        steps += 1
    return RunResult(config, steps, not enabled(config, system), trace, configs)


def _advance_environment(config: Config, system: System, fired: Redex) -> Config:
    """Optional environment drift: scripted readings move on even when not
    sampled, except for the sensor that just fired."""
    new_nodes = []
    for node in config.nodes:
        new_sensors = []
        changed = False
        for s in node.sensors:
            if fired.rule == "Probe" and fired.label == node.label \
                    and fired.slot == s.sensor:
                new_sensors.append(s)
                continue
            script = _script_for(system, node.label, s.sensor)
            if not script.values:
                new_sensors.append(s)
                continue
            cursor = s.cursor + 1
            if script.mode == "cycle":
                cursor %= len(script.values)
            elif cursor > len(script.values):
                cursor = len(script.values)
            if cursor != s.cursor:
                changed = True
                new_sensors.append(SensorState(s.sensor, s.body, s.env, cursor))
            else:
                new_sensors.append(s)
        if changed:
            new_nodes.append(NodeState(node.label, node.store, node.procs,
                                       tuple(new_sensors), node.actuators))
        else:
            new_nodes.append(node)
    return Config(tuple(new_nodes))


@dataclass
class ExploreResult:
    states: Set[Config]
    terminals: Set[Config]
    complete: bool
    max_depth_reached: int


def explore(system: System, max_depth: int = 50, cap: int = 100_000) -> ExploreResult:
    """Breadth-first reachability with deduplication."""
    init = initial_config(system)
    seen: Set[Config] = {init}
    terminals: Set[Config] = set()
    frontier = [init]
    depth = 0
    complete = True
    while frontier and depth < max_depth:
        nxt: List[Config] = []
        for cfg in frontier:
            redexes = enabled(cfg, system)
            if not redexes:
                terminals.add(cfg)
                continue
            for r in redexes:
                cfg2, _ = step(cfg, system, r)
                if cfg2 not in seen:
                    if len(seen) >= cap:
                        complete = False
                        continue
                    seen.add(cfg2)
                    nxt.append(cfg2)
        frontier = nxt
        depth += 1
    if frontier:
        complete = False
        for cfg in frontier:
            if not enabled(cfg, system):
                terminals.add(cfg)
    return ExploreResult(seen, terminals, complete, depth)


# ---------------------------------------------------------------------------
# trace export and audits
# ---------------------------------------------------------------------------

def trace_to_jsonl(result: RunResult) -> str:
    lines = []
    for step_idx, descr, events in result.trace:
        for ev in events:
            row = {"step": step_idx, "rule": descr}
            row.update(ev.to_json())
            lines.append(json.dumps(row, sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")


def iter_store_entries(config: Config) -> Iterator[Tuple[str, Union[str, int], IVal]]:
    for node in config.nodes:
        for loc, iv in node.store:
            yield node.label, loc, iv


def _binder_source(binder) -> str:
    if isinstance(binder, (PIter, PNil, POut, PIn, PCond, PAssign, PActCmd,
                           PDecrypt, PCall)):
        return process_to_source(binder)
    if isinstance(binder, (SIter, SNil, STau, SProbe, SCall)):
        return sensor_to_source(binder)
    return actuator_to_source(binder)


def _env_json(env: Env) -> list:
    return [{"name": n, "binder": _binder_source(c.binder),
             "env": _env_json(c.env)} for n, c in env]


def config_to_json(config: Config) -> dict:
    """Canonical JSON form of a configuration. Everything underneath is a
    tuple in a fixed order (stores are kept sorted), so serializing with
    sort_keys gives bytes that are stable across runs and processes."""
    nodes = []
    for node in config.nodes:
        procs = []
        for ps in node.procs:
            if isinstance(ps.proc, POutV):
                procs.append({
                    "pending": [ival_to_json(iv) for iv in ps.proc.ivals],
                    "targets": list(ps.proc.targets),
                    "cont": process_to_source(ps.proc.cont),
                    "env": _env_json(ps.env),
                })
            else:
                procs.append({"proc": process_to_source(ps.proc),
                              "env": _env_json(ps.env)})
        nodes.append({
            "label": node.label,
            "store": [{"loc": loc if isinstance(loc, str) else "#%d" % loc,
                       **ival_to_json(iv)} for loc, iv in node.store],
            "procs": procs,
            "sensors": [{"sensor": s.sensor, "body": sensor_to_source(s.body),
                         "cursor": s.cursor, "env": _env_json(s.env)}
                        for s in node.sensors],
            "actuators": [{"actuator": a.actuator,
                           "body": actuator_to_source(a.body),
                           "env": _env_json(a.env)}
                          for a in node.actuators],
        })
    return {"nodes": nodes}


def iter_inflight(config: Config) -> Iterator[Tuple[str, Tuple[IVal, ...], Tuple[str, ...]]]:
    """Messages evaluated but not yet taken by every target."""
    for node in config.nodes:
        for ps in node.procs:
            if isinstance(ps.proc, POutV) and ps.proc.targets:
                yield node.label, ps.proc.ivals, ps.proc.targets

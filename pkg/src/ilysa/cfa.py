"""Flow analysis over tree-grammar abstractions.

The analysis computes, without running the system, a sound overapproximation
of everything the semantics can produce:

  sigma  per node and store location, the values that may sit there;
  kappa  per receiving node, the messages (sender plus one value set per
         position) that may reach it;
  theta  per node, every value its terms may evaluate to;
  alpha  per node and actuator, the actions it may be commanded to do.

Abstract values are nonterminals of one shared regular tree grammar whose
language contains the provenance trees the semantics builds (see treegram).
Each terminal symbol has exactly one nonterminal, so solver state is plain
sets of nonterminals and the grammar grows monotonically; the fixpoint
exists and is reached by iterating the clauses until nothing changes.

`solve` produces the least estimate. `check_estimate` is the independent
validator: it re-derives every obligation from the system text and verifies
a frozen estimate against them, so it also accepts hand-built or joined
estimates. Estimates form a lattice under `estimate_join` / `estimate_meet`
with order `estimate_leq`; checker-valid estimates are closed under meet,
which the property tests rely on.

Two deliberate deviations from a naive reading of message flow:

  * function applications expose their arguments in the result set, except
    for functions declared sealed (and encryption, which always seals);
  * messages only register at receivers the link relation allows.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import (Callable, Dict, FrozenSet, Iterable, List, Optional,
                    Sequence, Set, Tuple, Union)

from .treegram import (
    Atom, LitValue,
    SensorSym, ValueSym, FunSym, EncSym, KeySym, Symbol,
    NonTerminal, nt, variant_nt, enc_head, Production, leaf_production,
    ProductionTable,
    AbstractValue, lang_member,
    SensorLeaf, ValueLeaf, FunNode, EncNode, ProvTree,
)
from .syntax import (
    Lit, SensorLoc, Var, App, EncTerm, Term,
    PNil, POut, PIn, PCond, PAssign, PActCmd, PDecrypt, PIter, PCall, Process,
    AAwait, ADo, ATau, AIter, ActuatorBody,
    System, NodeDef, EVAL_BUILTIN,
)
from .semantics import Config, IVal, iter_store_entries, iter_inflight

Loc = Union[str, int]


# ---------------------------------------------------------------------------
# frozen estimates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KappaEntry:
    sender: str
    positions: Tuple[FrozenSet[NonTerminal], ...]

    def signature(self) -> Tuple[str, Tuple[Tuple[str, ...], ...]]:
        return (self.sender,
                tuple(tuple(sorted(n.name for n in pos)) for pos in self.positions))


class Estimate:
    """An analysis result: one grammar plus the four components."""

    def __init__(self,
                 table: ProductionTable,
                 sigma: Dict[str, Dict[Loc, FrozenSet[NonTerminal]]],
                 kappa: Dict[str, Tuple[KappaEntry, ...]],
                 theta: Dict[str, FrozenSet[NonTerminal]],
                 alpha: Dict[Tuple[str, int], FrozenSet[str]],
                 strict: bool = False):
        self.table = table
        self.sigma = sigma
        self.kappa = kappa
        self.theta = theta
        self.alpha = alpha
        self.strict = strict

    # -- lookups -------------------------------------------------------------

    def av(self, start: NonTerminal) -> AbstractValue:
        return AbstractValue(start, self.table)

    def avs(self, starts: Iterable[NonTerminal]) -> FrozenSet[AbstractValue]:
        return frozenset(AbstractValue(s, self.table) for s in starts)

    def sigma_starts(self, label: str, loc: Loc) -> FrozenSet[NonTerminal]:
        return self.sigma.get(label, {}).get(loc, frozenset())

    def sigma_avs(self, label: str, loc: Loc) -> FrozenSet[AbstractValue]:
        return self.avs(self.sigma_starts(label, loc))

    def kappa_entries(self, label: str) -> Tuple[KappaEntry, ...]:
        return self.kappa.get(label, ())

    def theta_avs(self, label: str) -> FrozenSet[AbstractValue]:
        return self.avs(self.theta.get(label, frozenset()))

    def alpha_actions(self, label: str, actuator: int) -> FrozenSet[str]:
        return self.alpha.get((label, actuator), frozenset())

    # -- serialization ---------------------------------------------------------

    def to_json(self) -> dict:
        def locname(loc: Loc) -> str:
            return "#%d" % loc if isinstance(loc, int) else loc

        return {
            "strict": self.strict,
            "productions": self.table.to_json(),
            "sigma": {
                label: {locname(loc): sorted(n.name for n in starts)
                        for loc, starts in locs.items()}
                for label, locs in self.sigma.items()
            },
            "kappa": {
                label: [[e.sender] + [sorted(n.name for n in pos)
                                      for pos in e.positions]
                        for e in sorted(entries, key=lambda e: e.signature())]
                for label, entries in self.kappa.items()
            },
            "theta": {label: sorted(n.name for n in starts)
                      for label, starts in self.theta.items()},
            "alpha": {"%s/%d" % (label, j): sorted(actions)
                      for (label, j), actions in self.alpha.items()},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, obj: dict) -> "Estimate":
        def parse_loc(s: str) -> Loc:
            return int(s[1:]) if s.startswith("#") else s

        def parse_start(name: str) -> NonTerminal:
            return NonTerminal(name)

        table = ProductionTable.from_json(obj["productions"])
        sigma = {
            label: {parse_loc(ls): frozenset(parse_start(n) for n in names)
                    for ls, names in locs.items()}
            for label, locs in obj["sigma"].items()
        }
        kappa = {}
        for label, rows in obj["kappa"].items():
            entries = []
            for row in rows:
                sender = row[0]
                positions = tuple(frozenset(parse_start(n) for n in names)
                                  for names in row[1:])
                entries.append(KappaEntry(sender, positions))
            kappa[label] = tuple(entries)
        theta = {label: frozenset(parse_start(n) for n in names)
                 for label, names in obj["theta"].items()}
        alpha = {}
        for key, actions in obj["alpha"].items():
            label, _, j = key.rpartition("/")
            alpha[(label, int(j))] = frozenset(actions)
        return cls(table, sigma, kappa, theta, alpha, obj.get("strict", False))

    @classmethod
    def loads(cls, text: str) -> "Estimate":
        return cls.from_json(json.loads(text))


# ---------------------------------------------------------------------------
# the solver
# ---------------------------------------------------------------------------

class _Slot:
    """Mutable set of nonterminals for one term occurrence."""
    __slots__ = ("nts",)

    def __init__(self):
        self.nts: Set[NonTerminal] = set()

    def add_all(self, more: Iterable[NonTerminal]) -> bool:
        before = len(self.nts)
        self.nts.update(more)
        return len(self.nts) != before


class _Guard:
    """Whether clauses below an input or decryption prefix are active.

    Input guards consult the message entries of their own node, whose
    producing outputs may themselves sit below input guards, so activity is
    a least fixpoint: the solver cuts cyclic justifications to False (an
    output that is only ever enabled by its own effects never fires)."""

    def active(self) -> bool:
        raise NotImplementedError


class _Always(_Guard):
    def active(self) -> bool:
        return True


class _InGuard(_Guard):
    def __init__(self, parent: _Guard, solver: "_Solver", label: str, arity: int):
        self.parent = parent
        self.solver = solver
        self.label = label
        self.arity = arity

    def active(self) -> bool:
        return self.parent.active() and any(
            len(e) == self.arity
            for e in self.solver.kappa_rows(self.label))


class _DecGuard(_Guard):
    def __init__(self, parent: _Guard, solver: "_Solver", slot: _Slot,
                 key: str, arity: int):
        self.parent = parent
        self.solver = solver
        self.slot = slot
        self.key = key
        self.arity = arity

    def active(self) -> bool:
        if not self.parent.active():
            return False
        return bool(self.solver.enc_productions(self.slot, self.key, self.arity))


class _Solver:
    def __init__(self, system: System, strict: bool = False):
        self.system = system
        self.strict = strict
        self.table = ProductionTable()
        self.sigma: Dict[Tuple[str, Loc], Set[NonTerminal]] = {}
        # receiver -> site key -> (sender, [slot per position])
        self.kappa: Dict[str, Dict[Tuple[str, int], Tuple[str, List[_Slot], _Guard]]] = {}
        self.alpha: Dict[Tuple[str, int], Set[str]] = {}
        self.slots: List[Tuple[str, _Slot]] = []   # (label, slot) for theta
        self.clauses: List[Callable[[], bool]] = []
        self._site_counter = 0
        self._active_stack: Set[int] = set()

    # -- state access shared with guards --------------------------------------

    def guard_active(self, guard: _Guard) -> bool:
        """active() with cyclic justifications cut to False (see _Guard)."""
        gid = id(guard)
        if gid in self._active_stack:
            return False
        self._active_stack.add(gid)
        try:
            return guard.active()
        finally:
            self._active_stack.discard(gid)

    def kappa_rows(self, label: str) -> List[Tuple[FrozenSet[NonTerminal], ...]]:
        """Entries a receiver can currently get, as position tuples. An entry
        counts only when its output is active and every position has at least
        one value; with an unfillable position no tuple is ever sendable."""
        rows = []
        for sender, slots, guard in self.kappa.get(label, {}).values():
            if self.guard_active(guard) and all(s.nts for s in slots):
                rows.append(tuple(frozenset(s.nts) for s in slots))
        return rows

    def enc_productions(self, slot: _Slot, key: str, arity: int) -> List[Production]:
        out = []
        for head in slot.nts:
            for p in self.table.productions_of(head):
                if not isinstance(p.root, EncSym) or p.root.arity != arity:
                    continue
                key_head = p.children[-1]
                if any(q.root == KeySym(key)
                       for q in self.table.productions_of(key_head)):
                    out.append(p)
        return out

    # -- constraint generation --------------------------------------------------

    def seed(self) -> None:
        """Sensor slots always hold a reading, so they are prefilled; plain
        variables accumulate only what the process actually writes."""
        for node in self.system.nodes:
            for v in node.variables:
                self.sigma.setdefault((node.label, v), set())
            for i, _ in node.sensors:
                self.table.add(leaf_production(SensorSym(i, node.label)))
                self.sigma.setdefault((node.label, i), set()).add(
                    nt(SensorSym(i, node.label)))

    def gen_term(self, term: Term, label: str, guard: _Guard) -> _Slot:
        slot = _Slot()
        self.slots.append((label, slot))
        if isinstance(term, Lit):
            sym = ValueSym(term.value, label)

            def lit() -> bool:
                if not guard.active():
                    return False
                changed = self.table.add(leaf_production(sym))
                if slot.add_all((nt(sym),)):
                    changed = True
                return changed

            self.clauses.append(lit)
            return slot
        if isinstance(term, (SensorLoc, Var)):
            loc: Loc = term.sensor if isinstance(term, SensorLoc) else term.name
            cell = self.sigma.setdefault((label, loc), set())

            def flow() -> bool:
                if not guard.active():
                    return False
                return slot.add_all(cell)

            self.clauses.append(flow)
            return slot
        if isinstance(term, App):
            children = [self.gen_term(a, label, guard) for a in term.args]
            sym = FunSym(term.fn, len(term.args), label)
            head = nt(sym)
            sig = self.system.functions.lookup(term.fn)
            sealed = bool(sig and sig.sealed)

            def build() -> bool:
                if not guard.active():
                    return False
                changed = False
                for combo in itertools.product(*(sorted(c.nts, key=lambda n: n.name)
                                                 for c in children)):
                    if self.table.add(Production(sym, combo)):
                        changed = True
                if slot.add_all((head,)):
                    changed = True
                if not sealed:
                    for c in children:
                        if slot.add_all(c.nts):
                            changed = True
                return changed

            self.clauses.append(build)
            return slot
        if isinstance(term, EncTerm):
            children = [self.gen_term(a, label, guard) for a in term.args]
            sym = EncSym(len(term.args), label)
            key_sym = KeySym(term.key)
            key_head = nt(key_sym)

            def build_enc() -> bool:
                # One abstract value per argument combination, so each
                # ciphertext's language stays a single shape.
                if not guard.active():
                    return False
                changed = self.table.add(leaf_production(key_sym))
                for combo in itertools.product(*(sorted(c.nts, key=lambda n: n.name)
                                                 for c in children)):
                    full = combo + (key_head,)
                    head = enc_head(len(term.args), label, full)
                    if self.table.add(Production(sym, full, head)):
                        changed = True
                    if slot.add_all((head,)):
                        changed = True
                return changed

            self.clauses.append(build_enc)
            return slot
        raise TypeError(term)

    def gen_proc(self, proc: Process, label: str, guard: _Guard) -> None:
        if isinstance(proc, (PNil, PCall)):
            return
        if isinstance(proc, PIter):
            self.gen_proc(proc.body, label, guard)
            return
        if isinstance(proc, POut):
            slots = [self.gen_term(t, label, guard) for t in proc.terms]
            labels = set(self.system.labels())
            for tgt in proc.targets:
                if tgt not in labels or not self.system.comp.allows(label, tgt):
                    continue
                self._site_counter += 1
                site = (label, self._site_counter)
                self.kappa.setdefault(tgt, {})[site] = (label, slots, guard)
            self.gen_proc(proc.cont, label, guard)
            return
        if isinstance(proc, PIn):
            for m in proc.match:
                self.gen_term(m, label, guard)
            arity = len(proc.match) + len(proc.binders)
            j = len(proc.match)
            binders = proc.binders

            def bind() -> bool:
                if not guard.active():
                    return False
                changed = False
                for positions in self.kappa_rows(label):
                    if len(positions) != arity:
                        continue
                    for m_i, x in enumerate(binders):
                        cell = self.sigma.setdefault((label, x), set())
                        before = len(cell)
                        cell.update(positions[j + m_i])
                        if len(cell) != before:
                            changed = True
                return changed

            self.clauses.append(bind)
            self.gen_proc(proc.cont, label, _InGuard(guard, self, label, arity))
            return
        if isinstance(proc, PCond):
            self.gen_term(proc.guard, label, guard)
            self.gen_proc(proc.then, label, guard)
            self.gen_proc(proc.els, label, guard)
            return
        if isinstance(proc, PAssign):
            slot = self.gen_term(proc.term, label, guard)
            var = proc.var

            def assign() -> bool:
                if not guard.active():
                    return False
                cell = self.sigma.setdefault((label, var), set())
                before = len(cell)
                cell.update(slot.nts)
                return len(cell) != before

            self.clauses.append(assign)
            self.gen_proc(proc.cont, label, guard)
            return
        if isinstance(proc, PActCmd):
            if not self.strict:
                key = (label, proc.actuator)
                action = proc.action

                def act() -> bool:
                    if not guard.active():
                        return False
                    cell = self.alpha.setdefault(key, set())
                    if action in cell:
                        return False
                    cell.add(action)
                    return True

                self.clauses.append(act)
            self.gen_proc(proc.cont, label, guard)
            return
        if isinstance(proc, PDecrypt):
            subject = self.gen_term(proc.subject, label, guard)
            for m in proc.match:
                self.gen_term(m, label, guard)
            arity = len(proc.match) + len(proc.binders)
            j = len(proc.match)
            binders = proc.binders
            key = proc.key

            def extract() -> bool:
                if not guard.active():
                    return False
                changed = False
                for p in self.enc_productions(subject, key, arity):
                    for m_i, x in enumerate(binders):
                        cell = self.sigma.setdefault((label, x), set())
                        if p.children[j + m_i] not in cell:
                            cell.add(p.children[j + m_i])
                            changed = True
                return changed

            self.clauses.append(extract)
            self.gen_proc(proc.cont, label,
                          _DecGuard(guard, self, subject, key, arity))
            return
        raise TypeError(proc)

    def gen_actuator(self, body: ActuatorBody, label: str, actuator: int) -> None:
        """Actions written directly in an actuator body count as commandable."""
        if self.strict:
            return
        stack = [body]
        while stack:
            b = stack.pop()
            if isinstance(b, ADo):
                self.alpha.setdefault((label, actuator), set()).add(b.action)
                stack.append(b.cont)
            elif isinstance(b, (ATau, AAwait)):
                stack.append(b.cont)
            elif isinstance(b, AIter):
                stack.append(b.body)

    def solve(self) -> Estimate:
        self.seed()
        for node in self.system.nodes:
            for proc in node.procs:
                self.gen_proc(proc, node.label, _Always())
            for j, body in node.actuators:
                self.gen_actuator(body, node.label, j)
        while True:
            changed = False
            for clause in self.clauses:
                if clause():
                    changed = True
            if not changed:
                break
        return self.freeze()

    def freeze(self) -> Estimate:
        sigma: Dict[str, Dict[Loc, FrozenSet[NonTerminal]]] = {}
        for (label, loc), starts in self.sigma.items():
            sigma.setdefault(label, {})[loc] = frozenset(starts)
        kappa: Dict[str, Tuple[KappaEntry, ...]] = {}
        for label, sites in self.kappa.items():
            entries: Dict[Tuple, KappaEntry] = {}
            for sender, slots, guard in sites.values():
                if not self.guard_active(guard):
                    continue
                if any(not s.nts for s in slots):
                    # a position nobody can fill means nothing sendable
                    continue
                e = KappaEntry(sender, tuple(frozenset(s.nts) for s in slots))
                entries[e.signature()] = e
            if entries:
                kappa[label] = tuple(sorted(entries.values(),
                                            key=lambda e: e.signature()))
        theta: Dict[str, Set[NonTerminal]] = {}
        for label, slot in self.slots:
            theta.setdefault(label, set()).update(slot.nts)
        alpha = {k: frozenset(v) for k, v in self.alpha.items()}
        return Estimate(self.table, sigma, kappa,
                        {l: frozenset(s) for l, s in theta.items()},
                        alpha, self.strict)


def solve(system: System, strict: bool = False) -> Estimate:
    """Least estimate of the system."""
    return _Solver(system, strict).solve()


def solve_with_noise(system: System, noise: int, seed: int,
                     strict: bool = False) -> Estimate:
    """A deliberately non-least but still valid estimate: the solver runs
    with extra junk values seeded into randomly chosen store locations.
    Used by the lattice property tests."""
    import random
    rng = random.Random(seed)
    solver = _Solver(system, strict)
    solver.seed()
    cells = sorted(solver.sigma.keys(), key=lambda kv: (kv[0], str(kv[1])))
    for k in range(noise):
        label, loc = cells[rng.randrange(len(cells))]
        sym = ValueSym(Atom("noise%d" % k), label)
        solver.table.add(leaf_production(sym))
        solver.sigma[(label, loc)].add(nt(sym))
    for node in system.nodes:
        for proc in node.procs:
            solver.gen_proc(proc, node.label, _Always())
        for j, body in node.actuators:
            solver.gen_actuator(body, node.label, j)
    while True:
        changed = False
        for clause in solver.clauses:
            if clause():
                changed = True
        if not changed:
            break
    return solver.freeze()


# ---------------------------------------------------------------------------
# the independent checker
# ---------------------------------------------------------------------------

def check_estimate(system: System, est: Estimate) -> List[str]:
    """Validate a frozen estimate against every obligation the system text
    imposes. Returns the violations; an empty list means the estimate is
    acceptable (it need not be least)."""
    errs: List[str] = []
    table = est.table

    def has_leaf(sym: Symbol) -> bool:
        return leaf_production(sym) in table

    def theta_of(term: Term, label: str, where: str,
                 active: bool) -> Set[NonTerminal]:
        """Recompute a term's value set from the estimate. Grammar
        obligations only bind on reachable code, like the solver's guarded
        clauses, so dead continuations impose nothing."""
        if isinstance(term, Lit):
            sym = ValueSym(term.value, label)
            if active and not has_leaf(sym):
                errs.append("%s: grammar lacks literal %s" % (where, sym))
            return {nt(sym)}
        if isinstance(term, SensorLoc):
            return set(est.sigma_starts(label, term.sensor))
        if isinstance(term, Var):
            return set(est.sigma_starts(label, term.name))
        if isinstance(term, App):
            child_sets = [theta_of(a, label, where, active) for a in term.args]
            sym = FunSym(term.fn, len(term.args), label)
            if active:
                for combo in itertools.product(*(sorted(s, key=lambda n: n.name)
                                                 for s in child_sets)):
                    if Production(sym, combo) not in table:
                        errs.append("%s: grammar lacks %s over (%s)" % (
                            where, sym, ", ".join(n.name for n in combo)))
            out = {nt(sym)}
            sig = system.functions.lookup(term.fn)
            if not (sig and sig.sealed):
                for s in child_sets:
                    out |= s
            return out
        if isinstance(term, EncTerm):
            child_sets = [theta_of(a, label, where, active) for a in term.args]
            sym = EncSym(len(term.args), label)
            key_sym = KeySym(term.key)
            key_head = nt(key_sym)
            out = set()
            if active and not has_leaf(key_sym):
                errs.append("%s: grammar lacks key %s" % (where, term.key))
            for combo in itertools.product(*(sorted(s, key=lambda n: n.name)
                                             for s in child_sets)):
                full = combo + (key_head,)
                head = enc_head(len(term.args), label, full)
                out.add(head)
                if active and Production(sym, full, head) not in table:
                    errs.append("%s: grammar lacks %s over (%s)" % (
                        where, sym, ", ".join(n.name for n in combo)))
            return out
        raise TypeError(term)

    def check_theta(nts: Set[NonTerminal], label: str, where: str) -> None:
        missing = nts - set(est.theta.get(label, frozenset()))
        if missing:
            errs.append("%s: theta(%s) lacks %s" % (
                where, label, ", ".join(sorted(n.name for n in missing))))

    def enc_prods(subject: Set[NonTerminal], key: str, arity: int) -> List[Production]:
        out = []
        for head in subject:
            for p in table.productions_of(head):
                if not isinstance(p.root, EncSym) or p.root.arity != arity:
                    continue
                if any(q.root == KeySym(key)
                       for q in table.productions_of(p.children[-1])):
                    out.append(p)
        return out

    def check_proc(proc: Process, label: str, active: bool, where: str) -> None:
        if isinstance(proc, (PNil, PCall)):
            return
        if isinstance(proc, PIter):
            check_proc(proc.body, label, active, where)
            return
        if isinstance(proc, POut):
            slots = [theta_of(t, label, where, active) for t in proc.terms]
            if active:
                for s in slots:
                    check_theta(s, label, where)
            labels = set(system.labels())
            nonempty = all(slots)
            for tgt in proc.targets:
                if tgt not in labels or not system.comp.allows(label, tgt):
                    continue
                if not active or not nonempty:
                    continue
                covered = any(
                    e.sender == label and len(e.positions) == len(slots)
                    and all(s <= set(p) for s, p in zip(slots, e.positions))
                    for e in est.kappa_entries(tgt))
                if not covered:
                    errs.append("%s: kappa(%s) has no entry covering this send"
                                % (where, tgt))
            check_proc(proc.cont, label, active, where)
            return
        if isinstance(proc, PIn):
            for m in proc.match:
                s = theta_of(m, label, where, active)
                if active:
                    check_theta(s, label, where)
            arity = len(proc.match) + len(proc.binders)
            j = len(proc.match)
            inner = False
            if active:
                for e in est.kappa_entries(label):
                    if len(e.positions) != arity:
                        continue
                    inner = True
                    for m_i, x in enumerate(proc.binders):
                        have = set(est.sigma_starts(label, x))
                        need = set(e.positions[j + m_i])
                        if not need <= have:
                            errs.append("%s: sigma(%s, %s) misses input from %s"
                                        % (where, label, x, e.sender))
            check_proc(proc.cont, label, active and inner, where)
            return
        if isinstance(proc, PCond):
            s = theta_of(proc.guard, label, where, active)
            if active:
                check_theta(s, label, where)
            check_proc(proc.then, label, active, where)
            check_proc(proc.els, label, active, where)
            return
        if isinstance(proc, PAssign):
            s = theta_of(proc.term, label, where, active)
            if active:
                check_theta(s, label, where)
                have = set(est.sigma_starts(label, proc.var))
                if not s <= have:
                    errs.append("%s: sigma(%s, %s) misses assigned values"
                                % (where, label, proc.var))
            check_proc(proc.cont, label, active, where)
            return
        if isinstance(proc, PActCmd):
            if active and not est.strict:
                if proc.action not in est.alpha_actions(label, proc.actuator):
                    errs.append("%s: alpha(%s, %d) lacks %s"
                                % (where, label, proc.actuator, proc.action))
            check_proc(proc.cont, label, active, where)
            return
        if isinstance(proc, PDecrypt):
            subject = theta_of(proc.subject, label, where, active)
            for m in proc.match:
                s = theta_of(m, label, where, active)
                if active:
                    check_theta(s, label, where)
            arity = len(proc.match) + len(proc.binders)
            j = len(proc.match)
            prods = enc_prods(subject, proc.key, arity) if active else []
            if active:
                check_theta(subject, label, where)
                for p in prods:
                    for m_i, x in enumerate(proc.binders):
                        if p.children[j + m_i] not in est.sigma_starts(label, x):
                            errs.append("%s: sigma(%s, %s) misses decrypted part"
                                        % (where, label, x))
            check_proc(proc.cont, label, active and bool(prods), where)
            return
        raise TypeError(proc)

    # seeds
    for node in system.nodes:
        for i, _ in node.sensors:
            sym = SensorSym(i, node.label)
            if nt(sym) not in est.sigma_starts(node.label, i):
                errs.append("sigma(%s, #%d) lacks the sensor value"
                            % (node.label, i))
            if not has_leaf(sym):
                errs.append("grammar lacks sensor #%d of %s" % (i, node.label))
    # processes and actuators
    for node in system.nodes:
        for idx, proc in enumerate(node.procs):
            check_proc(proc, node.label, True,
                       "node %s proc %d" % (node.label, idx))
        if not est.strict:
            for j, body in node.actuators:
                stack = [body]
                while stack:
                    b = stack.pop()
                    if isinstance(b, ADo):
                        if b.action not in est.alpha_actions(node.label, j):
                            errs.append("alpha(%s, %d) lacks scripted action %s"
                                        % (node.label, j, b.action))
                        stack.append(b.cont)
                    elif isinstance(b, (ATau, AAwait)):
                        stack.append(b.cont)
                    elif isinstance(b, AIter):
                        stack.append(b.body)
    return errs


# ---------------------------------------------------------------------------
# lattice structure
# ---------------------------------------------------------------------------

def _merged_table(a: ProductionTable, b: ProductionTable) -> ProductionTable:
    t = ProductionTable(a)
    for p in b:
        t.add(p)
    return t


def _common_table(a: ProductionTable, b: ProductionTable) -> ProductionTable:
    return ProductionTable(p for p in a if p in b)


def estimate_join(a: Estimate, b: Estimate) -> Estimate:
    if a.strict != b.strict:
        raise ValueError("cannot join estimates of different modes")
    table = _merged_table(a.table, b.table)
    sigma: Dict[str, Dict[Loc, FrozenSet[NonTerminal]]] = {}
    for src in (a.sigma, b.sigma):
        for label, locs in src.items():
            for loc, starts in locs.items():
                cur = sigma.setdefault(label, {}).get(loc, frozenset())
                sigma[label][loc] = cur | starts
    kappa: Dict[str, Tuple[KappaEntry, ...]] = {}
    for label in set(a.kappa) | set(b.kappa):
        entries = {e.signature(): e
                   for e in a.kappa_entries(label) + b.kappa_entries(label)}
        kappa[label] = tuple(sorted(entries.values(), key=lambda e: e.signature()))
    theta = {}
    for label in set(a.theta) | set(b.theta):
        theta[label] = a.theta.get(label, frozenset()) | b.theta.get(label, frozenset())
    alpha = {}
    for key in set(a.alpha) | set(b.alpha):
        alpha[key] = a.alpha.get(key, frozenset()) | b.alpha.get(key, frozenset())
    return Estimate(table, sigma, kappa, theta, alpha, a.strict)


def estimate_meet(a: Estimate, b: Estimate) -> Estimate:
    if a.strict != b.strict:
        raise ValueError("cannot meet estimates of different modes")
    table = _common_table(a.table, b.table)
    sigma: Dict[str, Dict[Loc, FrozenSet[NonTerminal]]] = {}
    for label, locs in a.sigma.items():
        for loc, starts in locs.items():
            other = b.sigma.get(label, {}).get(loc)
            if other is not None:
                sigma.setdefault(label, {})[loc] = starts & other
    kappa: Dict[str, Tuple[KappaEntry, ...]] = {}
    for label in set(a.kappa) & set(b.kappa):
        entries: Dict[Tuple, KappaEntry] = {}
        for ea in a.kappa_entries(label):
            for eb in b.kappa_entries(label):
                if ea.sender != eb.sender or len(ea.positions) != len(eb.positions):
                    continue
                positions = tuple(pa & pb
                                  for pa, pb in zip(ea.positions, eb.positions))
                if any(not p for p in positions):
                    continue
                e = KappaEntry(ea.sender, positions)
                entries[e.signature()] = e
        if entries:
            kappa[label] = tuple(sorted(entries.values(),
                                        key=lambda e: e.signature()))
    theta = {}
    for label in set(a.theta) & set(b.theta):
        theta[label] = a.theta[label] & b.theta[label]
    alpha = {}
    for key in set(a.alpha) & set(b.alpha):
        alpha[key] = a.alpha[key] & b.alpha[key]
    return Estimate(table, sigma, kappa, theta, alpha, a.strict)


_COMBO_CAP = 4096


def _entry_covered(e: KappaEntry, others: Sequence[KappaEntry]) -> bool:
    """Every sendable tuple of e is sendable per others. Checked tuple by
    tuple up to a cap; beyond it, positionwise containment must witness."""
    candidates = [o for o in others
                  if o.sender == e.sender and len(o.positions) == len(e.positions)]
    if not candidates:
        return all(not p for p in e.positions) or not e.positions
    size = 1
    for p in e.positions:
        size *= max(len(p), 1)
        if size > _COMBO_CAP:
            return any(all(set(p) <= set(q) for p, q in zip(e.positions, o.positions))
                       for o in candidates)
    if any(not p for p in e.positions):
        return True  # nothing sendable
    for combo in itertools.product(*e.positions):
        if not any(all(c in o.positions[i] for i, c in enumerate(combo))
                   for o in candidates):
            return False
    return True


def estimate_leq(a: Estimate, b: Estimate) -> bool:
    """Componentwise order. Grammar slices must not shrink across the
    comparison, so language growth is monotone."""
    for label, locs in a.sigma.items():
        for loc, starts in locs.items():
            if not starts <= b.sigma.get(label, {}).get(loc, frozenset()):
                return False
    for label, starts in a.theta.items():
        if not starts <= b.theta.get(label, frozenset()):
            return False
    for key, actions in a.alpha.items():
        if not actions <= b.alpha.get(key, frozenset()):
            return False
    for label, entries in a.kappa.items():
        others = b.kappa_entries(label)
        for e in entries:
            if not _entry_covered(e, others):
                return False
    for p in a.table:
        if p not in b.table:
            return False
    return True


# ---------------------------------------------------------------------------
# soundness audit
# ---------------------------------------------------------------------------

def _prov_covered(prov: ProvTree, starts: Iterable[NonTerminal],
                  est: Estimate) -> bool:
    return any(lang_member(prov, est.av(s)) for s in starts)


def soundness_audit(system: System, est: Estimate,
                    configs: Iterable[Config]) -> List[str]:
    """Check reachable configurations against the estimate: every store value,
    every in-flight message and every pending actuator action must be covered.
    Returns descriptions of the counterexamples found."""
    errs: List[str] = []
    seen: Set[Tuple] = set()
    for config in configs:
        for label, loc, ival in iter_store_entries(config):
            key = ("store", label, loc, ival.prov)
            if key in seen:
                continue
            seen.add(key)
            if not _prov_covered(ival.prov, est.sigma_starts(label, loc), est):
                errs.append("store %s.%s holds value outside sigma: %s"
                            % (label, loc, ival.prov))
        for sender, ivals, targets in iter_inflight(config):
            for tgt in targets:
                if tgt not in system.labels():
                    continue
                if not system.comp.allows(sender, tgt):
                    continue
                key = ("msg", sender, tgt, tuple(iv.prov for iv in ivals))
                if key in seen:
                    continue
                seen.add(key)
                ok = any(
                    e.sender == sender and len(e.positions) == len(ivals)
                    and all(_prov_covered(iv.prov, pos, est)
                            for iv, pos in zip(ivals, e.positions))
                    for e in est.kappa_entries(tgt))
                if not ok:
                    errs.append("message %s -> %s outside kappa: %s"
                                % (sender, tgt,
                                   [str(iv.prov) for iv in ivals]))
        if not est.strict:
            for node in config.nodes:
                for a in node.actuators:
                    if isinstance(a.body, ADo):
                        key = ("act", node.label, a.actuator, a.body.action)
                        if key in seen:
                            continue
                        seen.add(key)
                        if a.body.action not in est.alpha_actions(node.label,
                                                                  a.actuator):
                            errs.append("action %s pending at %s actuator %d "
                                        "outside alpha"
                                        % (a.body.action, node.label, a.actuator))
    return errs


# ---------------------------------------------------------------------------
# link what-if
# ---------------------------------------------------------------------------

@dataclass
class WhatIfResult:
    before: Estimate
    after: Estimate
    removed: Dict[str, List[KappaEntry]]
    added: Dict[str, List[KappaEntry]]

    def describe(self) -> str:
        lines = []
        for label in sorted(self.removed):
            for e in self.removed[label]:
                lines.append("- kappa(%s) loses (%s, <%s>)" % (
                    label, e.sender,
                    "; ".join(",".join(sorted(n.name for n in pos))
                              for pos in e.positions)))
        for label in sorted(self.added):
            for e in self.added[label]:
                lines.append("+ kappa(%s) gains (%s, <%s>)" % (
                    label, e.sender,
                    "; ".join(",".join(sorted(n.name for n in pos))
                              for pos in e.positions)))
        if not lines:
            lines.append("no change to kappa")
        return "\n".join(lines)


def what_if_comp(system: System, drops: Iterable[Tuple[str, str]],
                 strict: bool = False) -> WhatIfResult:
    """Re-analyze with the given directed links removed and report exactly
    which message entries appear or disappear."""
    before = solve(system, strict)
    after = solve(system.with_comp(system.comp.without(drops)), strict)
    removed: Dict[str, List[KappaEntry]] = {}
    added: Dict[str, List[KappaEntry]] = {}
    for label in set(before.kappa) | set(after.kappa):
        b = {e.signature(): e for e in before.kappa_entries(label)}
        a = {e.signature(): e for e in after.kappa_entries(label)}
        gone = [b[s] for s in sorted(set(b) - set(a))]
        new = [a[s] for s in sorted(set(a) - set(b))]
        if gone:
            removed[label] = gone
        if new:
            added[label] = new
    return WhatIfResult(before, after, removed, added)

"""Concrete syntax for node systems.

The accepted shape, informally (docs/syntax.md has the full grammar):

    // declarations come first, every section optional
    functions { noiseRed/1; anon/1 sealed; is_a_car/1 = camera; }
    keys { k; }
    comp { l1 -> l2; l2 -> l3; }          // or: comp none;
    script lcp.#1 = [1, 2, 3] cycle;
    cameras { lq; }
    policy { secret { lcp.#1; } anonymisers { anon; } ... }

    system {
      node lcp {
        store { z, z1 }
        sensor #1 = mu h. probe(#1). tau. h;
        actuator 2 = mu h. await(2, {turnon, turnoff}). h;
        proc = mu h. z := #1. out({z}_k) to {la}. h;
      }
      ...
    }

Identifiers may end in apostrophes (z'). An identifier in term position is a
store variable when the enclosing node declares it, and an atom constant
otherwise. Comments run from // to end of line.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .treegram import Atom, LitValue
from .syntax import (
    Lit, SensorLoc, Var, App, EncTerm, Term,
    PNil, POut, PIn, PCond, PAssign, PActCmd, PDecrypt, PIter, PCall, Process,
    SNil, STau, SProbe, SIter, SCall, SensorBody,
    ANil, ATau, AAwait, ADo, AIter, ACall, ActuatorBody,
    FunSig, FunctionTable, Script, CompRelation, PolicyConfig,
    NodeDef, System,
    EVAL_RECORD, EVAL_CAMERA, EVAL_BUILTIN, BUILTINS,
)


class ParseError(Exception):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__("%d:%d: %s" % (line, col, msg))
        self.line = line
        self.col = col


# ---------------------------------------------------------------------------
# lexer
# ---------------------------------------------------------------------------

@dataclass
class Token:
    kind: str   # ident | int | str | punct | eof
    text: str
    line: int
    col: int


_PUNCT2 = (":=", "->", ">=", "<=")
_PUNCT1 = "{}()[],;.#_=+-*<>/"


def tokenize(src: str) -> List[Token]:
    toks: List[Token] = []
    i, line, col = 0, 1, 1
    n = len(src)
    while i < n:
        c = src[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if src.startswith("//", i):
            while i < n and src[i] != "\n":
                i += 1
            continue
        start_col = col
        if c.isalpha():
            j = i
            while j < n and (src[j].isalnum() or src[j] == "_"):
                j += 1
            while j < n and src[j] == "'":
                j += 1
            toks.append(Token("ident", src[i:j], line, start_col))
            col += j - i
            i = j
            continue
        if c.isdigit():
            j = i
            while j < n and src[j].isdigit():
                j += 1
            toks.append(Token("int", src[i:j], line, start_col))
            col += j - i
            i = j
            continue
        if c == '"':
            j = i + 1
            while j < n and src[j] != '"':
                if src[j] == "\n":
                    raise ParseError("unterminated string", line, start_col)
                j += 1
            if j >= n:
                raise ParseError("unterminated string", line, start_col)
            toks.append(Token("str", src[i + 1:j], line, start_col))
            col += j + 1 - i
            i = j + 1
            continue
        two = src[i:i + 2]
        if two in _PUNCT2:
            toks.append(Token("punct", two, line, start_col))
            i += 2
            col += 2
            continue
        if c in _PUNCT1:
            toks.append(Token("punct", c, line, start_col))
            i += 1
            col += 1
            continue
        raise ParseError("unexpected character %r" % c, line, col)
    toks.append(Token("eof", "", line, col))
    return toks


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

_INFIX_BUILTIN = {
    "+": "add", "-": "sub", "*": "mul",
    "=": "eq", ">=": "ge", "<=": "le", ">": "gt", "<": "lt",
}


class _Parser:
    def __init__(self, toks: List[Token]):
        self.toks = toks
        self.pos = 0

    # -- token plumbing -----------------------------------------------------

    def peek(self, ahead: int = 0) -> Token:
        return self.toks[min(self.pos + ahead, len(self.toks) - 1)]

    def next(self) -> Token:
        t = self.toks[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def fail(self, msg: str, tok: Optional[Token] = None) -> "ParseError":
        t = tok or self.peek()
        return ParseError(msg + (" (got %r)" % (t.text or "<eof>")), t.line, t.col)

    def at_punct(self, text: str) -> bool:
        t = self.peek()
        return t.kind == "punct" and t.text == text

    def at_word(self, text: str) -> bool:
        t = self.peek()
        return t.kind == "ident" and t.text == text

    def eat_punct(self, text: str) -> Token:
        if not self.at_punct(text):
            raise self.fail("expected %r" % text)
        return self.next()

    def eat_word(self, text: str) -> Token:
        if not self.at_word(text):
            raise self.fail("expected %r" % text)
        return self.next()

    def eat_ident(self, what: str = "identifier") -> str:
        t = self.peek()
        if t.kind != "ident":
            raise self.fail("expected %s" % what)
        return self.next().text

    def eat_int(self) -> int:
        t = self.peek()
        if t.kind != "int":
            raise self.fail("expected number")
        return int(self.next().text)

    # -- terms --------------------------------------------------------------

    def term(self, variables: Set[str]) -> Term:
        return self._or(variables)

    def _or(self, vs: Set[str]) -> Term:
        left = self._and(vs)
        while self.at_word("or"):
            self.next()
            left = App("or", (left, self._and(vs)))
        return left

    def _and(self, vs: Set[str]) -> Term:
        left = self._cmp(vs)
        while self.at_word("and"):
            self.next()
            left = App("and", (left, self._cmp(vs)))
        return left

    def _cmp(self, vs: Set[str]) -> Term:
        left = self._add(vs)
        t = self.peek()
        if t.kind == "punct" and t.text in ("=", ">=", "<=", ">", "<"):
            self.next()
            return App(_INFIX_BUILTIN[t.text], (left, self._add(vs)))
        return left

    def _add(self, vs: Set[str]) -> Term:
        left = self._mul(vs)
        while True:
            t = self.peek()
            if t.kind == "punct" and t.text in ("+", "-"):
                self.next()
                left = App(_INFIX_BUILTIN[t.text], (left, self._mul(vs)))
            else:
                return left

    def _mul(self, vs: Set[str]) -> Term:
        left = self._primary(vs)
        while self.at_punct("*"):
            self.next()
            left = App("mul", (left, self._primary(vs)))
        return left

    def _primary(self, vs: Set[str]) -> Term:
        t = self.peek()
        if t.kind == "int":
            self.next()
            return Lit(int(t.text))
        if t.kind == "str":
            self.next()
            return Lit(t.text)
        if self.at_punct("-"):
            self.next()
            return Lit(-self.eat_int())
        if self.at_punct("#"):
            self.next()
            return SensorLoc(self.eat_int())
        if self.at_punct("("):
            self.next()
            inner = self.term(vs)
            self.eat_punct(")")
            return inner
        if self.at_punct("{"):
            self.next()
            args = [self.term(vs)]
            while self.at_punct(","):
                self.next()
                args.append(self.term(vs))
            self.eat_punct("}")
            self.eat_punct("_")
            key = self.eat_ident("key name")
            return EncTerm(tuple(args), key)
        if t.kind == "ident":
            name = self.next().text
            if self.at_punct("("):
                self.next()
                args: List[Term] = []
                if not self.at_punct(")"):
                    args.append(self.term(vs))
                    while self.at_punct(","):
                        self.next()
                        args.append(self.term(vs))
                self.eat_punct(")")
                return App(name, tuple(args))
            if name in vs:
                return Var(name)
            return Lit(Atom(name))
        raise self.fail("expected a term")

    def literal(self) -> LitValue:
        t = self.peek()
        if t.kind == "int":
            self.next()
            return int(t.text)
        if self.at_punct("-"):
            self.next()
            return -self.eat_int()
        if t.kind == "str":
            self.next()
            return t.text
        if t.kind == "ident":
            return Atom(self.next().text)
        raise self.fail("expected a literal")

    # -- processes ----------------------------------------------------------

    def process(self, vs: Set[str]) -> Process:
        if self.at_punct("("):
            self.next()
            inner = self.process(vs)
            self.eat_punct(")")
            if self.at_punct("."):
                raise self.fail("a parenthesised process ends its chain")
            return inner
        if self.at_word("nil"):
            self.next()
            return PNil()
        if self.at_word("mu"):
            self.next()
            var = self.eat_ident("iteration variable")
            self.eat_punct(".")
            return PIter(var, self.process(vs))
        if self.at_word("out"):
            self.next()
            self.eat_punct("(")
            terms = [self.term(vs)]
            while self.at_punct(","):
                self.next()
                terms.append(self.term(vs))
            self.eat_punct(")")
            self.eat_word("to")
            targets = self._label_set()
            self.eat_punct(".")
            return POut(tuple(terms), targets, self.process(vs))
        if self.at_word("in"):
            self.next()
            self.eat_punct("(")
            match: List[Term] = []
            if not self.at_punct(";"):
                match.append(self.term(vs))
                while self.at_punct(","):
                    self.next()
                    match.append(self.term(vs))
            self.eat_punct(";")
            binders: List[str] = []
            if not self.at_punct(")"):
                binders.append(self.eat_ident("binder"))
                while self.at_punct(","):
                    self.next()
                    binders.append(self.eat_ident("binder"))
            self.eat_punct(")")
            self.eat_punct(".")
            return PIn(tuple(match), tuple(binders), self.process(vs))
        if self.at_word("if"):
            self.next()
            guard = self.term(vs)
            self.eat_word("then")
            then = self.process(vs)
            self.eat_word("else")
            els = self.process(vs)
            return PCond(guard, then, els)
        if self.at_word("act"):
            self.next()
            self.eat_punct("(")
            j = self.eat_int()
            self.eat_punct(",")
            action = self.eat_ident("action name")
            self.eat_punct(")")
            self.eat_punct(".")
            return PActCmd(j, action, self.process(vs))
        if self.at_word("decrypt"):
            self.next()
            subject = self.term(vs)
            self.eat_word("as")
            self.eat_punct("{")
            match = []
            if not self.at_punct(";"):
                match.append(self.term(vs))
                while self.at_punct(","):
                    self.next()
                    match.append(self.term(vs))
            self.eat_punct(";")
            binders = []
            if not self.at_punct("}"):
                binders.append(self.eat_ident("binder"))
                while self.at_punct(","):
                    self.next()
                    binders.append(self.eat_ident("binder"))
            self.eat_punct("}")
            self.eat_punct("_")
            key = self.eat_ident("key name")
            self.eat_word("in")
            return PDecrypt(subject, tuple(match), tuple(binders), key,
                            self.process(vs))
        t = self.peek()
        if t.kind == "ident":
            if self.peek(1).kind == "punct" and self.peek(1).text == ":=":
                var = self.next().text
                self.next()  # :=
                term = self.term(vs)
                self.eat_punct(".")
                return PAssign(var, term, self.process(vs))
            return PCall(self.next().text)
        raise self.fail("expected a process")

    def _label_set(self) -> Tuple[str, ...]:
        self.eat_punct("{")
        labels: List[str] = []
        if not self.at_punct("}"):
            labels.append(self.eat_ident("node label"))
            while self.at_punct(","):
                self.next()
                labels.append(self.eat_ident("node label"))
        self.eat_punct("}")
        return tuple(labels)

    # -- sensor and actuator bodies ------------------------------------------

    def sensor_body(self) -> SensorBody:
        if self.at_word("nil"):
            self.next()
            return SNil()
        if self.at_word("mu"):
            self.next()
            var = self.eat_ident("iteration variable")
            self.eat_punct(".")
            return SIter(var, self.sensor_body())
        if self.at_word("tau"):
            self.next()
            self.eat_punct(".")
            return STau(self.sensor_body())
        if self.at_word("probe"):
            self.next()
            self.eat_punct("(")
            self.eat_punct("#")
            i = self.eat_int()
            self.eat_punct(")")
            self.eat_punct(".")
            return SProbe(i, self.sensor_body())
        t = self.peek()
        if t.kind == "ident":
            return SCall(self.next().text)
        raise self.fail("expected a sensor body")

    def actuator_body(self) -> ActuatorBody:
        if self.at_word("nil"):
            self.next()
            return ANil()
        if self.at_word("mu"):
            self.next()
            var = self.eat_ident("iteration variable")
            self.eat_punct(".")
            return AIter(var, self.actuator_body())
        if self.at_word("tau"):
            self.next()
            self.eat_punct(".")
            return ATau(self.actuator_body())
        if self.at_word("await"):
            self.next()
            self.eat_punct("(")
            j = self.eat_int()
            self.eat_punct(",")
            self.eat_punct("{")
            actions = [self.eat_ident("action name")]
            while self.at_punct(","):
                self.next()
                actions.append(self.eat_ident("action name"))
            self.eat_punct("}")
            self.eat_punct(")")
            self.eat_punct(".")
            return AAwait(j, tuple(actions), self.actuator_body())
        t = self.peek()
        if t.kind == "ident":
            name = self.next().text
            if self.at_punct("."):
                self.next()
                return ADo(name, self.actuator_body())
            return ACall(name)
        raise self.fail("expected an actuator body")

    # -- declaration sections -------------------------------------------------

    def functions_block(self, table: FunctionTable) -> None:
        self.eat_punct("{")
        while not self.at_punct("}"):
            name = self.eat_ident("function name")
            if name in BUILTINS:
                t = self.peek()
                raise ParseError("cannot redeclare builtin %s" % name, t.line, t.col)
            arity = self._arity()
            evaluator = EVAL_RECORD
            sealed = False
            if self.at_punct("="):
                self.next()
                ev = self.eat_ident("evaluator name")
                if ev not in (EVAL_RECORD, EVAL_CAMERA):
                    raise self.fail("unknown evaluator %r" % ev)
                evaluator = ev
            if self.at_word("sealed"):
                self.next()
                sealed = True
            table.declare(FunSig(name, arity, evaluator, sealed))
            self.eat_punct(";")
        self.next()

    def _arity(self) -> int:
        # functions are declared as  name/arity
        t = self.peek()
        if t.kind == "punct" and t.text == "/":
            self.next()
            return self.eat_int()
        raise self.fail("expected /arity")

    def keys_block(self) -> Tuple[str, ...]:
        self.eat_punct("{")
        keys: List[str] = []
        while not self.at_punct("}"):
            keys.append(self.eat_ident("key name"))
            self.eat_punct(";")
        self.next()
        return tuple(keys)

    def comp_decl(self) -> CompRelation:
        if self.at_word("none"):
            self.next()
            self.eat_punct(";")
            return CompRelation("none")
        if self.at_word("all"):
            self.next()
            self.eat_punct(";")
            return CompRelation("all")
        self.eat_punct("{")
        edges: List[Tuple[str, str]] = []
        while not self.at_punct("}"):
            a = self.eat_ident("node label")
            self.eat_punct("->")
            b = self.eat_ident("node label")
            edges.append((a, b))
            self.eat_punct(";")
        self.next()
        return CompRelation("edges", edges)

    def script_decl(self) -> Tuple[Tuple[str, int], Script]:
        label = self.eat_ident("node label")
        self.eat_punct(".")
        self.eat_punct("#")
        sensor = self.eat_int()
        self.eat_punct("=")
        self.eat_punct("[")
        values: List[LitValue] = []
        if not self.at_punct("]"):
            values.append(self.literal())
            while self.at_punct(","):
                self.next()
                values.append(self.literal())
        self.eat_punct("]")
        mode = "cycle"
        if self.peek().kind == "ident" and self.peek().text in ("cycle", "hold", "stuck"):
            mode = self.next().text
        self.eat_punct(";")
        return (label, sensor), Script(tuple(values), mode)

    def cameras_block(self) -> Tuple[str, ...]:
        self.eat_punct("{")
        labels: List[str] = []
        while not self.at_punct("}"):
            labels.append(self.eat_ident("node label"))
            self.eat_punct(";")
        self.next()
        return tuple(labels)

    def policy_block(self) -> PolicyConfig:
        self.eat_punct("{")
        secret: List[Tuple[str, Tuple[int, ...]]] = []
        confined: List[Tuple[str, Tuple[int, ...]]] = []
        anonymisers: Tuple[str, ...] = ()
        levels: List[Tuple[str, int]] = []
        allowed: Tuple[str, ...] = ()
        flows: List[Tuple[str, Tuple[str, ...]]] = []
        while not self.at_punct("}"):
            section = self.eat_ident("policy section")
            if section in ("secret", "confined"):
                acc: Dict[str, List[int]] = {}
                self.eat_punct("{")
                while not self.at_punct("}"):
                    label = self.eat_ident("node label")
                    self.eat_punct(".")
                    self.eat_punct("#")
                    acc.setdefault(label, []).append(self.eat_int())
                    self.eat_punct(";")
                self.next()
                pairs = tuple((lab, tuple(ids)) for lab, ids in sorted(acc.items()))
                if section == "secret":
                    secret.extend(pairs)
                else:
                    confined.extend(pairs)
            elif section == "anonymisers":
                self.eat_punct("{")
                names: List[str] = []
                while not self.at_punct("}"):
                    names.append(self.eat_ident("function name"))
                    self.eat_punct(";")
                self.next()
                anonymisers = tuple(names)
            elif section == "levels":
                self.eat_punct("{")
                while not self.at_punct("}"):
                    label = self.eat_ident("node label")
                    self.eat_punct("=")
                    levels.append((label, self.eat_int()))
                    self.eat_punct(";")
                self.next()
            elif section == "allowed":
                self.eat_punct("{")
                names = []
                while not self.at_punct("}"):
                    names.append(self.eat_ident("node label"))
                    self.eat_punct(";")
                self.next()
                allowed = tuple(names)
            elif section == "flows":
                self.eat_punct("{")
                while not self.at_punct("}"):
                    sender = self.eat_ident("node label")
                    self.eat_punct("->")
                    flows.append((sender, self._label_set()))
                    self.eat_punct(";")
                self.next()
            else:
                raise self.fail("unknown policy section %r" % section)
        self.next()
        return PolicyConfig(tuple(secret), tuple(confined), anonymisers,
                            tuple(levels), allowed, tuple(flows))

    # -- nodes and the system -------------------------------------------------

    def node_def(self) -> NodeDef:
        self.eat_word("node")
        label = self.eat_ident("node label")
        self.eat_punct("{")
        variables: Tuple[str, ...] = ()
        if self.at_word("store"):
            self.next()
            self.eat_punct("{")
            names: List[str] = []
            if not self.at_punct("}"):
                names.append(self.eat_ident("variable"))
                while self.at_punct(","):
                    self.next()
                    names.append(self.eat_ident("variable"))
            self.eat_punct("}")
            variables = tuple(names)
        vs = set(variables)
        sensors: List[Tuple[int, SensorBody]] = []
        actuators: List[Tuple[int, ActuatorBody]] = []
        procs: List[Process] = []
        while not self.at_punct("}"):
            if self.at_word("store"):
                t = self.peek()
                raise ParseError("store must be the first item of a node",
                                 t.line, t.col)
            if self.at_word("sensor"):
                self.next()
                self.eat_punct("#")
                i = self.eat_int()
                self.eat_punct("=")
                sensors.append((i, self.sensor_body()))
                self.eat_punct(";")
            elif self.at_word("actuator"):
                self.next()
                j = self.eat_int()
                self.eat_punct("=")
                actuators.append((j, self.actuator_body()))
                self.eat_punct(";")
            elif self.at_word("proc"):
                self.next()
                self.eat_punct("=")
                procs.append(self.process(vs))
                self.eat_punct(";")
            else:
                raise self.fail("expected sensor, actuator or proc")
        self.next()
        return NodeDef(label, variables, tuple(sensors), tuple(actuators),
                       tuple(procs))

    def system(self) -> System:
        functions = FunctionTable()
        keys: Tuple[str, ...] = ()
        comp = CompRelation()
        scripts: List[Tuple[Tuple[str, int], Script]] = []
        cameras: Tuple[str, ...] = ()
        policy: Optional[PolicyConfig] = None
        nodes: List[NodeDef] = []
        while True:
            if self.at_word("functions"):
                self.next()
                self.functions_block(functions)
            elif self.at_word("keys"):
                self.next()
                keys = keys + self.keys_block()
            elif self.at_word("comp"):
                self.next()
                comp = self.comp_decl()
            elif self.at_word("script"):
                self.next()
                scripts.append(self.script_decl())
            elif self.at_word("cameras"):
                self.next()
                cameras = cameras + self.cameras_block()
            elif self.at_word("policy"):
                self.next()
                policy = self.policy_block()
            elif self.at_word("system"):
                self.next()
                self.eat_punct("{")
                while not self.at_punct("}"):
                    nodes.append(self.node_def())
                self.next()
            elif self.peek().kind == "eof":
                break
            else:
                raise self.fail("expected a declaration or the system block")
        if not nodes:
            t = self.peek()
            raise ParseError("no system block (or it is empty)", t.line, t.col)
        return System(tuple(nodes), functions, keys, comp, tuple(scripts),
                      cameras, policy)


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------

def parse_system(source: str) -> System:
    p = _Parser(tokenize(source))
    return p.system()


def parse_term(source: str, variables: Sequence[str] = ()) -> Term:
    p = _Parser(tokenize(source))
    t = p.term(set(variables))
    tok = p.peek()
    if tok.kind != "eof":
        raise ParseError("trailing input after term", tok.line, tok.col)
    return t


def parse_process(source: str, variables: Sequence[str] = ()) -> Process:
    p = _Parser(tokenize(source))
    proc = p.process(set(variables))
    tok = p.peek()
    if tok.kind != "eof":
        raise ParseError("trailing input after process", tok.line, tok.col)
    return proc

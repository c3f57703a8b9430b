"""Regular tree grammars over provenance alphabets.

The abstract domain of the analysis: finite tree grammars whose terminals
describe where a piece of data came from (a sensor read, a literal, a
function application, an encryption), and whose nonterminals are canonical,
one per terminal symbol. An abstract value is a start nonterminal plus the
slice of a shared production table reachable from it.

This module also defines the provenance trees themselves (the instrumented
semantics attaches one to every concrete value) so that membership,
enumeration and tagging can be stated in one place.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple, Union


def cached_hash(cls):
    """Memoize the generated hash of a frozen dataclass on the instance.

    The runtime state (values, provenance, process trees) is deeply nested
    but heavily shared, so set membership tests would otherwise rehash the
    same subtrees over and over."""
    base = cls.__hash__

    def __hash__(self):
        h = self.__dict__.get("_hash")
        if h is None:
            h = base(self)
            object.__setattr__(self, "_hash", h)
        return h

    cls.__hash__ = __hash__
    return cls


# ---------------------------------------------------------------------------
# literals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Atom:
    """Opaque constant such as car, err, turnon. The booleans are the atoms
    true and false."""
    name: str

    def __repr__(self) -> str:
        return self.name


TRUE = Atom("true")
FALSE = Atom("false")

# A source-level literal: an integer, a string, or an atom.
LitValue = Union[int, str, Atom]


def render_lit(v: LitValue) -> str:
    """Stable textual form of a literal, used in symbol names and exports.
    Strings are quoted so they can never collide with atoms or ints."""
    if isinstance(v, Atom):
        return v.name
    if isinstance(v, bool):  # guard against accidental Python bools
        raise TypeError("booleans are represented as atoms")
    if isinstance(v, int):
        return str(v)
    return json.dumps(v)


def parse_lit(s: str) -> LitValue:
    if s.startswith('"'):
        return json.loads(s)
    try:
        return int(s)
    except ValueError:
        return Atom(s)


# ---------------------------------------------------------------------------
# terminal symbols
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SensorSym:
    """Reading of sensor i at node label (arity 0)."""
    sensor: int
    label: str


@dataclass(frozen=True)
class ValueSym:
    """Literal value occurring at node label (arity 0)."""
    value: LitValue
    label: str


@dataclass(frozen=True)
class FunSym:
    """Application of function fn at node label (arity = arity)."""
    fn: str
    arity: int
    label: str


@dataclass(frozen=True)
class EncSym:
    """Encryption built at node label with `arity` payload children plus one
    key child."""
    arity: int
    label: str


@dataclass(frozen=True)
class KeySym:
    """A key identifier (arity 0)."""
    key: str


Symbol = Union[SensorSym, ValueSym, FunSym, EncSym, KeySym]


def sym_name(sym: Symbol) -> str:
    """Unambiguous textual form of a terminal symbol."""
    if isinstance(sym, SensorSym):
        return "#%d@%s" % (sym.sensor, sym.label)
    if isinstance(sym, ValueSym):
        return "%s@%s" % (render_lit(sym.value), sym.label)
    if isinstance(sym, FunSym):
        return "%s/%d@%s" % (sym.fn, sym.arity, sym.label)
    if isinstance(sym, EncSym):
        return "enc/%d@%s" % (sym.arity, sym.label)
    if isinstance(sym, KeySym):
        return "key:%s" % sym.key
    raise TypeError(sym)


def sym_arity(sym: Symbol) -> int:
    if isinstance(sym, FunSym):
        return sym.arity
    if isinstance(sym, EncSym):
        return sym.arity + 1  # payloads plus the key child
    return 0


def sym_from_name(name: str) -> Symbol:
    """Inverse of sym_name, used when importing serialized grammars."""
    if name.startswith("key:"):
        return KeySym(name[4:])
    body, sep, label = name.rpartition("@")
    if not sep:
        raise ValueError("malformed symbol name: %r" % name)
    if body.startswith("#"):
        return SensorSym(int(body[1:]), label)
    if "/" in body:
        fn, _, ar = body.rpartition("/")
        if fn == "enc":
            return EncSym(int(ar), label)
        return FunSym(fn, int(ar), label)
    return ValueSym(parse_lit(body), label)


# ---------------------------------------------------------------------------
# nonterminals
# ---------------------------------------------------------------------------

class NonTerminal:
    """Interned by name, so identity comparison suffices. Names of the
    canonical nonterminal for a symbol are "$" plus the symbol name; value
    variants (one per tuple of children at an encryption site) append the
    child names."""

    __slots__ = ("name",)
    _interned: Dict[str, "NonTerminal"] = {}

    def __new__(cls, name: str) -> "NonTerminal":
        hit = cls._interned.get(name)
        if hit is not None:
            return hit
        obj = object.__new__(cls)
        object.__setattr__(obj, "name", name)
        cls._interned[name] = obj
        return obj

    def __setattr__(self, *a) -> None:
        raise AttributeError("NonTerminal is immutable")

    def __repr__(self) -> str:
        return self.name

    def __lt__(self, other: "NonTerminal") -> bool:
        return self.name < other.name


def nt(sym: Symbol) -> NonTerminal:
    return NonTerminal("$" + sym_name(sym))


def variant_nt(sym: Symbol, children: Sequence["NonTerminal"]) -> NonTerminal:
    """A nonterminal for one specific child combination of a symbol. The
    name is content-addressed so independent analyses of the same system
    agree on it."""
    return NonTerminal("$%s(%s)" % (sym_name(sym),
                                    ",".join(c.name for c in children)))


_ENC_SITE_CACHE: Dict[str, FrozenSet[Tuple[int, str]]] = {}


def _enc_sites_in_name(name: str) -> FrozenSet[Tuple[int, str]]:
    """Encryption sites (arity, label) mentioned anywhere in a nonterminal
    name. Symbol names inside a name always follow a '$' and end before one
    of '(', ',' or ')', so this needs no full parse."""
    hit = _ENC_SITE_CACHE.get(name)
    if hit is not None:
        return hit
    sites = set()
    i = 0
    while True:
        i = name.find("$enc/", i)
        if i < 0:
            break
        j = i + 5
        while j < len(name) and name[j] not in "(,)":
            j += 1
        body, _, label = name[i + 1:j].partition("@")
        try:
            sites.add((int(body[4:]), label))
        except ValueError:
            pass
        i = j
    out = frozenset(sites)
    _ENC_SITE_CACHE[name] = out
    return out


def enc_head(arity: int, label: str,
             combo: Sequence["NonTerminal"]) -> NonTerminal:
    """Head nonterminal for one encryption combination. Content-addressed
    per child tuple, so each ciphertext's language keeps its own shape,
    except that a combination embedding its own encryption site ties back
    to the site's canonical nonterminal: feedback loops (a node encrypting
    what it received from its own ciphertexts) then close into recursive
    grammars instead of nesting fresh names forever."""
    sym = EncSym(arity, label)
    for c in combo:
        if (arity, label) in _enc_sites_in_name(c.name):
            return nt(sym)
    return variant_nt(sym, combo)


@dataclass(frozen=True)
class Production:
    """head -> root(children). The head defaults to the root symbol's
    canonical nonterminal; a variant head must be given explicitly."""
    root: Symbol
    children: Tuple[NonTerminal, ...] = ()
    head_nt: Optional[NonTerminal] = None

    def __post_init__(self):
        if len(self.children) != sym_arity(self.root):
            raise ValueError("production arity mismatch for %s" % sym_name(self.root))
        if self.head_nt is not None and self.head_nt is nt(self.root):
            object.__setattr__(self, "head_nt", None)

    @property
    def head(self) -> NonTerminal:
        return self.head_nt if self.head_nt is not None else nt(self.root)

    def sort_key(self) -> Tuple[str, ...]:
        return (self.head.name, sym_name(self.root)) + tuple(c.name for c in self.children)

    def to_json(self) -> dict:
        return {
            "head": self.head.name,
            "root": sym_name(self.root),
            "children": [c.name for c in self.children],
        }


def leaf_production(sym: Symbol) -> Production:
    return Production(sym, ())


# ---------------------------------------------------------------------------
# production tables
# ---------------------------------------------------------------------------

class ProductionTable:
    """Append-only set of productions with a by-head index. One table is
    shared by a whole analysis result; abstract values are reachable slices
    of it."""

    def __init__(self, prods: Iterable[Production] = ()):
        self._order: Dict[Production, None] = {}
        self._by_head: Dict[NonTerminal, List[Production]] = {}
        self._version = 0
        for p in prods:
            self.add(p)

    def add(self, prod: Production) -> bool:
        if prod in self._order:
            return False
        self._order[prod] = None
        self._by_head.setdefault(prod.head, []).append(prod)
        self._version += 1
        return True

    def productions_of(self, head: NonTerminal) -> Sequence[Production]:
        return self._by_head.get(head, ())

    @property
    def version(self) -> int:
        """Bumped on every insertion; used to invalidate caches."""
        return self._version

    def __iter__(self):
        return iter(self._order)

    def __len__(self) -> int:
        return len(self._order)

    def __contains__(self, prod: Production) -> bool:
        return prod in self._order

    def sorted(self) -> List[Production]:
        return sorted(self._order, key=Production.sort_key)

    def to_json(self) -> list:
        return [p.to_json() for p in self.sorted()]

    @staticmethod
    def production_from_json(obj: dict) -> Production:
        root = sym_from_name(obj["root"])
        children = tuple(NonTerminal(c) for c in obj["children"])
        return Production(root, children, NonTerminal(obj["head"]))

    @classmethod
    def from_json(cls, items: Iterable[dict]) -> "ProductionTable":
        return cls(cls.production_from_json(o) for o in items)


def reachable_productions(start: NonTerminal, table: ProductionTable) -> List[Production]:
    """Least set closed under taking the productions of the start nonterminal
    and of every nonterminal occurring in a kept right-hand side. Also the
    extraction helper for decrypted components."""
    seen: Set[NonTerminal] = set()
    out: List[Production] = []
    stack = [start]
    while stack:
        head = stack.pop()
        if head in seen:
            continue
        seen.add(head)
        for p in table.productions_of(head):
            out.append(p)
            for child in p.children:
                if child not in seen:
                    stack.append(child)
    return out


# ---------------------------------------------------------------------------
# abstract values
# ---------------------------------------------------------------------------

class AbstractValue:
    """A start nonterminal plus the slice of the table it can reach.

    Equality and hashing go through the materialized slice so that two values
    with the same start but drawn from different tables compare correctly.
    The slice is cached against the table version because tables only grow.
    """

    __slots__ = ("start", "table", "_slice", "_slice_version")

    def __init__(self, start: NonTerminal, table: ProductionTable):
        self.start = start
        self.table = table
        self._slice: Optional[FrozenSet[Production]] = None
        self._slice_version = -1

    def slice(self) -> FrozenSet[Production]:
        if self._slice is None or self._slice_version != self.table.version:
            self._slice = frozenset(reachable_productions(self.start, self.table))
            self._slice_version = self.table.version
        return self._slice

    def __eq__(self, other) -> bool:
        if not isinstance(other, AbstractValue):
            return NotImplemented
        return self.start is other.start and self.slice() == other.slice()

    def __hash__(self) -> int:
        return hash((self.start, self.slice()))

    def __repr__(self) -> str:
        return "AbstractValue(%s, %d prods)" % (self.start.name, len(self.slice()))

    def to_json(self) -> dict:
        return {
            "start": self.start.name,
            "productions": [p.to_json() for p in sorted(self.slice(), key=Production.sort_key)],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AbstractValue":
        table = ProductionTable.from_json(obj["productions"])
        return cls(NonTerminal(obj["start"]), table)


def grammar_to_json(av: AbstractValue) -> str:
    return json.dumps(av.to_json(), sort_keys=True)


def grammar_from_json(text: str) -> AbstractValue:
    return AbstractValue.from_json(json.loads(text))


# ---------------------------------------------------------------------------
# provenance trees
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SensorLeaf:
    sensor: int
    label: str


@dataclass(frozen=True)
class ValueLeaf:
    value: LitValue
    label: str


@cached_hash
@dataclass(frozen=True)
class FunNode:
    fn: str
    label: str
    args: Tuple["ProvTree", ...]


@cached_hash
@dataclass(frozen=True)
class EncNode:
    label: str
    args: Tuple["ProvTree", ...]
    key: str


ProvTree = Union[SensorLeaf, ValueLeaf, FunNode, EncNode]


def tree_symbol(t: ProvTree) -> Symbol:
    if isinstance(t, SensorLeaf):
        return SensorSym(t.sensor, t.label)
    if isinstance(t, ValueLeaf):
        return ValueSym(t.value, t.label)
    if isinstance(t, FunNode):
        return FunSym(t.fn, len(t.args), t.label)
    if isinstance(t, EncNode):
        return EncSym(len(t.args), t.label)
    raise TypeError(t)


def tree_children(t: ProvTree) -> Tuple[ProvTree, ...]:
    if isinstance(t, (SensorLeaf, ValueLeaf)):
        return ()
    if isinstance(t, FunNode):
        return t.args
    # the key child of an encryption is a leaf in the grammar's eyes; it is
    # represented implicitly by the key field and expanded in tree_to_json
    return t.args


def tree_to_json(t: ProvTree) -> object:
    name = sym_name(tree_symbol(t))
    if isinstance(t, (SensorLeaf, ValueLeaf)):
        return name
    obj = {"root": name, "args": [tree_to_json(a) for a in tree_children(t)]}
    if isinstance(t, EncNode):
        obj["key"] = t.key
    return obj


def render_tree(t: ProvTree) -> str:
    """Compact one-line form of a tree, for reports and witnesses."""
    if isinstance(t, (SensorLeaf, ValueLeaf)):
        return sym_name(tree_symbol(t))
    inner = ", ".join(render_tree(a) for a in tree_children(t))
    if isinstance(t, EncNode):
        return "{%s}_%s@%s" % (inner, t.key, t.label)
    return "%s(%s)" % (sym_name(tree_symbol(t)), inner)


def tree_depth(t: ProvTree) -> int:
    kids = tree_children(t)
    if not kids:
        return 1
    return 1 + max(tree_depth(k) for k in kids)


def tree_size(t: ProvTree) -> int:
    return 1 + sum(tree_size(k) for k in tree_children(t))


# ---------------------------------------------------------------------------
# membership
# ---------------------------------------------------------------------------

def lang_member(tree: ProvTree, av: AbstractValue) -> bool:
    """Exact membership of a finite tree in the language of a grammar.

    A derivation consumes one root symbol per production, so recursion on the
    tree terminates even for cyclic grammars. Memoized on (nonterminal, tree)
    because trees share subtrees heavily in long traces.
    """
    table = av.table
    memo: Dict[Tuple[NonTerminal, int], bool] = {}
    # id() is safe as a memo component here: the trees passed in during one
    # call outlive the memo, and structural equality would walk the tree anyway
    keep_alive: List[ProvTree] = []

    def derives(head: NonTerminal, t: ProvTree) -> bool:
        key = (head, id(t))
        hit = memo.get(key)
        if hit is not None:
            return hit
        keep_alive.append(t)
        sym = tree_symbol(t)
        ok = False
        for p in table.productions_of(head):
            if p.root != sym:
                continue
            kids = tree_children(t)
            if isinstance(t, EncNode):
                # the last grammar child derives the key
                key_child = p.children[-1]
                if not any(q.root == KeySym(t.key) for q in table.productions_of(key_child)):
                    continue
                grammar_kids = p.children[:-1]
            else:
                grammar_kids = p.children
            if len(grammar_kids) != len(kids):
                continue
            if all(derives(g, k) for g, k in zip(grammar_kids, kids)):
                ok = True
                break
        memo[key] = ok
        return ok

    return derives(av.start, tree)


# ---------------------------------------------------------------------------
# enumeration, minimal trees, reachability queries
# ---------------------------------------------------------------------------

def productive_heads(table: ProductionTable) -> Set[NonTerminal]:
    """Nonterminals that derive at least one finite tree."""
    good: Set[NonTerminal] = set()
    changed = True
    while changed:
        changed = False
        for p in table:
            if p.head in good:
                continue
            if all(c in good for c in p.children):
                good.add(p.head)
                changed = True
    return good


def min_tree(av: AbstractValue) -> Optional[ProvTree]:
    """A smallest derivable tree (by size, ties broken by symbol name), or
    None when the start nonterminal is unproductive. Used for witnesses."""
    table = av.table
    heads = {p.head for p in table}
    best: Dict[NonTerminal, Tuple[int, ProvTree]] = {}
    changed = True
    while changed:
        changed = False
        for p in sorted(table, key=Production.sort_key):
            if isinstance(p.root, EncSym):
                grammar_kids = p.children[:-1]
                key_head = p.children[-1]
                keyprods = [q for q in table.productions_of(key_head)
                            if isinstance(q.root, KeySym)]
                if not keyprods:
                    continue
                key = keyprods[0].root.key
            else:
                grammar_kids = p.children
                key = None
            if any(c not in best for c in grammar_kids):
                continue
            size = 1 + sum(best[c][0] for c in grammar_kids)
            args = tuple(best[c][1] for c in grammar_kids)
            if isinstance(p.root, SensorSym):
                t: ProvTree = SensorLeaf(p.root.sensor, p.root.label)
            elif isinstance(p.root, ValueSym):
                t = ValueLeaf(p.root.value, p.root.label)
            elif isinstance(p.root, FunSym):
                t = FunNode(p.root.fn, p.root.label, args)
            elif isinstance(p.root, EncSym):
                t = EncNode(p.root.label, args, key)
            else:  # KeySym: keys are not values by themselves
                continue
            prev = best.get(p.head)
            if prev is None or size < prev[0]:
                best[p.head] = (size, t)
                changed = True
    hit = best.get(av.start)
    return hit[1] if hit else None


def is_recursive(av: AbstractValue) -> bool:
    """True when some nonterminal reachable from the start can reach itself;
    a non-recursive (DAG) grammar has a finite language."""
    table = av.table
    color: Dict[NonTerminal, int] = {}  # 1 = on stack, 2 = done

    def visit(head: NonTerminal) -> bool:
        c = color.get(head)
        if c == 1:
            return True
        if c == 2:
            return False
        color[head] = 1
        for p in table.productions_of(head):
            for child in p.children:
                if visit(child):
                    return True
        color[head] = 2
        return False

    return visit(av.start)


def enumerate_language(av: AbstractValue, max_depth: int = 6,
                       cap: int = 10000) -> Tuple[List[ProvTree], bool]:
    """Trees of the language up to max_depth, at most cap of them. The second
    component is True when the listing is the whole language (the grammar is
    a DAG whose every derivation fits the bounds)."""
    table = av.table
    memo: Dict[Tuple[NonTerminal, int], List[ProvTree]] = {}

    def gen(head: NonTerminal, depth: int) -> List[ProvTree]:
        if depth <= 0:
            return []
        key = (head, depth)
        hit = memo.get(key)
        if hit is not None:
            return hit
        out: List[ProvTree] = []
        for p in sorted(table.productions_of(head), key=Production.sort_key):
            if isinstance(p.root, KeySym):
                continue
            if isinstance(p.root, EncSym):
                grammar_kids = p.children[:-1]
                keys = sorted(q.root.key for q in table.productions_of(p.children[-1])
                              if isinstance(q.root, KeySym))
            else:
                grammar_kids = p.children
                keys = [None]
            child_lists = [gen(c, depth - 1) for c in grammar_kids]
            if any(not lst for lst in child_lists) and grammar_kids:
                continue
            for combo in itertools.product(*child_lists):
                for k in keys:
                    if isinstance(p.root, SensorSym):
                        t: ProvTree = SensorLeaf(p.root.sensor, p.root.label)
                    elif isinstance(p.root, ValueSym):
                        t = ValueLeaf(p.root.value, p.root.label)
                    elif isinstance(p.root, FunSym):
                        t = FunNode(p.root.fn, p.root.label, combo)
                    else:
                        t = EncNode(p.root.label, combo, k)
                    out.append(t)
                    if len(out) > cap:
                        break
        memo[key] = out
        return out

    trees = gen(av.start, max_depth)
    complete = (not is_recursive(av)) and len(trees) <= cap
    # depth bound can truncate even a DAG grammar
    if complete:
        deepest = max((tree_depth(t) for t in trees), default=0)
        complete = deepest < max_depth or not trees
    seen = set()
    uniq = []
    for t in trees[:cap]:
        if t not in seen:
            seen.add(t)
            uniq.append(t)
    return uniq, complete


def lang_equal(a: AbstractValue, b: AbstractValue, max_depth: int = 8) -> bool:
    """Language equality, exact for DAG grammars (full enumeration both
    sides), approximated by mutual sampled membership otherwise."""
    ta, ca = enumerate_language(a, max_depth)
    tb, cb = enumerate_language(b, max_depth)
    if ca and cb:
        return set(ta) == set(tb)
    return (all(lang_member(t, b) for t in ta)
            and all(lang_member(t, a) for t in tb))


def derivable_sensor_leaves(av: AbstractValue) -> Set[SensorSym]:
    """Sensor symbols occurring as a leaf of at least one derivable tree.
    A leaf counts only when its whole surrounding tree can be completed, so
    unproductive siblings disqualify a production."""
    table = av.table
    good = productive_heads(table)
    out: Set[SensorSym] = set()
    seen: Set[NonTerminal] = set()
    stack = [av.start]
    while stack:
        head = stack.pop()
        if head in seen:
            continue
        seen.add(head)
        for p in table.productions_of(head):
            if any(c not in good for c in p.children):
                continue
            if isinstance(p.root, SensorSym):
                out.add(p.root)
            for child in p.children:
                stack.append(child)
    return out


# ---------------------------------------------------------------------------
# decryption extraction
# ---------------------------------------------------------------------------

def extract_decryption(av: AbstractValue, key: str) -> List[List[AbstractValue]]:
    """Invert encryption at the grammar level: for every production of the
    start nonterminal that encrypts under `key`, return the list of payload
    component values (each a reachable slice of the same table). The result
    is a list of lists because a nonterminal may have several encryption
    productions."""
    out: List[List[AbstractValue]] = []
    for p in sorted(av.table.productions_of(av.start), key=Production.sort_key):
        if not isinstance(p.root, EncSym):
            continue
        key_head = p.children[-1]
        if not any(q.root == KeySym(key) for q in av.table.productions_of(key_head)):
            continue
        out.append([AbstractValue(c, av.table) for c in p.children[:-1]])
    return out


def build_encryption(parts: Sequence[AbstractValue], key: str, label: str,
                     table: ProductionTable) -> AbstractValue:
    """Forward direction of the above, used by tests and the solver. Each
    child combination gets its own variant head, so the result's language
    is exactly the one ciphertext shape."""
    key_nt = nt(KeySym(key))
    table.add(leaf_production(KeySym(key)))
    sym = EncSym(len(parts), label)
    children = tuple(p.start for p in parts) + (key_nt,)
    head = variant_nt(sym, children)
    table.add(Production(sym, children, head))
    return AbstractValue(head, table)


# ---------------------------------------------------------------------------
# tagging
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TagScheme:
    """A two-valued classification of data by where it originated.

    marked: per node label, the sensors whose readings carry the positive tag.
    cutters: function names whose application launders its arguments (the
        positive tag does not propagate through them).
    cut_enc: whether encryption also launders (data that is encrypted no
        longer exposes its content).
    positive/negative: the tag names to report, e.g. secret/public or
        confined/open.
    """
    marked: Tuple[Tuple[str, FrozenSet[int]], ...]
    cutters: FrozenSet[str] = frozenset()
    cut_enc: bool = True
    positive: str = "secret"
    negative: str = "public"

    @staticmethod
    def make(marked: Dict[str, Iterable[int]], cutters: Iterable[str] = (),
             cut_enc: bool = True, positive: str = "secret",
             negative: str = "public") -> "TagScheme":
        fixed = tuple(sorted((lab, frozenset(ids)) for lab, ids in marked.items()))
        return TagScheme(fixed, frozenset(cutters), cut_enc, positive, negative)

    def is_marked(self, sensor: int, label: str) -> bool:
        for lab, ids in self.marked:
            if lab == label and sensor in ids:
                return True
        return False

    def cuts(self, sym: Symbol) -> bool:
        if isinstance(sym, EncSym):
            return self.cut_enc or "enc" in self.cutters
        if isinstance(sym, FunSym):
            return sym.fn in self.cutters
        return False


def tag_tree(tree: ProvTree, scheme: TagScheme) -> str:
    """Tag of a single provenance tree: positive iff a marked sensor leaf is
    visible, where visibility stops below laundering nodes."""
    if isinstance(tree, SensorLeaf):
        hot = scheme.is_marked(tree.sensor, tree.label)
        return scheme.positive if hot else scheme.negative
    if isinstance(tree, ValueLeaf):
        return scheme.negative
    if scheme.cuts(tree_symbol(tree)):
        return scheme.negative
    for a in tree_children(tree):
        if tag_tree(a, scheme) == scheme.positive:
            return scheme.positive
    return scheme.negative


def apply_tagging(av: AbstractValue, scheme: TagScheme) -> str:
    """Grammar-level tag: positive iff some marked sensor nonterminal is
    reachable from the start without crossing a laundering production. Under
    recursion with no marked leaf in sight the answer is negative (the
    closure below simply never finds one)."""
    table = av.table
    seen: Set[NonTerminal] = set()
    stack = [av.start]
    while stack:
        head = stack.pop()
        if head in seen:
            continue
        seen.add(head)
        for p in table.productions_of(head):
            if isinstance(p.root, SensorSym) and scheme.is_marked(p.root.sensor, p.root.label):
                return scheme.positive
            if scheme.cuts(p.root):
                continue
            for child in p.children:
                stack.append(child)
    return scheme.negative


def tagging_agreement_check(av: AbstractValue, scheme: TagScheme,
                            max_depth: int = 5, cap: int = 2000) -> List[ProvTree]:
    """Every derivable tree must carry the same tag as its grammar. Returns
    the disagreeing sample trees (empty list = agreement on the sample)."""
    grammar_tag = apply_tagging(av, scheme)
    trees, _complete = enumerate_language(av, max_depth, cap)
    return [t for t in trees if tag_tree(t, scheme) != grammar_tag]

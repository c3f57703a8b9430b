"""Seeded generator of small random systems for the property suites.

Systems have at most 3 nodes and at most 12 process prefixes in total, so
their depth-bounded state spaces stay enumerable. Every generated system
passes well_formed; the generator raises if it ever produces one that does
not, so a bad seed fails loudly instead of skewing a suite.
"""

import random

from ilysa.syntax import (
    Lit, SensorLoc, Var, App, EncTerm,
    PNil, POut, PIn, PCond, PAssign, PActCmd, PDecrypt, PIter, PCall,
    SProbe, SIter, SCall,
    AAwait, AIter, ACall,
    FunSig, FunctionTable, Script, CompRelation, NodeDef, System,
    well_formed,
)
from ilysa.treegram import Atom

ATOMS = ("go", "stop", "hot", "cold", "tick")
ACTIONS = ("on", "off")


class _NodePlan:
    def __init__(self, label, has_sensor, has_actuator):
        self.label = label
        self.variables = ("x", "y")
        self.has_sensor = has_sensor
        self.has_actuator = has_actuator


class _Gen:
    def __init__(self, rng, labels, keys, has_mix):
        self.rng = rng
        self.labels = labels
        self.keys = keys
        self.has_mix = has_mix

    def term(self, plan, depth=2):
        r = self.rng
        options = ["int", "atom", "var"]
        if plan.has_sensor:
            options.append("sensor")
        if depth > 0:
            options.append("add")
            if self.has_mix:
                options.append("mix")
            if self.keys:
                options.append("enc")
        pick = r.choice(options)
        if pick == "int":
            return Lit(r.randint(0, 3))
        if pick == "atom":
            return Lit(Atom(r.choice(ATOMS)))
        if pick == "var":
            return Var(r.choice(plan.variables))
        if pick == "sensor":
            return SensorLoc(1)
        if pick == "add":
            return App("add", (self.term(plan, depth - 1),
                               self.term(plan, depth - 1)))
        if pick == "mix":
            return App("mix", (self.term(plan, depth - 1),
                               self.term(plan, depth - 1)))
        return EncTerm((self.term(plan, depth - 1),), self.keys[0])

    def bool_term(self, plan):
        r = self.rng
        if r.random() < 0.3:
            return Lit(Atom(r.choice(("true", "false"))))
        op = r.choice(("eq", "le", "ge"))
        return App(op, (self.term(plan, 1), self.term(plan, 1)))

    def chain(self, plan, budget, tail):
        """A prefix chain consuming at most `budget` prefixes, ending in
        `tail` (nil or an iteration call)."""
        r = self.rng
        if budget <= 0:
            return tail, 0
        options = ["assign", "out", "in"]
        if plan.has_actuator:
            options.append("act")
        if self.keys:
            options.append("decrypt")
        if budget >= 3:
            options.append("cond")
        pick = r.choice(options)
        if pick == "cond":
            used = 1
            then, w = self.chain(plan, (budget - 1) // 2, tail)
            used += w
            els, w = self.chain(plan, budget - used, tail)
            used += w
            return PCond(self.bool_term(plan), then, els), used
        cont, used = self.chain(plan, budget - 1, tail)
        used += 1
        if pick == "assign":
            return PAssign(r.choice(plan.variables), self.term(plan), cont), used
        if pick == "out":
            terms = tuple(self.term(plan)
                          for _ in range(r.randint(1, 2)))
            count = r.randint(1, min(2, len(self.labels)))
            targets = tuple(r.sample(self.labels, count))
            return POut(terms, targets, cont), used
        if pick == "in":
            match = (Lit(Atom(r.choice(ATOMS))),) if r.random() < 0.4 else ()
            binders = tuple(r.sample(plan.variables, r.randint(1, 2)))
            return PIn(match, binders, cont), used
        if pick == "act":
            return PActCmd(2, r.choice(ACTIONS), cont), used
        return PDecrypt(Var(r.choice(plan.variables)), (),
                        (r.choice(plan.variables),), self.keys[0], cont), used

    def proc(self, plan, budget):
        if self.rng.random() < 0.5:
            body, used = self.chain(plan, budget - 1, PCall("h"))
            return PIter("h", body), used + 1
        return self.chain(plan, budget, PNil())


def random_system(seed: int) -> System:
    rng = random.Random(seed)
    n_nodes = rng.randint(1, 3)
    labels = tuple("n%d" % i for i in range(n_nodes))
    keys = ("kk",) if rng.random() < 0.6 else ()
    has_mix = rng.random() < 0.5
    functions = FunctionTable([FunSig("mix", 2)] if has_mix else [])
    gen = _Gen(rng, labels, keys, has_mix)

    plans = [_NodePlan(lab, rng.random() < 0.7, rng.random() < 0.4)
             for lab in labels]
    budget = rng.randint(3, 12)
    shares = [0] * n_nodes
    for _ in range(budget):
        shares[rng.randrange(n_nodes)] += 1

    nodes = []
    scripts = []
    for plan, share in zip(plans, shares):
        sensors = ()
        actuators = ()
        if plan.has_sensor:
            sensors = ((1, SIter("s", SProbe(1, SCall("s")))),)
            mode = rng.choice(("cycle", "hold", "stuck"))
            values = tuple(rng.choice((rng.randint(0, 5),
                                       Atom(rng.choice(ATOMS))))
                           for _ in range(rng.randint(1, 3)))
            scripts.append(((plan.label, 1), Script(values, mode)))
        if plan.has_actuator:
            actuators = ((2, AIter("a", AAwait(2, ACTIONS, ACall("a")))),)
        procs = []
        remaining = share
        for _ in range(rng.randint(1, 2)):
            if remaining <= 0:
                break
            p, used = gen.proc(plan, remaining)
            remaining -= used
            procs.append(p)
        if not procs:
            procs.append(PNil())
        nodes.append(NodeDef(plan.label, plan.variables, sensors, actuators,
                             tuple(procs)))

    system = System(tuple(nodes), functions, keys, CompRelation("all"),
                    tuple(scripts), (), None)
    problems = well_formed(system)
    if problems:
        raise AssertionError("seed %d generated a bad system: %s"
                             % (seed, problems))
    return system

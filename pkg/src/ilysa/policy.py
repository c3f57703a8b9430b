"""Security and usage verdicts over an analysis estimate.

Every check here is a read-only pass over a frozen estimate (see cfa). The
flow checks share one schema: classify each abstract value carried by a
network edge with a two-valued tagging scheme, then require a predicate of
(tag, sender, receiver) on every edge position. Secrecy, clearance levels and
confined-data propagation are instances of that schema; sensor and actuator
usage read single estimate components directly.

Because the estimate over-approximates behaviour, a failing verdict means the
flow MAY happen (witnesses are labelled may-flow); a passing verdict is a
guarantee for every run of the system.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, List, Optional, Tuple

from .treegram import (
    AbstractValue, TagScheme, apply_tagging, min_tree, render_tree,
    derivable_sensor_leaves, SensorSym, tree_to_json,
)
from .syntax import PolicyConfig, System
from .cfa import Estimate, WhatIfResult, what_if_comp

__all__ = [
    "PolicyError", "Witness", "Verdict",
    "secrecy_scheme", "confinement_scheme",
    "check_well_propagation", "check_confidentiality", "check_levels",
    "check_selective_propagation", "check_flows", "run_policy",
    "validate_policy", "policy_to_json", "policy_from_json",
    "Ingredient", "check_ingredient",
    "SensorUsage", "check_sensor_usage",
    "ActuatorUsage", "check_actuator_usage",
    "WhatIfResult", "what_if_comp",
]


class PolicyError(ValueError):
    """A policy configuration that cannot be checked against this estimate."""


# ---------------------------------------------------------------------------
# verdicts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Witness:
    """One offending edge position. `value` is None for checks that do not
    look at carried data (levels, declared flows)."""
    sender: str
    receiver: str
    position: Optional[int]
    value: Optional[AbstractValue]
    tag: str
    note: str = ""

    def describe(self) -> str:
        where = "%s -> %s" % (self.sender, self.receiver)
        if self.position is not None:
            where += " pos %d" % (self.position + 1)
        bits = ["may-flow %s" % where]
        if self.value is not None:
            t = min_tree(self.value)
            shown = render_tree(t) if t is not None else self.value.start.name
            bits.append("value %s" % shown)
        bits.append("tagged %s" % self.tag if self.value is not None else self.tag)
        if self.note:
            bits.append(self.note)
        return ": ".join([bits[0], ", ".join(bits[1:])])

    def to_json(self) -> dict:
        out: dict = {
            "sender": self.sender,
            "receiver": self.receiver,
            "position": None if self.position is None else self.position + 1,
            "tag": self.tag,
            "kind": "may-flow",
        }
        if self.note:
            out["note"] = self.note
        if self.value is not None:
            out["value"] = self.value.to_json()
            t = min_tree(self.value)
            if t is not None:
                out["witness_tree"] = tree_to_json(t)
        return out


@dataclass(frozen=True)
class Verdict:
    name: str
    passed: bool
    witnesses: Tuple[Witness, ...] = ()
    rule: str = ""

    def __post_init__(self):
        if self.passed != (not self.witnesses):
            raise ValueError("a verdict passes exactly when it has no witnesses")

    def describe(self) -> str:
        head = "%s: %s" % (self.name, "PASS" if self.passed else "FAIL")
        if self.rule:
            head += "  (%s)" % self.rule
        lines = [head]
        for w in self.witnesses:
            lines.append("  " + w.describe())
        return "\n".join(lines)

    def to_json(self) -> dict:
        out: dict = {
            "policy": self.name,
            "pass": self.passed,
            "witnesses": [w.to_json() for w in self.witnesses],
        }
        if self.rule:
            out["rule"] = self.rule
        return out


# ---------------------------------------------------------------------------
# the propagation schema and its instances
# ---------------------------------------------------------------------------

def secrecy_scheme(cfg: PolicyConfig) -> TagScheme:
    """Secret readings stay secret through ordinary function application and
    are laundered by encryption or by a declared anonymiser."""
    return TagScheme.make(cfg.secret_map(), cutters=cfg.anonymisers,
                          cut_enc=True, positive="secret", negative="public")


def confinement_scheme(cfg: PolicyConfig) -> TagScheme:
    """Confined readings are laundered by the declared anonymisation
    functions; listing `enc` among them makes encryption launder too."""
    return TagScheme.make(cfg.confined_map(), cutters=cfg.anonymisers,
                          cut_enc=False, positive="confined", negative="open")


def check_well_propagation(est: Estimate, scheme: TagScheme,
                           pred: Callable[[str, str, str], bool],
                           name: str = "well-propagation",
                           rule: str = "") -> Verdict:
    """The generic schema: every abstract value in every position of every
    predicted message must satisfy pred(tag, sender, receiver)."""
    witnesses: List[Witness] = []
    for receiver in sorted(est.kappa):
        for entry in est.kappa_entries(receiver):
            for i, position in enumerate(entry.positions):
                for start in sorted(position, key=lambda n: n.name):
                    value = est.av(start)
                    tag = apply_tagging(value, scheme)
                    if not pred(tag, entry.sender, receiver):
                        witnesses.append(Witness(entry.sender, receiver,
                                                 i, value, tag))
    return Verdict(name, not witnesses, tuple(witnesses), rule)


def check_confidentiality(est: Estimate, cfg: PolicyConfig) -> Verdict:
    """No message position may carry data tagged secret, i.e. data exposing
    a secret sensor's reading outside an encryption."""
    return check_well_propagation(
        est, secrecy_scheme(cfg), lambda tag, s, r: tag == "public",
        name="confidentiality",
        rule="every sent value must tag public")


def check_levels(est: Estimate, cfg: PolicyConfig) -> Verdict:
    """Clearance: a message may only flow upward, level(sender) <=
    level(receiver). Tags are ignored. Every label on a predicted edge must
    have a level assigned."""
    levels = cfg.level_map()
    witnesses: List[Witness] = []
    for receiver in sorted(est.kappa):
        for entry in est.kappa_entries(receiver):
            for label in (entry.sender, receiver):
                if label not in levels:
                    raise PolicyError("no level assigned to %s" % label)
            ls, lr = levels[entry.sender], levels[receiver]
            if ls > lr:
                witnesses.append(Witness(
                    entry.sender, receiver, None, None, "level",
                    "level(%s)=%d > level(%s)=%d"
                    % (entry.sender, ls, receiver, lr)))
    return Verdict("levels", not witnesses, tuple(witnesses),
                   rule="allowed iff level(sender) <= level(receiver)")


def check_selective_propagation(est: Estimate, cfg: PolicyConfig) -> Verdict:
    """Confined data may travel only between nodes of the allowed set; data
    laundered by an anonymiser is open and unrestricted."""
    allowed = frozenset(cfg.allowed)

    def pred(tag: str, sender: str, receiver: str) -> bool:
        return tag != "confined" or (sender in allowed and receiver in allowed)

    return check_well_propagation(
        est, confinement_scheme(cfg), pred,
        name="selective-propagation",
        rule="confined values stay inside {%s}" % ", ".join(sorted(allowed)))


def check_flows(est: Estimate, cfg: PolicyConfig) -> Verdict:
    """Declared flows: a sender with a declared receiver set may only reach
    those receivers. Senders without a declared row are unconstrained."""
    flows = cfg.flow_map()
    witnesses: List[Witness] = []
    for receiver in sorted(est.kappa):
        for entry in est.kappa_entries(receiver):
            permitted = flows.get(entry.sender)
            if permitted is not None and receiver not in permitted:
                witnesses.append(Witness(
                    entry.sender, receiver, None, None, "flow",
                    "declared receivers: {%s}" % ", ".join(sorted(permitted))))
    return Verdict("declared-flows", not witnesses, tuple(witnesses),
                   rule="predicted edges within the declared receiver sets")


def run_policy(est: Estimate, cfg: PolicyConfig) -> List[Verdict]:
    """Run every check the configuration enables. An empty configuration
    enables nothing and yields no verdicts."""
    out: List[Verdict] = []
    if cfg.secret:
        out.append(check_confidentiality(est, cfg))
    if cfg.levels:
        out.append(check_levels(est, cfg))
    if cfg.confined or cfg.allowed:
        out.append(check_selective_propagation(est, cfg))
    if cfg.flows:
        out.append(check_flows(est, cfg))
    return out


def validate_policy(system: System, cfg: PolicyConfig) -> List[str]:
    """Names in the policy must refer to declared nodes, sensors and
    functions. Returns the offending references."""
    errs: List[str] = []
    labels = set(system.labels())
    sensors = {node.label: set(node.sensor_ids()) for node in system.nodes}
    functions = {sig.name for sig in system.functions.declared()}

    def check_sensor_sets(pairs, what):
        for label, ids in pairs:
            if label not in labels:
                errs.append("%s: unknown node %s" % (what, label))
                continue
            for i in ids:
                if i not in sensors[label]:
                    errs.append("%s: node %s has no sensor #%d" % (what, label, i))

    check_sensor_sets(cfg.secret, "secret")
    check_sensor_sets(cfg.confined, "confined")
    for f in cfg.anonymisers:
        if f != "enc" and f not in functions:
            errs.append("anonymisers: unknown function %s" % f)
    for label, _ in cfg.levels:
        if label not in labels:
            errs.append("levels: unknown node %s" % label)
    for label in cfg.allowed:
        if label not in labels:
            errs.append("allowed: unknown node %s" % label)
    for sender, receivers in cfg.flows:
        if sender not in labels:
            errs.append("flows: unknown node %s" % sender)
        for r in receivers:
            if r not in labels:
                errs.append("flows: unknown node %s" % r)
    return errs


# ---------------------------------------------------------------------------
# policy config as a standalone JSON document
# ---------------------------------------------------------------------------

def policy_to_json(cfg: PolicyConfig) -> str:
    obj = {
        "secret": {lab: sorted(ids) for lab, ids in cfg.secret},
        "confined": {lab: sorted(ids) for lab, ids in cfg.confined},
        "anonymisers": sorted(cfg.anonymisers),
        "levels": {lab: lv for lab, lv in cfg.levels},
        "allowed": sorted(cfg.allowed),
        "flows": {lab: sorted(rs) for lab, rs in cfg.flows},
    }
    return json.dumps({k: v for k, v in obj.items() if v},
                      sort_keys=True, indent=1)


def policy_from_json(text: str) -> PolicyConfig:
    obj = json.loads(text)
    if not isinstance(obj, dict):
        raise PolicyError("policy document must be a JSON object")
    known = {"secret", "confined", "anonymisers", "levels", "allowed", "flows"}
    for k in obj:
        if k not in known:
            raise PolicyError("unknown policy field %r" % k)

    def sensor_sets(field) -> Tuple[Tuple[str, Tuple[int, ...]], ...]:
        raw = obj.get(field, {})
        return tuple(sorted((lab, tuple(sorted(int(i) for i in ids)))
                            for lab, ids in raw.items()))

    return PolicyConfig(
        secret=sensor_sets("secret"),
        confined=sensor_sets("confined"),
        anonymisers=tuple(sorted(obj.get("anonymisers", ()))),
        levels=tuple(sorted((lab, int(lv))
                            for lab, lv in obj.get("levels", {}).items())),
        allowed=tuple(sorted(obj.get("allowed", ()))),
        flows=tuple(sorted((lab, tuple(sorted(rs)))
                           for lab, rs in obj.get("flows", {}).items())),
    )


# ---------------------------------------------------------------------------
# usage properties
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Ingredient:
    """Whether readings of one sensor can end up in the data a node handles,
    with the grammar that exhibits it."""
    label: str
    sensor: int
    target: str
    found: bool
    witness: Optional[AbstractValue] = None

    def describe(self) -> str:
        head = "sensor #%d of %s %s an ingredient of %s" % (
            self.sensor, self.label,
            "is" if self.found else "is not", self.target)
        if self.witness is not None:
            head += " (via %s)" % self.witness.start.name
        return head


def check_ingredient(est: Estimate, label: str, sensor: int,
                     target: str) -> Ingredient:
    """True iff some value the target node handles can derive a reading of
    the given sensor, decided on the grammars."""
    wanted = SensorSym(sensor, label)
    for av in sorted(est.theta_avs(target), key=lambda a: a.start.name):
        if wanted in derivable_sensor_leaves(av):
            return Ingredient(label, sensor, target, True, av)
    return Ingredient(label, sensor, target, False, None)


@dataclass(frozen=True)
class SensorUsage:
    label: str
    sensor: int
    used: bool
    sightings: Tuple[str, ...] = ()

    def describe(self) -> str:
        if not self.used:
            return "sensor #%d of %s is never used" % (self.sensor, self.label)
        return "sensor #%d of %s is used (%s)" % (
            self.sensor, self.label, "; ".join(self.sightings))


def check_sensor_usage(est: Estimate, label: str, sensor: int) -> SensorUsage:
    """A sensor is used when some reading of it can reach a computed value,
    a store location other than its own, or a message. The sensor's own store
    location always holds a reading and does not count."""
    wanted = SensorSym(sensor, label)
    sightings: List[str] = []

    def derives(av: AbstractValue) -> bool:
        return wanted in derivable_sensor_leaves(av)

    for lab in sorted(est.theta):
        if any(derives(av) for av in est.theta_avs(lab)):
            sightings.append("computed at %s" % lab)
    for lab in sorted(est.sigma):
        for loc in sorted(est.sigma[lab], key=str):
            if lab == label and loc == sensor:
                continue
            if any(derives(est.av(s)) for s in est.sigma_starts(lab, loc)):
                sightings.append("stored at %s location %s" % (
                    lab, loc if isinstance(loc, str) else "#%d" % loc))
    for lab in sorted(est.kappa):
        for entry in est.kappa_entries(lab):
            if any(derives(est.av(s))
                   for pos in entry.positions for s in pos):
                sightings.append("sent %s -> %s" % (entry.sender, lab))
    return SensorUsage(label, sensor, bool(sightings), tuple(sightings))


@dataclass(frozen=True)
class ActuatorUsage:
    label: str
    actuator: int
    actions: FrozenSet[str]

    @property
    def never_used(self) -> bool:
        return not self.actions

    def describe(self) -> str:
        if self.never_used:
            return "actuator %d of %s is never used" % (self.actuator, self.label)
        return "actuator %d of %s fires {%s}" % (
            self.actuator, self.label, ", ".join(sorted(self.actions)))


def check_actuator_usage(est: Estimate, label: str, actuator: int) -> ActuatorUsage:
    """Reads the action component: the estimate's upper bound on the commands
    this actuator can ever be sent."""
    return ActuatorUsage(label, actuator, est.alpha_actions(label, actuator))

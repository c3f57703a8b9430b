"""Toolchain for networks of store-sharing smart devices.

The package covers the whole pipeline: a textual format for systems of
labelled nodes (processes, sensors, actuators and a shared per-node store),
a small-step simulator that tracks the provenance of every value, a flow
analysis over regular tree grammars with an independent result checker, and
security policy verdicts computed from the analysis result.
"""

from .treegram import (
    Atom, TRUE, FALSE, LitValue, render_lit, parse_lit,
    SensorSym, ValueSym, FunSym, EncSym, KeySym, Symbol,
    NonTerminal, Production, ProductionTable, AbstractValue,
    SensorLeaf, ValueLeaf, FunNode, EncNode, ProvTree,
    tree_to_json, render_tree, tree_depth, tree_size,
    lang_member, lang_equal, enumerate_language, min_tree, is_recursive,
    extract_decryption, build_encryption,
    TagScheme, tag_tree, apply_tagging, tagging_agreement_check,
    grammar_to_json, grammar_from_json,
)
from .syntax import (
    Lit, SensorLoc, Var, App, EncTerm, Term,
    PNil, POut, PIn, PCond, PAssign, PActCmd, PDecrypt, PIter, PCall, Process,
    SNil, STau, SProbe, SIter, SCall, SensorBody,
    ANil, ATau, AAwait, ADo, AIter, ACall, ActuatorBody,
    FunSig, FunctionTable, Script, CompRelation, PolicyConfig,
    NodeDef, System,
    free_variables, well_formed, WellFormedError,
    term_to_source, process_to_source, sensor_to_source, actuator_to_source,
    system_to_source,
)
from .parser import ParseError, parse_system, parse_term, parse_process
from .semantics import (
    Rec, Cipher, IVal, Value, render_value, value_to_json, ival_to_json,
    EvalError, EvalStuck, eval_term,
    Config, NodeState, ProcState, SensorState, ActuatorState, POutV,
    initial_config, enabled, step, Redex, TraceEvent,
    run, RunResult, explore, ExploreResult,
    trace_to_jsonl, config_to_json, iter_store_entries, iter_inflight,
)
from .cfa import (
    Estimate, KappaEntry, solve, solve_with_noise, check_estimate,
    estimate_join, estimate_meet, estimate_leq,
    soundness_audit, what_if_comp, WhatIfResult,
)
from .policy import (
    PolicyError, Witness, Verdict,
    secrecy_scheme, confinement_scheme, check_well_propagation,
    check_confidentiality, check_selective_propagation,
    check_levels, check_flows, run_policy, validate_policy,
    policy_to_json, policy_from_json,
    Ingredient, check_ingredient, SensorUsage, check_sensor_usage,
    ActuatorUsage, check_actuator_usage,
)

__version__ = "0.1.0"

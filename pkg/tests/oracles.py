"""Independent oracles for the test suite.

Everything here is deliberately naive and self-contained: plain dicts,
tuples and exhaustive enumeration, no imports from the package under test.
Expected values in the tests are computed by these functions (or were frozen
from a run of them) so that the implementation is checked against a second,
independent derivation rather than against itself.

Tree representation used by the oracles: a nested tuple (root, children)
where root is the terminal symbol's name (a string) and children is a tuple
of trees. Encryption keys are folded into the terminal name by the caller.

Grammar representation: a dict mapping a head name to a list of
(root, children-names) pairs.
"""

import itertools


def oracle_trees(prods, start, max_depth):
    """All trees derivable from `start` with depth <= max_depth, by brute
    force. Exponential; keep max_depth tiny."""
    if max_depth <= 0:
        return set()
    out = set()
    for root, children in prods.get(start, ()):
        if not children:
            out.add((root, ()))
            continue
        sub = [oracle_trees(prods, c, max_depth - 1) for c in children]
        if any(not s for s in sub):
            continue
        for combo in itertools.product(*sub):
            out.add((root, combo))
    return out


def oracle_depth(tree):
    root, children = tree
    if not children:
        return 1
    return 1 + max(oracle_depth(c) for c in children)


def oracle_member(prods, start, tree):
    """Membership by generate-and-check at the tree's own depth."""
    return tree in oracle_trees(prods, start, oracle_depth(tree))


def oracle_tag(tree, marked_leaves, cutting_roots):
    """Tree-level tagging: True (positive) iff a leaf in marked_leaves is
    visible, where visibility stops below roots in cutting_roots."""
    root, children = tree
    if not children:
        return root in marked_leaves
    if root in cutting_roots:
        return False
    return any(oracle_tag(c, marked_leaves, cutting_roots) for c in children)


def oracle_random_grammar(rng, n_heads=4, n_prods=6, max_arity=2):
    """A random grammar over abstract head names H0..Hn and terminal names
    t0..; every head gets at least one production so the grammar stays
    productive often enough to be interesting."""
    heads = ["H%d" % i for i in range(n_heads)]
    prods = {h: [] for h in heads}
    for i in range(n_prods):
        head = rng.choice(heads)
        arity = rng.randint(0, max_arity)
        root = "t%d/%d" % (rng.randint(0, 3), arity)
        children = tuple(rng.choice(heads) for _ in range(arity))
        prods[head].append((root, children))
    for h in heads:
        if not prods[h]:
            prods[h].append(("t9/0", ()))
    return prods


# ---------------------------------------------------------------------------
# hand-derived state space of the two-node handshake system (corpus/ping):
#
#   node alice { store {}; proc = out(ping) to {bob}. nil; }
#   node bob   { store { m }; proc = in(; m). nil; }
#
# s0: alice ready to send, bob waiting, no message in flight
# s1: message (ping) pending for {bob}, alice done, bob waiting
# s2: message consumed, bob's store maps m to ping, both done
#
# Exactly one redex is enabled in s0 (evaluate-and-send) and one in s1
# (deliver); s2 is terminal. So:
PING_STATE_COUNT = 3
PING_TERMINAL_COUNT = 1
PING_MAX_STEPS = 2
PING_EVENT_KINDS = ["Evaluated", "MsgSent", "MsgDelivered"]

# ---------------------------------------------------------------------------
# hand-derived state space of the two-sender race (corpus/race):
#
#   node a { store {}; proc = out(hi) to {c}. nil; }
#   node b { store {}; proc = out(lo) to {c}. nil; }
#   node c { store { m }; proc = in(; m). nil; }
#
# interleavings: a-then-b or b-then-a for the sends, then one delivery from
# either pending message while the other stays undeliverable (c's input is
# consumed). Reachable distinct states:
#   s0 (start)
#   sA (a sent), sB (b sent), sAB (both sent)
#   from sA: deliver hi -> dA; from sB: deliver lo -> dB
#   from sAB: deliver hi -> dAhaslo-pending; deliver lo -> dBhashi-pending
#   from dA: b still can send -> dA+b-pending; from dB: a sends -> dB+a-pending
#   dA+b-pending == deliver-hi-from-sAB state; dB+a-pending == deliver-lo one
# Count: s0, sA, sB, sAB, dA, dB, dAB_hi, dAB_lo = 8 states, 2 terminal
# (dAB_hi and dAB_lo: nothing enabled, one message parked forever).
RACE_STATE_COUNT = 8
RACE_TERMINAL_COUNT = 2

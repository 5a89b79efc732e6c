"""Random instances, circuits, queries and fixtures shared by the test modules."""

from __future__ import annotations

import re
from fractions import Fraction

from uncertain.circuits import CircuitBuilder
from uncertain.instances import Conj, Disj, Ev, Neg, PCCInstance, PCInstance, Schema, TIDInstance, fact
from uncertain import prxml

SCHEMA = Schema.of(R=2, S=1, T=1)


def trip_table(p_pods=0.5, p_stoc=0.5) -> PCInstance:
    return PCInstance.build(
        [
            (fact("Trip", "CDG", "MEL"), "pods"),
            (fact("Trip", "MEL", "CDG"), "pods & !stoc"),
            (fact("Trip", "MEL", "PDX"), "pods & stoc"),
            (fact("Trip", "CDG", "PDX"), "!pods & stoc"),
            (fact("Trip", "PDX", "CDG"), "stoc"),
        ],
        {"pods": p_pods, "stoc": p_stoc},
    )


def person_doc() -> prxml.PrxmlDoc:
    R = prxml.regular
    return prxml.PrxmlDoc(
        R(
            "Q298423",
            R("given name", prxml.mux((R("Bradley"), 0.4), (R("Chelsea"), 0.6))),
            R("surname", prxml.cie((R("Manning"), "e_Jane"))),
            R("place of birth", prxml.cie((R("Crescent"), "e_Jane"))),
            prxml.ind((R("occupation", R("musician")), 0.4)),
        ),
        {"e_Jane": 0.9},
    )


def _random_fact(rng, elems):
    r = rng.choice("RRST")
    if r == "R":
        return fact("R", rng.choice(elems), rng.choice(elems))
    return fact(r, rng.choice(elems))


def _prob(rng, exact=False):
    if exact:
        return Fraction(rng.randint(0, 10), 10)
    return rng.choice([0.5, 0.3, 0.9, round(rng.random(), 3), 0.0, 1.0])


def random_tid(rng, max_facts=8, n_elems=4, exact=False) -> TIDInstance:
    elems = [f"c{i}" for i in range(rng.randint(1, n_elems))]
    facts = {_random_fact(rng, elems) for _ in range(rng.randint(0, max_facts))}
    return TIDInstance.build([(f, _prob(rng, exact)) for f in sorted(facts)], SCHEMA)


def random_formula(rng, events, depth=2):
    if depth == 0 or rng.random() < 0.4:
        e = Ev(rng.choice(events))
        return Neg(e) if rng.random() < 0.3 else e
    parts = tuple(random_formula(rng, events, depth - 1) for _ in range(rng.randint(2, 3)))
    node = Conj(parts) if rng.random() < 0.5 else Disj(parts)
    return Neg(node) if rng.random() < 0.15 else node


def random_pc(rng, max_facts=7, max_events=5, n_elems=4, exact=False) -> PCInstance:
    events = [f"e{i}" for i in range(rng.randint(1, max_events))]
    elems = [f"c{i}" for i in range(rng.randint(1, n_elems))]
    facts = {_random_fact(rng, elems) for _ in range(rng.randint(0, max_facts))}
    pairs = [(f, random_formula(rng, events)) for f in sorted(facts)]
    probs = {e: _prob(rng, exact) for e in events}
    return PCInstance.build(pairs, probs, SCHEMA)


def random_circuit(rng, n_events=4, n_gates=8, fan_in=3):
    """Random circuit whose output is its last gate; every event is an input."""
    b = CircuitBuilder()
    ids = [b.input(f"x{i}") for i in range(n_events)]
    for _ in range(n_gates):
        kind = rng.choice(["and", "or", "or", "and", "not", "const"])
        if kind == "not":
            ids.append(b.not_(rng.choice(ids)))
        elif kind == "const":
            ids.append(b.const(rng.random() < 0.5))
        else:
            k = rng.randint(1, min(fan_in, len(ids)))
            args = rng.sample(ids, k)
            ids.append(b.and_(args) if kind == "and" else b.or_(args))
    return b.build(len(b.gates) - 1)


def random_pcc(rng, max_facts=7, n_events=5, n_gates=8, n_elems=4, exact=False) -> PCCInstance:
    events = [f"x{i}" for i in range(rng.randint(1, n_events))]
    b = CircuitBuilder()
    ids = [b.input(e) for e in events]
    for _ in range(rng.randint(0, n_gates)):
        kind = rng.choice(["and", "or", "not"])
        if kind == "not":
            ids.append(b.not_(rng.choice(ids)))
        else:
            args = rng.sample(ids, rng.randint(1, min(3, len(ids))))
            ids.append(b.and_(args) if kind == "and" else b.or_(args))
    elems = [f"c{i}" for i in range(rng.randint(1, n_elems))]
    facts = {_random_fact(rng, elems) for _ in range(rng.randint(0, max_facts))}
    gates = {f: rng.choice(ids) for f in sorted(facts)}
    c = b.build(len(b.gates) - 1)
    return PCCInstance(SCHEMA, gates, c, {e: _prob(rng, exact) for e in c.events})


_VARS = ["x", "y", "z"]


def random_cq_text(rng, max_atoms=3, constants=("c0", "c1")) -> str:
    atoms = []
    for _ in range(rng.randint(1, max_atoms)):
        rel = rng.choice("RRST")
        arity = 2 if rel == "R" else 1

        def term():
            if rng.random() < 0.12:
                return '"' + rng.choice(constants) + '"'
            return rng.choice(_VARS)

        atoms.append(f"{rel}({', '.join(term() for _ in range(arity))})")
    body = " & ".join(atoms)
    used = [v for v in _VARS if _mentions(atoms, v)]
    return f"exists {' '.join(used)}. {body}" if used else body


def _mentions(atoms, v) -> bool:
    return any(re.search(rf"[(, ]{v}[,)]", a) for a in atoms)


def random_ucq_text(rng, max_cqs=2, max_atoms=3) -> str:
    return " | ".join(random_cq_text(rng, max_atoms) for _ in range(rng.randint(1, max_cqs)))


def random_bool_query_text(rng) -> str:
    """Top-level Boolean combination, negation included."""
    a, b = random_cq_text(rng, 2), random_cq_text(rng, 2)
    return rng.choice([f"!({a})", f"({a}) & !({b})", f"!({a}) | ({b})", f"!(({a}) | ({b}))"])


HARD_QUERY = "exists x y. R(x) & S(x,y) & T(y)"
HARD_SCHEMA = Schema.of(R=1, S=2, T=1)


def random_hard_tid(rng, n_elems=3, density=0.5, exact=False) -> TIDInstance:
    """TID over R/1, S/2, T/1, the schema of the hard query."""
    elems = [f"c{i}" for i in range(rng.randint(1, n_elems))]
    facts = set()
    for a in elems:
        if rng.random() < density:
            facts.add(fact("R", a))
        if rng.random() < density:
            facts.add(fact("T", a))
        for b in elems:
            if rng.random() < density / 2:
                facts.add(fact("S", a, b))
    return TIDInstance.build([(f, _prob(rng, exact)) for f in sorted(facts)], HARD_SCHEMA)


def bounded_scope_doc(n: int, seed: int = 0) -> prxml.PrxmlDoc:
    """A list of ``n`` records, each with its own correlated pair of fields.

    Every event occurs only inside one record, so node scopes stay at most 1
    however long the list gets.
    """
    import random

    rng = random.Random(seed)
    R = prxml.regular
    records = []
    events = {}
    for i in range(n):
        e = f"e{i}"
        events[e] = Fraction(rng.randint(1, 9), 10)
        p = Fraction(rng.randint(1, 9), 10)
        records.append(
            R(
                "record",
                R("name", prxml.mux((R(f"v{i}a"), p), (R(f"v{i}b"), (1 - p) / 2))),
                R("left", prxml.cie((R("x"), e))),
                R("right", prxml.cie((R("y"), f"!{e}"))),
                prxml.ind((R("note"), Fraction(1, 2))),
            )
        )
    return prxml.PrxmlDoc(R("list", *records), events)


def random_doc(rng, max_nodes=9, n_events=2, exact=True) -> prxml.PrxmlDoc:
    """Small random document mixing all node kinds; labels drawn from a, b, c."""
    R = prxml.regular
    events = {f"e{i}": Fraction(rng.randint(0, 4), 4) for i in range(n_events)}
    budget = [max_nodes]

    def prob():
        return Fraction(rng.randint(0, 4), 4) if exact else rng.choice([0.25, 0.5, 0.75])

    def node(depth):
        budget[0] -= 1
        kids = []
        while budget[0] > 0 and depth < 3 and rng.random() < 0.6:
            kind = rng.choice(["regular", "ind", "mux", "cie"])
            if kind == "regular":
                kids.append(node(depth + 1))
            elif kind == "ind":
                kids.append(prxml.ind(*[(node(depth + 1), prob()) for _ in range(rng.randint(1, 2))]))
            elif kind == "mux":
                k = rng.randint(1, 3)
                ps = [Fraction(rng.randint(0, 3), 3 * k) for _ in range(k)]
                if not exact:
                    ps = [float(p) for p in ps]
                kids.append(prxml.mux(*[(node(depth + 1), p) for p in ps]))
            else:
                conds = []
                for _ in range(rng.randint(1, 2)):
                    lits = [("" if rng.random() < 0.7 else "!") + rng.choice(sorted(events))
                            for _ in range(rng.randint(1, 2))]
                    conds.append((node(depth + 1), " & ".join(lits)))
                kids.append(prxml.cie(*conds))
        return R(rng.choice("abc"), *kids)

    root = node(0)
    if not exact:
        events = {e: float(p) for e, p in events.items()}
    return prxml.PrxmlDoc(root, events)

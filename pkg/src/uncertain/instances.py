"""Relational instances and their uncertain variants.

Certain instances are plain sets of facts.  Uncertain ones attach to each fact
either a probability (TID), a propositional formula over Boolean events
(c-/pc-instances) or a gate of a shared event circuit (pcc-instances).  The
exhaustive world enumeration here is the ground-truth oracle for every other
module, so it is deliberately naive.
"""

from __future__ import annotations

import itertools
import os
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Mapping, Union

from .circuits import Circuit, CircuitBuilder, binarize, evaluate_all
from .errors import (
    AnnotationSyntaxError,
    IncompleteValuationError,
    InputError,
    LimitExceeded,
    SchemaError,
)

DEFAULT_MAX_EVENTS = 20

Prob = Union[float, Fraction]


def max_events() -> int:
    """Brute-force cap on the number of events, overridable by UNCERTAIN_MAX_EVENTS."""
    raw = os.environ.get("UNCERTAIN_MAX_EVENTS")
    if raw is None:
        return DEFAULT_MAX_EVENTS
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"UNCERTAIN_MAX_EVENTS must be an integer, got {raw!r}") from None


def check_prob(p, what: str = "probability") -> Prob:
    if isinstance(p, bool) or not isinstance(p, (int, float, Fraction)):
        raise InputError(f"{what} must be a number, got {p!r}")
    if not 0 <= p <= 1:
        raise InputError(f"{what} must lie in [0,1], got {p}")
    return p


# -- annotation formulas ------------------------------------------------------


@dataclass(frozen=True)
class Ev:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Neg:
    arg: "Formula"

    def __str__(self):
        if isinstance(self.arg, Ev):
            return f"!{self.arg}"
        return f"!({self.arg})"


@dataclass(frozen=True)
class Conj:
    parts: tuple

    def __str__(self):
        return "(" + " & ".join(map(str, self.parts)) + ")"


@dataclass(frozen=True)
class Disj:
    parts: tuple

    def __str__(self):
        return "(" + " | ".join(map(str, self.parts)) + ")"


@dataclass(frozen=True)
class Truth:
    value: bool

    def __str__(self):
        return "T" if self.value else "F"


Formula = Union[Ev, Neg, Conj, Disj, Truth]
TRUE = Truth(True)
FALSE = Truth(False)


def formula_events(f: Formula) -> set[str]:
    if isinstance(f, Ev):
        return {f.name}
    if isinstance(f, Neg):
        return formula_events(f.arg)
    if isinstance(f, (Conj, Disj)):
        out: set[str] = set()
        for p in f.parts:
            out |= formula_events(p)
        return out
    return set()


def eval_formula(f: Formula, v: Mapping[str, bool]) -> bool:
    if isinstance(f, Ev):
        try:
            return bool(v[f.name])
        except KeyError:
            raise IncompleteValuationError(f"no value for event {f.name!r}") from None
    if isinstance(f, Neg):
        return not eval_formula(f.arg, v)
    if isinstance(f, Conj):
        return all(eval_formula(p, v) for p in f.parts)
    if isinstance(f, Disj):
        return any(eval_formula(p, v) for p in f.parts)
    return f.value


_ANN_TOKEN = re.compile(r"\s*(?:(?P<op>[&|!()])|(?P<name>[A-Za-z_][A-Za-z0-9_.\-]*))")


def parse_annotation(text: str) -> Formula:
    """Parse ``lit | ann & ann | ann | ann | (ann)`` with ``lit := name | !name | T | F``.

    ``&`` binds tighter than ``|``; ``!`` may also prefix a parenthesised group.
    """
    tokens: list[tuple[str, str, int]] = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _ANN_TOKEN.match(text, pos)
        if not m or m.end() == pos:
            while text[pos].isspace():
                pos += 1
            raise AnnotationSyntaxError(f"unexpected character {text[pos]!r}", pos)
        start = m.start("op") if m.group("op") else m.start("name")
        tokens.append(("op", m.group("op"), start) if m.group("op") else ("name", m.group("name"), start))
        pos = m.end()
    i = 0

    def peek():
        return tokens[i] if i < len(tokens) else (None, None, len(text))

    def take(value=None):
        nonlocal i
        tok = peek()
        if tok[0] is None or (value is not None and tok[1] != value):
            want = repr(value) if value else "a literal"
            raise AnnotationSyntaxError(f"expected {want}", tok[2])
        i += 1
        return tok

    def disj():
        parts = [conj()]
        while peek()[1] == "|":
            take("|")
            parts.append(conj())
        return parts[0] if len(parts) == 1 else Disj(tuple(parts))

    def conj():
        parts = [unary()]
        while peek()[1] == "&":
            take("&")
            parts.append(unary())
        return parts[0] if len(parts) == 1 else Conj(tuple(parts))

    def unary():
        kind, val, p = peek()
        if val == "!":
            take("!")
            return Neg(unary())
        if val == "(":
            take("(")
            inner = disj()
            take(")")
            return inner
        if kind == "name":
            take()
            if val == "T":
                return TRUE
            if val == "F":
                return FALSE
            return Ev(val)
        raise AnnotationSyntaxError("expected a literal or '('", p)

    if not tokens:
        raise AnnotationSyntaxError("empty annotation", 0)
    result = disj()
    if i != len(tokens):
        raise AnnotationSyntaxError(f"unexpected {tokens[i][1]!r}", tokens[i][2])
    return result


# -- facts and schemas ---------------------------------------------------------


@dataclass(frozen=True, order=True)
class Fact:
    relation: str
    args: tuple[str, ...]

    def __str__(self):
        return f"{self.relation}({','.join(self.args)})"


def fact(relation: str, *args) -> Fact:
    return Fact(relation, tuple(str(a) for a in args))


@dataclass(frozen=True)
class Schema:
    relations: tuple[tuple[str, int], ...]

    def __post_init__(self):
        names = [n for n, _ in self.relations]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate relation names in schema: {names}")
        for n, a in self.relations:
            if not isinstance(a, int) or a < 1:
                raise SchemaError(f"relation {n} must have positive arity, got {a!r}")

    @classmethod
    def of(cls, **arities: int) -> "Schema":
        return cls(tuple(sorted(arities.items())))

    @classmethod
    def infer(cls, facts) -> "Schema":
        seen: dict[str, int] = {}
        for f in facts:
            if seen.setdefault(f.relation, len(f.args)) != len(f.args):
                raise SchemaError(f"relation {f.relation} used with two arities")
        return cls(tuple(sorted(seen.items())))

    def arity(self, name: str) -> int:
        for n, a in self.relations:
            if n == name:
                return a
        raise SchemaError(f"unknown relation {name!r}")

    def __contains__(self, name: str) -> bool:
        return any(n == name for n, _ in self.relations)

    def check(self, f: Fact) -> None:
        if len(f.args) != self.arity(f.relation):
            raise SchemaError(
                f"fact {f} has {len(f.args)} arguments, {f.relation} has arity {self.arity(f.relation)}"
            )

    def to_json(self) -> list:
        return [{"name": n, "arity": a} for n, a in self.relations]


@dataclass(frozen=True)
class Instance:
    """A certain relational instance."""

    schema: Schema
    facts: frozenset

    def __post_init__(self):
        for f in self.facts:
            self.schema.check(f)

    @classmethod
    def of(cls, facts, schema: Schema | None = None) -> "Instance":
        facts = frozenset(facts)
        return cls(schema or Schema.infer(facts), facts)

    def elements(self) -> set[str]:
        return {a for f in self.facts for a in f.args}

    def __len__(self):
        return len(self.facts)

    def __iter__(self):
        return iter(sorted(self.facts))


# -- uncertain instances -------------------------------------------------------


def _merge_annotations(pairs) -> dict[Fact, Formula]:
    out: dict[Fact, Formula] = {}
    for f, ann in pairs:
        if f in out:
            prev = out[f]
            prev_parts = prev.parts if isinstance(prev, Disj) else (prev,)
            out[f] = Disj(prev_parts + (ann,))
        else:
            out[f] = ann
    return out


@dataclass(frozen=True)
class CInstance:
    """Facts annotated with propositional formulas over unvalued Boolean events.

    Duplicate facts are merged by OR-ing their annotations.
    """

    schema: Schema
    annotations: Mapping[Fact, Formula]
    events: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.events)) != len(self.events):
            raise InputError("event names must be unique")
        known = set(self.events)
        for f, ann in self.annotations.items():
            self.schema.check(f)
            unknown = formula_events(ann) - known
            if unknown:
                raise InputError(f"annotation of {f} uses undeclared events {sorted(unknown)}")

    @classmethod
    def build(cls, pairs, events=None, schema: Schema | None = None) -> "CInstance":
        pairs = [(f, parse_annotation(a) if isinstance(a, str) else a) for f, a in pairs]
        ann = _merge_annotations(pairs)
        if events is None:
            events = sorted(set().union(*(formula_events(a) for a in ann.values())) if ann else set())
        return cls(schema or Schema.infer(ann), ann, tuple(events))

    @property
    def facts(self):
        return sorted(self.annotations)


@dataclass(frozen=True)
class PCInstance(CInstance):
    probs: Mapping[str, Prob] = field(default_factory=dict)

    def __post_init__(self):
        super().__post_init__()
        if set(self.probs) != set(self.events):
            raise InputError("every event needs exactly one probability")
        for e, p in self.probs.items():
            check_prob(p, f"probability of event {e}")

    @classmethod
    def build(cls, pairs, probs: Mapping[str, Prob], schema: Schema | None = None) -> "PCInstance":
        pairs = [(f, parse_annotation(a) if isinstance(a, str) else a) for f, a in pairs]
        ann = _merge_annotations(pairs)
        return cls(schema or Schema.infer(ann), ann, tuple(probs), dict(probs))


@dataclass(frozen=True)
class TIDInstance:
    schema: Schema
    probs: Mapping[Fact, Prob]

    def __post_init__(self):
        for f, p in self.probs.items():
            self.schema.check(f)
            check_prob(p, f"probability of {f}")

    @classmethod
    def build(cls, pairs, schema: Schema | None = None) -> "TIDInstance":
        probs: dict[Fact, Prob] = {}
        for f, p in pairs:
            if f in probs:
                raise InputError(f"duplicate fact {f} in TID instance")
            probs[f] = p
        return cls(schema or Schema.infer(probs), probs)

    @property
    def facts(self):
        return sorted(self.probs)


@dataclass(frozen=True)
class PCCInstance:
    """Facts annotated by gates of one shared circuit whose inputs are the events."""

    schema: Schema
    gates: Mapping[Fact, int]
    circuit: Circuit
    probs: Mapping[str, Prob]

    def __post_init__(self):
        n = len(self.circuit.gates)
        for f, g in self.gates.items():
            self.schema.check(f)
            if not isinstance(g, int) or not 0 <= g < n:
                raise InputError(f"fact {f} references missing gate {g!r}")
        if set(self.circuit.events) != set(self.probs):
            raise InputError("circuit inputs must be exactly the declared events")
        for e, p in self.probs.items():
            check_prob(p, f"probability of event {e}")

    @property
    def facts(self):
        return sorted(self.gates)

    @property
    def events(self) -> tuple[str, ...]:
        return tuple(self.probs)

    def binarized(self) -> "PCCInstance":
        c, remap = binarize(self.circuit)
        return PCCInstance(self.schema, {f: remap[g] for f, g in self.gates.items()}, c, self.probs)


def tid_to_pc(tid: TIDInstance) -> PCInstance:
    """One fresh event per fact; the fact is annotated by exactly that event."""
    pairs = []
    probs: dict[str, Prob] = {}
    for i, f in enumerate(sorted(tid.probs)):
        name = f"t{i}"
        pairs.append((f, Ev(name)))
        probs[name] = tid.probs[f]
    return PCInstance(tid.schema, dict(pairs), tuple(probs), probs)


def compile_formula(f: Formula, b: CircuitBuilder) -> int:
    if isinstance(f, Ev):
        return b.input(f.name)
    if isinstance(f, Truth):
        return b.const(f.value)
    if isinstance(f, Neg):
        return b.not_(compile_formula(f.arg, b))
    gates = [compile_formula(p, b) for p in f.parts]
    op = b.and_ if isinstance(f, Conj) else b.or_
    acc = gates[0]
    for g in gates[1:]:
        acc = op((acc, g))
    return acc


def pc_to_pcc(pc: CInstance) -> PCCInstance:
    """Compile annotation formulas into one shared circuit of binary gates."""
    b = CircuitBuilder()
    for e in pc.events:
        b.input(e)
    gates = {f: compile_formula(ann, b) for f, ann in sorted(pc.annotations.items())}
    if not b.gates:
        b.const(True)
    probs = dict(pc.probs) if isinstance(pc, PCInstance) else {e: Fraction(1, 2) for e in pc.events}
    return PCCInstance(pc.schema, gates, b.build(len(b.gates) - 1), probs)


def as_pcc(inst) -> PCCInstance:
    if isinstance(inst, PCCInstance):
        return inst
    if isinstance(inst, TIDInstance):
        inst = tid_to_pc(inst)
    if isinstance(inst, CInstance):
        return pc_to_pcc(inst)
    if isinstance(inst, Instance):
        b = CircuitBuilder()
        t = b.const(True)
        return PCCInstance(inst.schema, {f: t for f in inst.facts}, b.build(t), {})
    raise TypeError(f"not an instance: {type(inst).__name__}")


def prepare_pcc(inst) -> PCCInstance:
    """The pcc-instance the pipeline works on: annotations as a circuit of binary gates."""
    pcc = as_pcc(inst)
    if any(len(g.args) > 2 for g in pcc.circuit.gates if g.kind in ("and", "or")):
        pcc = pcc.binarized()
    return pcc


def instance_events(inst) -> tuple[str, ...]:
    if isinstance(inst, TIDInstance):
        return tid_to_pc(inst).events
    if isinstance(inst, (CInstance, PCCInstance)):
        return tuple(inst.events)
    return ()


def instance_probs(inst) -> dict[str, Prob]:
    if isinstance(inst, TIDInstance):
        return dict(tid_to_pc(inst).probs)
    if isinstance(inst, (PCInstance, PCCInstance)):
        return dict(inst.probs)
    raise TypeError(f"{type(inst).__name__} carries no event probabilities")


# -- possible worlds -----------------------------------------------------------


def world_of(inst, v: Mapping[str, bool]) -> Instance:
    """The certain instance selected by the event valuation ``v``."""
    events = instance_events(inst)
    missing = [e for e in events if e not in v]
    if missing:
        raise IncompleteValuationError(f"valuation does not bind events {missing}")
    if isinstance(inst, TIDInstance):
        inst = tid_to_pc(inst)
    if isinstance(inst, PCCInstance):
        values = evaluate_all(inst.circuit, v)
        kept = [f for f, g in inst.gates.items() if values[g]]
    elif isinstance(inst, CInstance):
        kept = [f for f, ann in inst.annotations.items() if eval_formula(ann, v)]
    elif isinstance(inst, Instance):
        return inst
    else:
        raise TypeError(f"not an instance: {type(inst).__name__}")
    return Instance(inst.schema, frozenset(kept))


def iter_valuations(events) -> Iterator[dict[str, bool]]:
    events = list(events)
    for bits in itertools.product((False, True), repeat=len(events)):
        yield dict(zip(events, bits))


def valuation_prob(v: Mapping[str, bool], probs: Mapping[str, Prob]) -> Prob:
    p: Prob = 1
    for e, val in v.items():
        p = p * (probs[e] if val else 1 - probs[e])
    return p


def _check_cap(n: int, cap: int | None) -> None:
    cap = max_events() if cap is None else cap
    if n > cap:
        raise LimitExceeded(f"{n} events exceed the brute-force cap of {cap}")


def iter_worlds(inst, cap: int | None = None):
    events = instance_events(inst)
    _check_cap(len(events), cap)
    probs = instance_probs(inst)
    if isinstance(inst, TIDInstance):
        inst = tid_to_pc(inst)
    for v in iter_valuations(events):
        yield v, world_of(inst, v), valuation_prob(v, probs)


def enumerate_worlds(inst, cap: int | None = None) -> list[tuple[dict, Instance, Prob]]:
    """All ``2^n`` (valuation, world, probability) triples."""
    return list(iter_worlds(inst, cap))


def query_probability_bruteforce(inst, q, cap: int | None = None) -> Prob:
    """Sum of the probabilities of the worlds on which ``q.holds`` is true."""
    total: Prob = 0
    for _, world, p in iter_worlds(inst, cap):
        if q.holds(world):
            total += p
    return total


# -- JSON ------------------------------------------------------------------------


def _schema_from_json(raw, facts) -> Schema:
    if raw is None:
        return Schema.infer(facts)
    try:
        return Schema(tuple((d["name"], d["arity"]) for d in raw))
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed schema entry: {exc}") from exc


def load_instance(data: Mapping):
    """Build the right instance class from the JSON instance format.

    Facts with ``ann`` give a c-instance (pc-instance when events carry
    ``prob``); facts with ``prob`` give a TID; facts with ``gate`` plus a
    top-level ``circuit`` give a pcc-instance; bare facts give a certain instance.
    """
    if not isinstance(data, Mapping) or "facts" not in data:
        raise InputError("instance JSON needs a 'facts' list")
    try:
        facts = [(Fact(d["rel"], tuple(str(a) for a in d["args"])), d) for d in data["facts"]]
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed fact entry: {exc}") from exc
    schema = _schema_from_json(data.get("schema"), [f for f, _ in facts])
    events = data.get("events", [])
    try:
        event_names = [e["name"] for e in events]
        probs = {e["name"]: check_prob(e["prob"], f"probability of {e['name']}") for e in events if "prob" in e}
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed event entry: {exc}") from exc

    if "circuit" in data:
        from .circuits import Circuit

        circuit = Circuit.from_json(data["circuit"])
        try:
            gates = {f: int(d["gate"]) for f, d in facts}
        except KeyError as exc:
            raise InputError("pcc facts need a 'gate' field") from exc
        if not probs:
            probs = {e: Fraction(1, 2) for e in circuit.events}
        return PCCInstance(schema, gates, circuit, probs)
    if facts and all("prob" in d and "ann" not in d for _, d in facts):
        return TIDInstance.build([(f, check_prob(d["prob"])) for f, d in facts], schema)
    if any("ann" in d for _, d in facts) or events:
        pairs = [(f, parse_annotation(str(d.get("ann", "T")))) for f, d in facts]
        ann = _merge_annotations(pairs)
        if probs:
            if set(probs) != set(event_names):
                raise InputError("either all events carry 'prob' or none does")
            return PCInstance(schema, ann, tuple(event_names), probs)
        return CInstance(schema, ann, tuple(event_names))
    return Instance(schema, frozenset(f for f, _ in facts))


def dump_instance(inst) -> dict:
    out: dict = {"schema": inst.schema.to_json()}
    if isinstance(inst, TIDInstance):
        out["facts"] = [{"rel": f.relation, "args": list(f.args), "prob": float(p)} for f, p in sorted(inst.probs.items())]
    elif isinstance(inst, PCCInstance):
        out["events"] = [{"name": e, "prob": float(p)} for e, p in inst.probs.items()]
        out["facts"] = [{"rel": f.relation, "args": list(f.args), "gate": g} for f, g in sorted(inst.gates.items())]
        out["circuit"] = inst.circuit.to_json()
    elif isinstance(inst, CInstance):
        probs = getattr(inst, "probs", {})
        out["events"] = [{"name": e, **({"prob": float(probs[e])} if e in probs else {})} for e in inst.events]
        out["facts"] = [
            {"rel": f.relation, "args": list(f.args), "ann": str(a)} for f, a in sorted(inst.annotations.items())
        ]
    else:
        out["facts"] = [{"rel": f.relation, "args": list(f.args)} for f in sorted(inst.facts)]
    return out

"""Probabilistic XML with ind, mux and cie nodes.

Documents are trees of regular (labelled) nodes and distributional nodes.
A possible world keeps a set of regular nodes; each kept node hangs under its
nearest kept regular ancestor.  Worlds are identified by the preorder ids of
the regular nodes they keep.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from .circuits import CircuitBuilder
from .errors import InputError, LimitExceeded
from .instances import Fact, PCCInstance, Schema, check_prob, max_events, world_of
from .instances import Conj, Ev, Neg, parse_annotation

REGULAR, IND, MUX, CIE = "regular", "ind", "mux", "cie"
SCHEMA = Schema.of(Label=2, Child=2, Desc=2)


@dataclass(frozen=True)
class Edge:
    child: "PrxmlNode"
    prob: object = None  # ind and mux edges
    cond: tuple = ()  # cie edges: (event, positive) literals


@dataclass(frozen=True)
class PrxmlNode:
    kind: str
    label: str | None = None
    edges: tuple = ()

    def __post_init__(self):
        if self.kind not in (REGULAR, IND, MUX, CIE):
            raise InputError(f"unknown node kind {self.kind!r}")
        if self.kind == REGULAR and self.label is None:
            raise InputError("regular nodes need a label")
        for e in self.edges:
            if self.kind in (IND, MUX):
                check_prob(e.prob, f"{self.kind} edge probability")
            elif e.prob is not None:
                raise InputError(f"{self.kind} edges carry no probability")
            if self.kind != CIE and e.cond:
                raise InputError("only cie edges carry conditions")
        if self.kind == MUX and sum(e.prob for e in self.edges) > 1 + 1e-9:
            raise InputError("mux edge probabilities sum to more than 1")

    @property
    def children(self) -> list["PrxmlNode"]:
        return [e.child for e in self.edges]


def regular(label: str, *children) -> PrxmlNode:
    return PrxmlNode(REGULAR, label, tuple(Edge(c) for c in children))


def ind(*pairs) -> PrxmlNode:
    return PrxmlNode(IND, None, tuple(Edge(c, p) for c, p in pairs))


def mux(*pairs) -> PrxmlNode:
    return PrxmlNode(MUX, None, tuple(Edge(c, p) for c, p in pairs))


def cie(*pairs) -> PrxmlNode:
    return PrxmlNode(CIE, None, tuple(Edge(c, None, _literals(cond)) for c, cond in pairs))


def _literals(cond) -> tuple:
    """Normalise a cie condition: "a & !b", ["a", "!b"] or [("a", True), ...]."""
    if isinstance(cond, str):
        f = parse_annotation(cond)
        parts = f.parts if isinstance(f, Conj) else (f,)
        out = []
        for p in parts:
            if isinstance(p, Ev):
                out.append((p.name, True))
            elif isinstance(p, Neg) and isinstance(p.arg, Ev):
                out.append((p.arg.name, False))
            else:
                raise InputError(f"cie condition {cond!r} is not a conjunction of literals")
        return tuple(out)
    out = []
    for lit in cond:
        if isinstance(lit, str):
            out.extend(_literals(lit))
        else:
            name, pos = lit
            out.append((str(name), bool(pos)))
    return tuple(out)


@dataclass
class PrxmlDoc:
    root: PrxmlNode
    events: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.root.kind != REGULAR:
            raise InputError("the root of a document must be a regular node")
        for e, p in self.events.items():
            check_prob(p, f"probability of event {e}")
        nodes = self.nodes()
        for n in nodes:
            if n.kind == CIE:
                for e in n.edges:
                    for name, _ in e.cond:
                        if name not in self.events:
                            raise InputError(f"cie condition uses undeclared event {name!r}")
        # preorder numbering, parent links
        self.ids: dict[int, int] = {id(n): i for i, n in enumerate(nodes)}
        self.by_id: list[PrxmlNode] = nodes
        self.parent: list[int | None] = [None] * len(nodes)
        for i, n in enumerate(nodes):
            for c in n.children:
                self.parent[self.ids[id(c)]] = i

    def nodes(self) -> list[PrxmlNode]:
        out, stack = [], [self.root]
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(reversed(n.children))
        return out

    def node_id(self, n: PrxmlNode) -> int:
        return self.ids[id(n)]

    def describe(self, i: int) -> str:
        n = self.by_id[i]
        return f"{i}:{n.label}" if n.kind == REGULAR else f"{i}:{n.kind}"

    def regular_ids(self) -> list[int]:
        return [i for i, n in enumerate(self.by_id) if n.kind == REGULAR]

    def to_json(self) -> dict:
        def node(n: PrxmlNode) -> dict:
            d: dict = {"kind": n.kind}
            if n.label is not None:
                d["label"] = n.label
            edges = []
            for e in n.edges:
                ed: dict = {"child": node(e.child)}
                if e.prob is not None:
                    ed["prob"] = _num(e.prob)
                if e.cond:
                    ed["cond"] = [name if pos else "!" + name for name, pos in e.cond]
                edges.append(ed)
            d["edges"] = edges
            return d

        return {"root": node(self.root), "events": {e: _num(p) for e, p in self.events.items()}}


def _num(p):
    return float(p) if isinstance(p, Fraction) else p


def load_prxml(data: Mapping) -> PrxmlDoc:
    """Read the JSON form: {"root": node, "events": {name: prob}}."""
    if not isinstance(data, Mapping) or "root" not in data:
        raise InputError("a PrXML document needs a 'root' node")

    def node(raw, path: str) -> PrxmlNode:
        if not isinstance(raw, Mapping) or "kind" not in raw:
            raise InputError(f"node at {path} needs a 'kind'")
        kind = raw["kind"]
        edges = []
        for k, e in enumerate(raw.get("edges", [])):
            if "child" not in e:
                raise InputError(f"edge {k} of node at {path} has no child")
            cond = _literals(e["cond"]) if "cond" in e else ()
            if kind == CIE and not cond:
                raise InputError(f"cie edge {k} at {path} needs a 'cond'")
            if kind in (IND, MUX) and "prob" not in e:
                raise InputError(f"{kind} edge {k} at {path} needs a 'prob'")
            edges.append(Edge(node(e["child"], f"{path}/{k}"), e.get("prob"), cond))
        return PrxmlNode(kind, raw.get("label"), tuple(edges))

    return PrxmlDoc(node(data["root"], "root"), dict(data.get("events", {})))


# -- possible worlds ----------------------------------------------------------------


@dataclass(frozen=True)
class PrxmlWorld:
    kept: frozenset  # preorder ids of kept regular nodes

    def tree(self, d: PrxmlDoc):
        """Nested (label, children) tuples of the kept regular nodes."""

        def walk(n: PrxmlNode) -> list:
            out = []
            for c in n.children:
                if c.kind == REGULAR:
                    if d.node_id(c) in self.kept:
                        out.append((c.label, tuple(walk(c))))
                else:
                    out.extend(walk(c))
            return out

        return (d.root.label, tuple(walk(d.root)))

    def labels(self, d: PrxmlDoc) -> list[str]:
        return [d.by_id[i].label for i in sorted(self.kept)]


def _choice_points(d: PrxmlDoc):
    inds, muxes = [], []
    for i, n in enumerate(d.by_id):
        if n.kind == IND:
            inds.extend((i, k) for k in range(len(n.edges)))
        elif n.kind == MUX:
            muxes.append(i)
    return inds, muxes


def enumerate_documents(d: PrxmlDoc, cap: int | None = None, exact: bool = False) -> list[tuple[PrxmlWorld, object]]:
    """All possible worlds with their probabilities, identical worlds merged.

    A world fixes every event, every ind edge and every mux node (one child or
    none).  ``cap`` bounds log2 of the number of combined outcomes.
    """
    cap = max_events() if cap is None else cap
    inds, muxes = _choice_points(d)
    events = sorted(d.events)
    size = 2 ** (len(events) + len(inds))
    for m in muxes:
        size *= len(d.by_id[m].edges) + 1
    if size > 2**cap:
        raise LimitExceeded(f"{size} outcome combinations exceed the cap of 2^{cap}")
    conv = (lambda p: Fraction(repr(p)) if isinstance(p, float) else Fraction(p)) if exact else (lambda p: p)
    ev_p = {e: conv(p) for e, p in d.events.items()}
    worlds: dict[frozenset, object] = {}
    mux_opts = [range(-1, len(d.by_id[m].edges)) for m in muxes]
    for ev_bits in itertools.product((False, True), repeat=len(events)):
        val = dict(zip(events, ev_bits))
        w_ev = math.prod((ev_p[e] if b else 1 - ev_p[e]) for e, b in val.items())
        if w_ev == 0:
            continue
        for ind_bits in itertools.product((False, True), repeat=len(inds)):
            keep_ind = dict(zip(inds, ind_bits))
            w_ind = w_ev
            for (i, k), b in keep_ind.items():
                p = conv(d.by_id[i].edges[k].prob)
                w_ind *= p if b else 1 - p
            if w_ind == 0:
                continue
            for picks in itertools.product(*mux_opts):
                pick = dict(zip(muxes, picks))
                w = w_ind
                for m, k in pick.items():
                    es = d.by_id[m].edges
                    w *= conv(es[k].prob) if k >= 0 else 1 - sum(conv(e.prob) for e in es)
                if w == 0:
                    continue
                kept = frozenset(_kept(d, val, keep_ind, pick))
                worlds[kept] = worlds.get(kept, 0) + w
    return sorted(((PrxmlWorld(k), p) for k, p in worlds.items()), key=lambda kv: sorted(kv[0].kept))


def _kept(d: PrxmlDoc, val, keep_ind, pick) -> list[int]:
    out = []
    stack = [0]
    while stack:
        i = stack.pop()
        n = d.by_id[i]
        if n.kind == REGULAR:
            out.append(i)
        for k, e in enumerate(n.edges):
            c = d.node_id(e.child)
            if n.kind == IND and not keep_ind[(i, k)]:
                continue
            if n.kind == MUX and pick[i] != k:
                continue
            if n.kind == CIE and not all(val[name] == pos for name, pos in e.cond):
                continue
            stack.append(c)
    return out


def query_probability_worlds(d: PrxmlDoc, q, cap: int | None = None, exact: bool = False):
    """Brute-force probability of ``q`` over the enumerated worlds (the oracle)."""
    enc = to_pcc(d)
    total = Fraction(0) if exact else 0.0
    for w, p in enumerate_documents(d, cap, exact):
        if q.holds(encode_world(d, w, enc)):
            total += p
    return total


# -- scopes ----------------------------------------------------------------------


@dataclass
class ScopeReport:
    event_scopes: dict[str, list[int]]
    node_scope_sizes: dict[int, int]
    max_node_scope: int

    def to_json(self, d: PrxmlDoc | None = None) -> dict:
        name = d.describe if d is not None else str
        return {
            "event_scopes": {e: [name(i) for i in ns] for e, ns in sorted(self.event_scopes.items())},
            "node_scope_sizes": {name(i): k for i, k in sorted(self.node_scope_sizes.items())},
            "max_node_scope": self.max_node_scope,
        }


def _ancestors(d: PrxmlDoc, i: int) -> list[int]:
    """``i`` and its ancestors, bottom-up."""
    out = []
    while i is not None:
        out.append(i)
        i = d.parent[i]
    return out


def compute_scopes(d: PrxmlDoc) -> ScopeReport:
    """Nodes where each event's value must be remembered.

    For an event e, take the cie edges mentioning it and the lowest common
    ancestor L of their cie nodes.  The scope holds every strict descendant of
    L lying on a path from L to an occurrence child, plus everything below
    those nodes.
    """
    occ: dict[str, list[tuple[int, int]]] = {e: [] for e in d.events}
    for i, n in enumerate(d.by_id):
        if n.kind == CIE:
            for e in n.edges:
                for name, _ in e.cond:
                    occ[name].append((i, d.node_id(e.child)))
    kids: dict[int, list[int]] = {i: [d.node_id(c) for c in n.children] for i, n in enumerate(d.by_id)}
    scopes: dict[str, list[int]] = {}
    for ev, edges in sorted(occ.items()):
        if not edges:
            scopes[ev] = []
            continue
        paths = [_ancestors(d, p)[::-1] for p, _ in edges]
        lca = None
        for level in zip(*paths):
            if all(x == level[0] for x in level):
                lca = level[0]
            else:
                break
        tops = set()
        for _, child in edges:
            for a in _ancestors(d, child):
                if a == lca:
                    break
                tops.add(a)
        scope = set()
        stack = list(tops)
        while stack:
            x = stack.pop()
            if x in scope:
                continue
            scope.add(x)
            stack.extend(kids[x])
        scopes[ev] = sorted(scope)
    sizes = {i: 0 for i in range(len(d.by_id))}
    for ns in scopes.values():
        for i in ns:
            sizes[i] += 1
    return ScopeReport(scopes, sizes, max(sizes.values(), default=0))


# -- relational encoding -----------------------------------------------------------


@dataclass
class Encoding:
    pcc: PCCInstance
    element: dict[int, str]  # regular node id -> element name
    condition: dict[int, int]  # node id -> gate of its presence condition


def element_name(i: int) -> str:
    return f"n{i}"


def _fresh(base: str, taken: set) -> str:
    name = base
    while name in taken:
        name += "_"
    taken.add(name)
    return name


def to_pcc(d: PrxmlDoc, desc: bool = True) -> Encoding:
    """Relational pcc-instance with Label, Child and (optionally) Desc facts.

    A node's presence condition is the conjunction of the choices on its path:
    cie literals, one fresh event per ind edge, and a mux chain where child i
    needs the first i-1 chain events false and the i-th true.
    """
    b = CircuitBuilder()
    taken = set(d.events)
    probs: dict[str, object] = {}
    for e in sorted(d.events):
        b.input(e)
        probs[e] = d.events[e]
    cond: dict[int, int] = {0: b.const(True)}
    lits: dict[tuple, int] = {}

    def literal(name: str, pos: bool) -> int:
        key = (name, pos)
        if key not in lits:
            g = b.input(name)
            lits[key] = g if pos else b.not_(g)
        return lits[key]

    def conj(parent_gate: int, extra: list[int]) -> int:
        acc = parent_gate
        for g in extra:
            acc = b.and_((acc, g)) if b.gates[acc].kind != "const" else g
        return acc

    for i, n in enumerate(d.by_id):
        here = cond[i]
        if n.kind == MUX:
            mass = 0
            chain = []
            for k, e in enumerate(n.edges):
                name = _fresh(f"mux{i}_{k}", taken)
                rest = 1 - mass
                p = e.prob / rest if rest > 0 else 0
                probs[name] = min(p, 1)
                mass += e.prob
                g = b.input(name)
                cond[d.node_id(e.child)] = conj(here, [b.not_(x) for x in chain] + [g])
                chain.append(g)
            continue
        for k, e in enumerate(n.edges):
            c = d.node_id(e.child)
            if n.kind == IND:
                name = _fresh(f"ind{i}_{k}", taken)
                probs[name] = e.prob
                cond[c] = conj(here, [b.input(name)])
            elif n.kind == CIE:
                cond[c] = conj(here, [literal(name, pos) for name, pos in e.cond])
            else:
                cond[c] = here
    gates: dict[Fact, int] = {}
    element = {i: element_name(i) for i in d.regular_ids()}
    for i in d.regular_ids():
        gates[Fact("Label", (element[i], d.by_id[i].label))] = cond[i]
        anc = [a for a in _ancestors(d, i)[1:] if d.by_id[a].kind == REGULAR]
        if anc:
            gates[Fact("Child", (element[anc[0]], element[i]))] = cond[i]
        if desc:
            for a in anc:
                gates[Fact("Desc", (element[a], element[i]))] = cond[i]
    circuit = b.build(len(b.gates) - 1)
    return Encoding(PCCInstance(SCHEMA, gates, circuit, probs), element, cond)


def encode_world(d: PrxmlDoc, w: PrxmlWorld, enc: Encoding):
    """The certain instance encoding one world, as the pcc encoding would produce it."""
    from .instances import Instance

    facts = []
    for f in enc.pcc.gates:
        # every fact is owned by the node in its last argument slot, or by its labelled node
        node = int(f.args[0][1:]) if f.relation == "Label" else int(f.args[1][1:])
        if node in w.kept:
            facts.append(f)
    return Instance.of(facts, SCHEMA)


def induced_world(d: PrxmlDoc, enc: Encoding, valuation: Mapping[str, bool]) -> PrxmlWorld:
    """The world of the encoding under one valuation, as the set of kept regular nodes."""
    inst = world_of(enc.pcc, valuation)
    return PrxmlWorld(frozenset(int(f.args[0][1:]) for f in inst.facts if f.relation == "Label"))


def query_probability(d: PrxmlDoc, q, exact: bool = False, **kw):
    """Probability of ``q`` over Label/Child/Desc through the pcc pipeline."""
    from .prob import prob_query
    from .query import Query, parse_query

    if isinstance(q, str):
        q = parse_query(q, SCHEMA)
    return prob_query(to_pcc(d).pcc, q, exact=exact, **kw)

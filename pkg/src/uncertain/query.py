"""Queries: Boolean combinations of conjunctive queries.

Two evaluation routes live here and must agree:

* ``Query.holds`` is a direct homomorphism search on a certain instance; it is
  the oracle.
* ``compile`` turns the query into a :class:`QueryAutomaton`, a deterministic
  bottom-up automaton over the bags of a rooted binary tree decomposition of
  the instance's incidence graph.  ``run`` executes it on a certain instance.

Automaton states track, per connected component of each CQ, the set of
partial homomorphisms ("tokens") restricted to the current bag.  A token maps
every query vertex (atom or variable) to a vertex of the current bag, to
FORGOTTEN (mapped strictly below, already left the bag) or to UNSEEN (not
mapped yet).  Presence of a fact is read exactly once, at the topmost bag
containing the fact vertex.
"""

from __future__ import annotations

import functools
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

from .errors import DecompositionError, LimitExceeded, QuerySyntaxError, SchemaError
from .instances import Fact, Instance, Schema
from .treedec import TreeDecomposition, fact_id

# -- AST -----------------------------------------------------------------------


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Const:
    value: str

    def __str__(self):
        if re.fullmatch(r"[A-Z0-9][A-Za-z0-9_]*", self.value):
            return self.value
        return json.dumps(self.value)


Term = Union[Var, Const]


@dataclass(frozen=True)
class Atom:
    relation: str
    terms: tuple[Term, ...]

    def __str__(self):
        return f"{self.relation}({', '.join(map(str, self.terms))})"


@dataclass(frozen=True)
class CQ:
    variables: tuple[str, ...]
    atoms: tuple[Atom, ...]

    def __str__(self):
        body = " & ".join(map(str, self.atoms))
        if self.variables:
            return f"exists {' '.join(self.variables)}. {body}"
        return body


@dataclass(frozen=True)
class QAnd:
    parts: tuple

    def __str__(self):
        return "(" + " & ".join(_wrap(p) for p in self.parts) + ")"


@dataclass(frozen=True)
class QOr:
    parts: tuple

    def __str__(self):
        return "(" + " | ".join(_wrap(p) for p in self.parts) + ")"


@dataclass(frozen=True)
class QNot:
    arg: object

    def __str__(self):
        return f"!{_wrap(self.arg)}"


@dataclass(frozen=True)
class QConst:
    value: bool

    def __str__(self):
        return "true" if self.value else "false"


def _wrap(node) -> str:
    return f"({node})" if isinstance(node, CQ) else str(node)


@dataclass(frozen=True)
class Query:
    root: object

    def __str__(self):
        return str(self.root)

    def cqs(self) -> list[CQ]:
        out: list[CQ] = []

        def walk(n):
            if isinstance(n, CQ):
                if n not in out:
                    out.append(n)
            elif isinstance(n, (QAnd, QOr)):
                for p in n.parts:
                    walk(p)
            elif isinstance(n, QNot):
                walk(n.arg)

        walk(self.root)
        return out

    @property
    def has_negation(self) -> bool:
        def walk(n):
            if isinstance(n, QNot):
                return True
            if isinstance(n, (QAnd, QOr)):
                return any(walk(p) for p in n.parts)
            return False

        return walk(self.root)

    def relations(self) -> set[str]:
        return {a.relation for cq in self.cqs() for a in cq.atoms}

    def combine(self, flags: Mapping[CQ, bool]) -> bool:
        def ev(n):
            if isinstance(n, CQ):
                return flags[n]
            if isinstance(n, QAnd):
                return all(ev(p) for p in n.parts)
            if isinstance(n, QOr):
                return any(ev(p) for p in n.parts)
            if isinstance(n, QNot):
                return not ev(n.arg)
            return n.value

        return ev(self.root)

    def holds(self, inst: Instance) -> bool:
        """Direct evaluation by homomorphism search (no automaton involved)."""
        index: dict[str, list[tuple]] = {}
        for f in inst.facts:
            index.setdefault(f.relation, []).append(f.args)
        return self.combine({cq: _cq_holds(cq, index) for cq in self.cqs()})


def _cq_holds(cq: CQ, index: Mapping[str, list[tuple]]) -> bool:
    atoms = list(cq.atoms)
    binding: dict[str, str] = {}

    def bound_count(a: Atom) -> int:
        return sum(1 for t in a.terms if isinstance(t, Const) or t.name in binding)

    def search(remaining: list[Atom]) -> bool:
        if not remaining:
            return True
        # most constrained atom first
        k = max(range(len(remaining)), key=lambda i: (bound_count(remaining[i]), -i))
        atom = remaining[k]
        rest = remaining[:k] + remaining[k + 1 :]
        for args in index.get(atom.relation, ()):
            newly = []
            ok = True
            for t, a in zip(atom.terms, args):
                if isinstance(t, Const):
                    if t.value != a:
                        ok = False
                        break
                elif t.name in binding:
                    if binding[t.name] != a:
                        ok = False
                        break
                else:
                    binding[t.name] = a
                    newly.append(t.name)
            if ok and search(rest):
                for v in newly:
                    del binding[v]
                return True
            for v in newly:
                del binding[v]
        return False

    return search(atoms)


# -- parser --------------------------------------------------------------------

_QTOKEN = re.compile(
    r"\s*(?:(?P<sym>[&|!().,])|(?P<str>\"(?:[^\"\\]|\\.)*\"|'(?:[^'\\]|\\.)*')|(?P<id>[A-Za-z0-9_][A-Za-z0-9_\-]*))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    out = []
    pos = 0
    end = len(text.rstrip())
    while pos < end:
        m = _QTOKEN.match(text, pos)
        if not m or m.end() == pos:
            pos += len(text[pos:]) - len(text[pos:].lstrip())
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", pos)
        if m.group("sym"):
            out.append(("sym", m.group("sym"), m.start("sym")))
        elif m.group("str"):
            raw = m.group("str")
            val = json.loads('"' + raw[1:-1].replace('"', '\\"') + '"') if raw[0] == "'" else json.loads(raw)
            out.append(("str", val, m.start("str")))
        else:
            out.append(("id", m.group("id"), m.start("id")))
        pos = m.end()
    out.append(("eof", "", end))
    return out


def parse_query(text: str, schema: Schema | None = None) -> Query:
    """Parse the query language.

    ::

        query := or
        or    := and ("|" and)*
        and   := unary ("&" unary)*
        unary := "!" unary | "(" or ")" | "true" | "false" | cq
        cq    := ["exists" var+ "."] atom ("&" atom)*
        atom  := REL "(" term ("," term)* ")"

    Quantified identifiers are variables.  Other terms are constants and must
    start with an uppercase letter or digit, or be quoted; an unquantified
    lowercase identifier is reported as a free variable.
    """
    toks = _tokenize(text)
    i = 0
    arities: dict[str, int] = {}

    def peek(k: int = 0):
        return toks[min(i + k, len(toks) - 1)]

    def take(kind: str, value: str | None = None):
        nonlocal i
        t = peek()
        if t[0] != kind or (value is not None and t[1] != value):
            want = repr(value) if value is not None else kind
            got = "end of input" if t[0] == "eof" else repr(t[1])
            raise QuerySyntaxError(f"expected {want}, got {got}", t[2])
        i += 1
        return t

    def is_atom_start() -> bool:
        return peek()[0] == "id" and peek(1)[1] == "(" and peek()[1] not in ("exists", "true", "false")

    def p_or():
        parts = [p_and()]
        while peek()[1] == "|" and peek()[0] == "sym":
            take("sym", "|")
            parts.append(p_and())
        return parts[0] if len(parts) == 1 else QOr(tuple(parts))

    def p_and():
        parts = [p_unary()]
        while peek()[1] == "&" and peek()[0] == "sym":
            take("sym", "&")
            parts.append(p_unary())
        return parts[0] if len(parts) == 1 else QAnd(tuple(parts))

    def p_unary():
        t = peek()
        if t[0] == "sym" and t[1] == "!":
            take("sym", "!")
            return QNot(p_unary())
        if t[0] == "sym" and t[1] == "(":
            take("sym", "(")
            inner = p_or()
            take("sym", ")")
            return inner
        if t[0] == "id" and t[1] in ("true", "false") and peek(1)[1] != "(":
            take("id")
            return QConst(t[1] == "true")
        if t[0] == "id" and (t[1] == "exists" or is_atom_start()):
            return p_cq()
        got = "end of input" if t[0] == "eof" else repr(t[1])
        raise QuerySyntaxError(f"expected a query, got {got}", t[2])

    def p_cq():
        variables: list[str] = []
        start = peek()[2]
        if peek()[1] == "exists" and peek()[0] == "id":
            take("id", "exists")
            while peek()[0] == "id":
                name = take("id")[1]
                if name in variables:
                    raise QuerySyntaxError(f"variable {name} quantified twice", peek()[2])
                variables.append(name)
            if not variables:
                raise QuerySyntaxError("exists needs at least one variable", peek()[2])
            take("sym", ".")
        atoms = [p_atom(variables)]
        while peek()[1] == "&" and peek(1)[0] == "id" and peek(2)[1] == "(" and peek(1)[1] != "exists":
            take("sym", "&")
            atoms.append(p_atom(variables))
        used = {t.name for a in atoms for t in a.terms if isinstance(t, Var)}
        for v in variables:
            if v not in used:
                raise QuerySyntaxError(f"quantified variable {v} does not occur in any atom", start)
        return CQ(tuple(variables), tuple(atoms))

    def p_atom(variables: Sequence[str]) -> Atom:
        rel_tok = take("id")
        rel = rel_tok[1]
        take("sym", "(")
        terms: list[Term] = []
        while True:
            t = peek()
            if t[0] == "str":
                take("str")
                terms.append(Const(t[1]))
            elif t[0] == "id":
                take("id")
                if t[1] in variables:
                    terms.append(Var(t[1]))
                elif t[1][0].islower():
                    raise QuerySyntaxError(f"free variable {t[1]}", t[2])
                else:
                    terms.append(Const(t[1]))
            else:
                raise QuerySyntaxError("expected a term", t[2])
            if peek()[1] == ",":
                take("sym", ",")
                continue
            take("sym", ")")
            break
        if schema is not None:
            if rel not in schema:
                raise SchemaError(f"unknown relation {rel}", rel_tok[2])
            if schema.arity(rel) != len(terms):
                raise SchemaError(
                    f"{rel} has arity {schema.arity(rel)}, atom uses {len(terms)} terms", rel_tok[2]
                )
        elif arities.setdefault(rel, len(terms)) != len(terms):
            raise SchemaError(f"relation {rel} used with two arities", rel_tok[2])
        return Atom(rel, tuple(terms))

    root = p_or()
    if peek()[0] != "eof":
        raise QuerySyntaxError(f"unexpected {peek()[1]!r}", peek()[2])
    return Query(root)


# -- bag automaton ---------------------------------------------------------------

UNSEEN = "?"
FORGOTTEN = "-"
DONE = "DONE"
COMPLETE = "COMPLETE"


@functools.lru_cache(maxsize=1 << 16)
def decode_fact(vid: str) -> Fact:
    k = vid.index("[")
    return Fact(vid[2:k], tuple(json.loads(vid[k:])))


@dataclass(frozen=True)
class BagContext:
    """What the automaton sees at one node: its bag and its children's bags."""

    node: int
    bag: frozenset
    child_bags: tuple
    introduced: tuple  # fact vertices whose topmost bag is this node
    new: frozenset  # vertices of the bag absent from all child bags

    @property
    def is_root(self) -> bool:
        return False


def contexts(t: TreeDecomposition) -> list[BagContext]:
    """Bag contexts in postorder (children first, children in id order)."""
    if not t.is_binary():
        raise DecompositionError("automaton runs need a rooted decomposition with at most 2 children per node")
    top = t.top
    out = []
    for n in t.postorder():
        bag = t.bags[n]
        cbs = tuple(t.bags[c] for c in t.children[n])
        union = frozenset().union(*cbs) if cbs else frozenset()
        intro = tuple(sorted(v for v in bag if v.startswith("f:") and top[v] == n))
        out.append(BagContext(n, bag, cbs, intro, bag - union))
    return out


class BagAutomaton:
    """Deterministic bottom-up automaton over rooted binary bag trees.

    Subclasses implement :meth:`transition` and :meth:`accepting`; states must
    be hashable.  ``watched`` lists the introduced facts whose presence the
    transition reads; presence of other facts must not matter.
    """

    def watched(self, ctx: BagContext) -> tuple:
        return ctx.introduced

    def transition(self, ctx: BagContext, child_states: tuple, present: frozenset):
        raise NotImplementedError

    def accepting(self, state) -> bool:
        raise NotImplementedError


@dataclass
class _Component:
    """One connected component of a CQ, with query vertices numbered atoms-first."""

    atoms: list[Atom]
    variables: list[str]
    # per atom: list of (position, variable qvertex or None, constant or None)
    slots: list[list[tuple[int, int | None, str | None]]] = field(default_factory=list)
    pairs: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        na = len(self.atoms)
        vidx = {v: na + i for i, v in enumerate(self.variables)}
        pairs = set()
        for a in self.atoms:
            row = []
            for p, t in enumerate(a.terms):
                if isinstance(t, Var):
                    row.append((p, vidx[t.name], None))
                    pairs.add((len(self.slots), vidx[t.name]))
                else:
                    row.append((p, None, t.value))
            self.slots.append(row)
        self.pairs = sorted(pairs)

    @property
    def size(self) -> int:
        return len(self.atoms) + len(self.variables)

    def matches(self, ai: int, f: Fact) -> bool:
        a = self.atoms[ai]
        if f.relation != a.relation or len(f.args) != len(a.terms):
            return False
        seen: dict[int, str] = {}
        for p, v, c in self.slots[ai]:
            if c is not None:
                if f.args[p] != c:
                    return False
            elif seen.setdefault(v, f.args[p]) != f.args[p]:
                return False
        return True


def _components(cq: CQ) -> list[_Component]:
    parent = list(range(len(cq.atoms)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    first: dict[str, int] = {}
    for i, a in enumerate(cq.atoms):
        for t in a.terms:
            if isinstance(t, Var):
                if t.name in first:
                    parent[find(i)] = find(first[t.name])
                else:
                    first[t.name] = i
    groups: dict[int, list[int]] = {}
    for i in range(len(cq.atoms)):
        groups.setdefault(find(i), []).append(i)
    comps = []
    for idxs in groups.values():
        atoms = [cq.atoms[i] for i in idxs]
        vs = []
        for a in atoms:
            for t in a.terms:
                if isinstance(t, Var) and t.name not in vs:
                    vs.append(t.name)
        comps.append(_Component(atoms, vs))
    return comps


@dataclass(frozen=True)
class Combo:
    """One way to obtain ``out`` at a node: child tokens (None = empty match) plus required facts."""

    left: tuple | None
    right: tuple | None
    required: frozenset
    out: object  # a token, or COMPLETE


DEFAULT_MAX_TOKENS = 20000


class QueryAutomaton(BagAutomaton):
    def __init__(self, query: Query, max_tokens: int = DEFAULT_MAX_TOKENS):
        self.query = query
        self.cqs = query.cqs()
        self.components: list[_Component] = []
        self.cq_components: list[list[int]] = []
        for cq in self.cqs:
            ids = []
            for comp in _components(cq):
                ids.append(len(self.components))
                self.components.append(comp)
            self.cq_components.append(ids)
        self.max_tokens = max_tokens
        self.relations = query.relations()
        self.monotone = not query.has_negation
        self._combo_cache: dict = {}

    def __repr__(self):
        return f"QueryAutomaton({self.query})"

    # -- interface ----------------------------------------------------------------

    def watched(self, ctx: BagContext) -> tuple:
        out = []
        for v in ctx.introduced:
            f = decode_fact(v)
            if any(comp.matches(ai, f) for comp in self.components for ai in range(len(comp.atoms))):
                out.append(v)
        return tuple(out)

    def transition(self, ctx: BagContext, child_states: tuple, present: frozenset):
        state = []
        for ci in range(len(self.components)):
            subs = [s[ci] for s in child_states]
            if any(s == DONE for s in subs):
                state.append(DONE)
                continue
            toks = [sorted(s) for s in subs]
            out = set()
            done = False
            for combo in self.combos(ci, ctx, toks):
                if combo.required <= present:
                    if combo.out == COMPLETE:
                        done = True
                        break
                    out.add(combo.out)
            state.append(DONE if done else frozenset(out))
        return tuple(state)

    def accepting(self, state) -> bool:
        return self.query.combine(self.cq_flags([s == DONE for s in state]))

    def cq_flags(self, comp_flags: Sequence[bool]) -> dict[CQ, bool]:
        return {cq: all(comp_flags[c] for c in ids) for cq, ids in zip(self.cqs, self.cq_components)}

    def initial_state(self):
        return tuple(frozenset() for _ in self.components)

    # -- the token combination step ---------------------------------------------

    def combos(self, ci: int, ctx: BagContext, child_tokens: Sequence[Sequence[tuple]]) -> list[Combo]:
        """All combos producing non-trivial tokens (or completion) at ``ctx``.

        ``child_tokens`` holds, per child, the tokens that may be present there;
        the empty match (all UNSEEN) is always implicitly available.
        """
        key = (ci, ctx, tuple(tuple(ts) for ts in child_tokens))
        hit = self._combo_cache.get(key)
        if hit is not None:
            return hit
        out = self._combos(ci, ctx, child_tokens)
        if len(self._combo_cache) > 50000:
            self._combo_cache.clear()
        self._combo_cache[key] = out
        return out

    def _combos(self, ci: int, ctx: BagContext, child_tokens) -> list[Combo]:
        comp = self.components[ci]
        n = comp.size
        bag = ctx.bag
        all_unseen = (UNSEEN,) * n
        options = []
        for k in range(2):
            opts = [(None, all_unseen)]
            if k < len(child_tokens):
                for tok in child_tokens[k]:
                    lifted = self._lift(comp, tok, bag)
                    if lifted is not None:
                        opts.append((tok, lifted))
            options.append(opts)
        cb1 = ctx.child_bags[0] if len(ctx.child_bags) > 0 else frozenset()
        cb2 = ctx.child_bags[1] if len(ctx.child_bags) > 1 else frozenset()
        intro = set(ctx.introduced)
        new_facts = []
        new_elems = []
        for v in sorted(ctx.new):
            if v.startswith("f:"):
                new_facts.append((v, decode_fact(v)))
            elif v.startswith("e:"):
                new_elems.append(v)
        atom_cands = [
            [v for v, f in new_facts if comp.matches(ai, f)] for ai in range(len(comp.atoms))
        ]
        facts_in_bag = {v: decode_fact(v) for v in bag if v.startswith("f:")}
        out: list[Combo] = []
        seen = set()
        for t1, l1 in options[0]:
            for t2, l2 in options[1]:
                merged = _merge(l1, l2, cb1, cb2)
                if merged is None:
                    continue
                for tok in self._extend(comp, merged, atom_cands, new_elems, bag, facts_in_bag):
                    if all(x == UNSEEN for x in tok):
                        continue
                    if any(
                        (tok[a] == FORGOTTEN and tok[v] == UNSEEN) or (tok[a] == UNSEEN and tok[v] == FORGOTTEN)
                        for a, v in comp.pairs
                    ):
                        continue
                    req = frozenset(tok[a] for a in range(len(comp.atoms)) if tok[a] in intro)
                    complete = all(x != UNSEEN for x in tok) and all(
                        tok[a] == FORGOTTEN or tok[a] in intro for a in range(len(comp.atoms))
                    )
                    combo = Combo(t1, t2, req, COMPLETE if complete else tok)
                    if combo not in seen:
                        seen.add(combo)
                        out.append(combo)
        if len(out) > self.max_tokens:
            raise LimitExceeded(
                f"node {ctx.node}: {len(out)} token combinations exceed the cap of {self.max_tokens} "
                f"(bag size {len(bag)}, component with {len(comp.atoms)} atoms)"
            )
        return out

    @staticmethod
    def _lift(comp: _Component, tok: tuple, bag: frozenset) -> tuple | None:
        lifted = tuple(x if (x in (UNSEEN, FORGOTTEN) or x in bag) else FORGOTTEN for x in tok)
        for a, v in comp.pairs:
            if (lifted[a] == FORGOTTEN and lifted[v] == UNSEEN) or (lifted[a] == UNSEEN and lifted[v] == FORGOTTEN):
                return None
        return lifted

    @staticmethod
    def _extend(comp: _Component, merged: tuple, atom_cands, new_elems, bag, facts_in_bag):
        """Assign UNSEEN query vertices to new bag vertices, checking bag-local consistency."""
        na = len(comp.atoms)
        tok = list(merged)

        def var_ok(vq: int) -> bool:
            # every in-bag atom fixes the element its argument slots must map to
            val = tok[vq]
            for ai in range(na):
                fv = tok[ai]
                if fv not in facts_in_bag:
                    continue
                f = facts_in_bag[fv]
                for p, v, _ in comp.slots[ai]:
                    if v != vq:
                        continue
                    ev = "e:" + f.args[p]
                    if ev in bag:
                        if val != ev:
                            return False
                    elif val not in (UNSEEN, FORGOTTEN):
                        return False
            return True

        def atoms_step(ai: int):
            if ai == na:
                yield from vars_step(na)
                return
            if tok[ai] == UNSEEN:
                yield from atoms_step(ai + 1)
                for fv in atom_cands[ai]:
                    tok[ai] = fv
                    yield from atoms_step(ai + 1)
                tok[ai] = UNSEEN
            else:
                yield from atoms_step(ai + 1)

        def vars_step(vq: int):
            if vq == len(tok):
                yield tuple(tok)
                return
            if tok[vq] == UNSEEN:
                if var_ok(vq):
                    yield from vars_step(vq + 1)
                for ev in new_elems:
                    tok[vq] = ev
                    if var_ok(vq):
                        yield from vars_step(vq + 1)
                tok[vq] = UNSEEN
            elif var_ok(vq):
                yield from vars_step(vq + 1)

        yield from atoms_step(0)


def _merge(l1: tuple, l2: tuple, cb1: frozenset, cb2: frozenset) -> tuple | None:
    out = []
    for a, b in zip(l1, l2):
        if a == UNSEEN:
            if b not in (UNSEEN, FORGOTTEN) and b in cb1:
                return None
            out.append(b)
        elif b == UNSEEN:
            if a != FORGOTTEN and a in cb2:
                return None
            out.append(a)
        elif a == b and a != FORGOTTEN:
            out.append(a)
        else:
            return None
    return tuple(out)


def compile(q: Query, schema: Schema | None = None, width_hint: int | None = None,
            max_tokens: int = DEFAULT_MAX_TOKENS) -> QueryAutomaton:
    """Compile ``q`` to a bag automaton.

    Compilation does not look at any instance.  ``schema`` (when given) is
    checked against the atoms; ``width_hint`` is accepted for interface
    compatibility, the automaton handles any width.
    """
    if schema is not None:
        for cq in q.cqs():
            for a in cq.atoms:
                if a.relation in schema and schema.arity(a.relation) != len(a.terms):
                    raise SchemaError(f"{a.relation} has arity {schema.arity(a.relation)}, atom uses {len(a.terms)}")
    return QueryAutomaton(q, max_tokens=max_tokens)


def run(a: BagAutomaton, t: TreeDecomposition, inst: Instance, trace: list | None = None) -> bool:
    """Deterministic run of ``a`` on a certain instance along decomposition ``t``.

    Fact vertices of ``t`` that are not facts of ``inst`` count as absent, so a
    decomposition of an uncertain instance can be reused for each of its worlds.
    """
    present = frozenset(fact_id(f) for f in inst.facts)
    fact_vertices = {v for bag in t.bags.values() for v in bag if v.startswith("f:")}
    missing = present - fact_vertices
    if missing:
        raise DecompositionError(f"decomposition does not cover facts {sorted(missing)[:3]}")
    states: dict[int, object] = {}
    root_state = None
    for ctx in contexts(t):
        kids = tuple(states.pop(c) for c in t.children[ctx.node])
        watched = frozenset(a.watched(ctx))
        s = a.transition(ctx, kids, present & watched)
        states[ctx.node] = s
        if trace is not None:
            trace.append((ctx.node, s))
        root_state = s
    return a.accepting(root_state)

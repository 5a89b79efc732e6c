"""Lineage circuits: the bag automaton run symbolically over an uncertain instance.

Two constructions are available.

``monotone``
    One gate per (node, token) meaning "this partial match is reachable below
    the node", plus one latched flag gate per query component.  Token
    reachability only grows with fact presence, so no negation is needed.
    Queries with negation are refused.

``exact``
    One gate per (node, automaton state) meaning "the run below this node ends
    in exactly this state".  Works for any :class:`BagAutomaton`; needs
    ``not`` gates on fact literals.

Either way the circuit comes with a tree decomposition mirroring the instance
decomposition: every node of the instance decomposition contributes a short
chain of bags holding the gates created there.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .circuits import AND, NOT, OR, Circuit, CircuitBuilder
from .errors import DecompositionError, InputError
from .instances import PCCInstance, prepare_pcc
from .query import COMPLETE, DONE, BagAutomaton, QueryAutomaton, contexts, decode_fact
from .query import QAnd, QConst, QNot, QOr, CQ
from .treedec import TreeDecomposition, fact_id, gate_id, gate_index

T = "T"  # constant-true placeholder, never materialised unless it reaches the output
F = "F"


@dataclass
class LineageResult:
    circuit: Circuit
    circuit_decomposition: TreeDecomposition
    gate_origin: dict[int, int]
    stats: dict = field(default_factory=dict)

    @property
    def width(self) -> int:
        return self.circuit_decomposition.width


class _Gates:
    """Circuit builder that tracks which decomposition node created each gate."""

    def __init__(self, base: Circuit):
        self.b = CircuitBuilder.extending(base)
        self.base_size = len(base.gates)
        self.node = None
        self.created: dict[int, list[int]] = {}
        self._local: dict[tuple, int] = {}

    def at(self, node: int) -> None:
        self.node = node
        self.created.setdefault(node, [])
        self._local = {}

    def _new(self, kind: str, args: tuple) -> int:
        key = (kind, args)
        if key in self._local:
            return self._local[key]
        from .circuits import Gate

        g = self.b._add(Gate(kind, args), share=False)
        self.created[self.node].append(g)
        self._local[key] = g
        return g

    def and_(self, xs) -> object:
        xs = [x for x in xs if x != T]
        if F in xs:
            return F
        xs = sorted(set(xs))
        if not xs:
            return T
        acc = xs[0]
        for x in xs[1:]:
            acc = self._new(AND, (acc, x))
        return acc

    def or_(self, xs) -> object:
        xs = [x for x in xs if x != F]
        if T in xs:
            return T
        xs = sorted(set(xs))
        if not xs:
            return F
        acc = xs[0]
        for x in xs[1:]:
            acc = self._new(OR, (acc, x))
        return acc

    def not_(self, x) -> object:
        if x == T:
            return F
        if x == F:
            return T
        return self._new(NOT, (x,))

    def materialise(self, x, monotone: bool) -> int:
        if x == T:
            return self._new("const", (True,))
        if x == F:
            # an empty disjunction keeps monotone circuits free of const(false)
            return self._new(OR, ()) if monotone else self._new("const", (False,))
        return x


def _literal_paths(t: TreeDecomposition, pcc: PCCInstance, facts_at: dict[int, tuple]) -> dict[int, set[int]]:
    """Annotation gates to add to each node so a fact's literal is present where it is read.

    The literal of fact f is read at f's topmost bag n; some bag below n holds
    both f and its gate.  The gate is added to every bag on that path.
    """
    extra: dict[int, set[int]] = {}
    for n, fvs in facts_at.items():
        for fv in fvs:
            g = pcc.gates[decode_fact(fv)]
            gv = gate_id(g)
            path = {n: None}
            queue = [n]
            hit = None
            while queue:
                m = queue.pop(0)
                if gv in t.bags[m]:
                    hit = m
                    break
                for c in t.children[m]:
                    if fv in t.bags[c] and c not in path:
                        path[c] = m
                        queue.append(c)
            if hit is None:
                raise DecompositionError(f"no bag holds fact {fv} together with its annotation gate")
            m = path[hit]
            while m is not None:
                extra.setdefault(m, set()).add(g)
                m = path[m]
    return extra


def build_lineage(a: BagAutomaton, inst, t: TreeDecomposition, mode: str = "auto") -> LineageResult:
    """Run ``a`` symbolically over uncertain ``inst`` along rooted binary decomposition ``t``.

    ``t`` must decompose ``build_graph(inst)`` (the joint instance/annotation graph).
    """
    pcc = prepare_pcc(inst)
    if mode == "auto":
        mode = "monotone" if isinstance(a, QueryAutomaton) and a.monotone else "exact"
    if mode == "monotone" and not isinstance(a, QueryAutomaton):
        raise ValueError("the monotone construction needs a compiled query automaton")
    if mode == "monotone" and not a.monotone:
        raise InputError("the monotone construction only handles queries without negation")
    if mode not in ("monotone", "exact"):
        raise ValueError(f"unknown lineage mode {mode!r}")

    ctxs = contexts(t)
    fact_vertices = {fact_id(f) for f in pcc.gates}
    for ctx in ctxs:
        for v in ctx.introduced:
            if v not in fact_vertices:
                raise DecompositionError(f"decomposition holds fact {v} unknown to the instance")
    watched = {ctx.node: tuple(a.watched(ctx)) for ctx in ctxs}
    extra = _literal_paths(t, pcc, watched)
    gates = _Gates(pcc.circuit)
    exports: dict[int, list] = {}
    stats = {"mode": mode, "nodes": len(ctxs), "max_states": 0, "total_states": 0, "combos": 0, "size_bound": 0}

    def lit(fv: str) -> int:
        return pcc.gates[decode_fact(fv)]

    if mode == "monotone":
        out = _run_monotone(a, ctxs, t, gates, lit, watched, exports, stats)
    else:
        out = _run_exact(a, ctxs, t, gates, lit, watched, exports, stats)
    root = t.root
    gates.at(root)
    output = gates.materialise(out, monotone=(mode == "monotone"))
    stats["size_bound"] += 2
    circuit = gates.b.build(output)
    td = _mirror(t, circuit, gates, exports, extra, output, pcc)
    origin = {g: n for n, gs in gates.created.items() for g in gs}
    for i in range(gates.base_size):
        origin[i] = t.top.get(gate_id(i), t.root)
    stats["gates"] = len(circuit.gates)
    stats["created_gates"] = len(circuit.gates) - gates.base_size
    stats["circuit_width"] = td.width
    return LineageResult(circuit, td, origin, stats)


def _run_monotone(a: QueryAutomaton, ctxs, t, gates: _Gates, lit, watched, exports, stats):
    ncomp = len(a.components)
    tokens: dict[int, list[dict]] = {}
    flags: dict[int, list] = {}
    for ctx in ctxs:
        n = ctx.node
        gates.at(n)
        kids = t.children[n]
        node_tokens = []
        node_flags = []
        for ci in range(ncomp):
            child_maps = [tokens[c][ci] for c in kids]
            child_flags = [flags[c][ci] for c in kids]
            combos = a.combos(ci, ctx, [sorted(m) for m in child_maps])
            stats["combos"] += len(combos)
            # terms are folded into their token's disjunction as they appear,
            # keeping one live accumulator per token in the mirrored bags
            acc: dict[object, object] = {}
            for cb in combos:
                ins = []
                if cb.left is not None:
                    ins.append(child_maps[0][cb.left])
                if cb.right is not None:
                    ins.append(child_maps[1][cb.right])
                ins.extend(lit(fv) for fv in sorted(cb.required))
                term = gates.and_(ins)
                acc[cb.out] = gates.or_([acc[cb.out], term]) if cb.out in acc else term
            stats["size_bound"] += 3 * len(combos) + len(acc) + 3
            flag = gates.or_(child_flags + [acc.pop(COMPLETE, F)])
            tmap = {tok: g for tok, g in sorted(acc.items()) if g != F}
            node_tokens.append(tmap)
            node_flags.append(flag)
        for c in kids:
            del tokens[c], flags[c]
        tokens[n] = node_tokens
        flags[n] = node_flags
        count = sum(len(m) for m in node_tokens)
        stats["max_states"] = max(stats["max_states"], count)
        stats["total_states"] += count
        exports[n] = [g for m in node_tokens for g in m.values()] + list(node_flags)
    root = t.root
    gates.at(root)
    comp_flags = flags[root]
    cq_gates = {
        cq: gates.and_([comp_flags[c] for c in ids]) for cq, ids in zip(a.cqs, a.cq_components)
    }
    stats["size_bound"] += 2 * (len(comp_flags) + _ast_size(a.query.root))
    return _combine(a.query.root, cq_gates, gates)


def _ast_size(node) -> int:
    if isinstance(node, (QAnd, QOr)):
        return 1 + sum(_ast_size(p) for p in node.parts)
    if isinstance(node, QNot):
        return 1 + _ast_size(node.arg)
    return 1


def _combine(node, cq_gates, gates: _Gates):
    if isinstance(node, CQ):
        return cq_gates[node]
    if isinstance(node, QAnd):
        return gates.and_([_combine(p, cq_gates, gates) for p in node.parts])
    if isinstance(node, QOr):
        return gates.or_([_combine(p, cq_gates, gates) for p in node.parts])
    if isinstance(node, QNot):
        return gates.not_(_combine(node.arg, cq_gates, gates))
    if isinstance(node, QConst):
        return T if node.value else F
    raise TypeError(node)


def _run_exact(a: BagAutomaton, ctxs, t, gates: _Gates, lit, watched, exports, stats):
    states: dict[int, dict] = {}
    for ctx in ctxs:
        n = ctx.node
        gates.at(n)
        kids = t.children[n]
        child_maps = [states[c] for c in kids]
        w = watched[n]
        pos = {fv: lit(fv) for fv in w}
        neg = {}
        pre = None
        if isinstance(a, QueryAutomaton):
            pre = _union_combos(a, ctx, child_maps)
        # each term is folded into its state's disjunction at once, so only
        # one accumulator per state stays live in the mirrored bags
        acc: dict[object, object] = {}
        for combo in itertools.product(*[sorted(m.items(), key=lambda kv: repr(kv[0])) for m in child_maps]):
            child_states = tuple(s for s, _ in combo)
            child_gates = [g for _, g in combo]
            for bits in itertools.product((False, True), repeat=len(w)):
                present = frozenset(fv for fv, b in zip(w, bits) if b)
                if pre is not None:
                    s = _filtered_transition(a, child_states, present, pre)
                else:
                    s = a.transition(ctx, child_states, present)
                lits = []
                for fv, b in zip(w, bits):
                    if b:
                        lits.append(pos[fv])
                    else:
                        if fv not in neg:
                            neg[fv] = gates.not_(pos[fv])
                        lits.append(neg[fv])
                term = gates.and_(child_gates + lits)
                acc[s] = gates.or_([acc[s], term]) if s in acc else term
        smap = {s: g for s, g in sorted(acc.items(), key=lambda kv: repr(kv[0])) if g != F}
        nprod = 1
        for m in child_maps:
            nprod *= len(m)
        stats["size_bound"] += nprod * (2 ** len(w)) * (len(w) + 3) + len(w) + len(smap)
        stats["combos"] += nprod * (2 ** len(w))
        for c in kids:
            del states[c]
        states[n] = smap
        stats["max_states"] = max(stats["max_states"], len(smap))
        stats["total_states"] += len(smap)
        exports[n] = list(smap.values())
    root = t.root
    gates.at(root)
    return gates.or_([g for s, g in states[root].items() if a.accepting(s)])


def _union_combos(a: QueryAutomaton, ctx, child_maps) -> list:
    pre = []
    for ci in range(len(a.components)):
        toks = []
        for m in child_maps:
            u = set()
            for s in m:
                if s[ci] != DONE:
                    u |= s[ci]
            toks.append(sorted(u))
        pre.append(a.combos(ci, ctx, toks))
    return pre


def _filtered_transition(a: QueryAutomaton, child_states, present, pre):
    out = []
    for ci, combos in enumerate(pre):
        subs = [s[ci] for s in child_states]
        if any(s == DONE for s in subs):
            out.append(DONE)
            continue
        left = subs[0] if subs else frozenset()
        right = subs[1] if len(subs) > 1 else frozenset()
        toks = set()
        done = False
        for cb in combos:
            if cb.left is not None and cb.left not in left:
                continue
            if cb.right is not None and cb.right not in right:
                continue
            if not cb.required <= present:
                continue
            if cb.out == COMPLETE:
                done = True
                break
            toks.add(cb.out)
        out.append(DONE if done else frozenset(toks))
    return tuple(out)


def _mirror(t: TreeDecomposition, circuit: Circuit, gates: _Gates, exports, extra, output, pcc) -> TreeDecomposition:
    """Circuit decomposition following ``t``: one chain of bags per node of ``t``."""
    bags: dict[int, frozenset] = {}
    edges: list[tuple[int, int]] = []
    first_bag: dict[int, int] = {}
    last_bag: dict[int, int] = {}
    nid = 0
    for n in t.postorder():
        keep = {gate_index(v) for v in t.bags[n] if v.startswith("g:")} | extra.get(n, set())
        created = gates.created.get(n, [])
        exported = {g for g in exports.get(n, []) if isinstance(g, int)}
        if n == t.root:
            exported.add(output)
        child_in = set()
        for c in t.children[n]:
            child_in |= {g for g in exports.get(c, []) if isinstance(g, int)}
        m = max(1, len(created))
        last_use: dict[int, int] = {}
        for i, g in enumerate(created, 1):
            for x in circuit.gates[g].args:
                if isinstance(x, int) and not isinstance(x, bool):
                    last_use[x] = i
        spans: dict[int, tuple[int, int]] = {}
        for x in child_in:
            spans[x] = (1, m if x in exported else max(1, last_use.get(x, 1)))
        for i, g in enumerate(created, 1):
            spans[g] = (i, m if g in exported else max(i, last_use.get(g, i)))
        for x in exported:
            if x not in spans and x not in keep:
                # an exported annotation gate not otherwise tracked at this node
                spans[x] = (1, m)
        chain = []
        for i in range(1, m + 1):
            bag = set(keep)
            bag.update(x for x, (lo, hi) in spans.items() if lo <= i <= hi)
            bags[nid] = frozenset(gate_id(x) for x in bag)
            chain.append(nid)
            nid += 1
        for a_, b_ in zip(chain, chain[1:]):
            edges.append((a_, b_))
        first_bag[n], last_bag[n] = chain[0], chain[-1]
        for c in t.children[n]:
            edges.append((last_bag[c], first_bag[n]))
    return TreeDecomposition(bags, edges, last_bag[t.root])

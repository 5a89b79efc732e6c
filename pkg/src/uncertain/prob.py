"""Probability of circuits and queries.

``prob_bruteforce`` sums over valuations and is the oracle.
``prob_message_passing`` runs sum-product over a tree decomposition of the
circuit, with one dense table per bag.  ``prob_query`` chains the whole
pipeline from an uncertain instance and a query text to a probability.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .circuits import AND, CONST, INPUT, NOT, OR, Circuit
from .errors import DecompositionError, InputError, LimitExceeded, UncertainError
from .instances import _check_cap, check_prob, instance_probs, max_events, prepare_pcc
from .lineage import LineageResult, build_lineage
from .query import Query, compile, parse_query
from .treedec import TreeDecomposition, build_graph, circuit_graph, decompose, gate_id, gate_index, root_and_binarize

DEFAULT_MAX_TABLE_WIDTH = 24  # tables hold 2^(width+1) entries


def _event_prob(probs: Mapping, e: str):
    try:
        return probs[e]
    except KeyError:
        raise InputError(f"no probability given for event {e!r}") from None


def prob_bruteforce(c: Circuit, probs: Mapping, cap: int | None = None):
    """Sum of valuation weights over the valuations satisfying ``c``.

    Only the events feeding the output matter; the others are not enumerated.
    Exact if the probabilities are Fractions.
    """
    from .circuits import evaluate

    if not c.gates:
        raise InputError("empty circuit")
    cone = c.cone()
    events = sorted({c.gates[i].args[0] for i in cone if c.gates[i].kind == INPUT})
    _check_cap(len(events), cap if cap is not None else max_events())
    ps = [_event_prob(probs, e) for e in events]
    exact = all(isinstance(p, (Fraction, int)) for p in ps)
    total = Fraction(0) if exact else 0.0
    rest = dict.fromkeys(c.events, False)  # outside the cone, any value will do
    for bits in itertools.product((False, True), repeat=len(events)):
        v = {**rest, **dict(zip(events, bits))}
        if evaluate(c, v):
            w = Fraction(1) if exact else 1.0
            for p, b in zip(ps, bits):
                w *= p if b else 1 - p
            total += w
    return total


# -- message passing ----------------------------------------------------------------


def _as_fraction(p) -> Fraction:
    # 0.7 means 7/10 here, not the nearest binary double
    return Fraction(repr(p)) if isinstance(p, float) else Fraction(p)


@dataclass
class FactorTable:
    scope: tuple[int, ...]  # gate indices, one axis each
    values: np.ndarray


def _gate_factor(c: Circuit, g: int, probs: Mapping, exact: bool) -> FactorTable:
    gate = c.gates[g]
    one, zero = (Fraction(1), Fraction(0)) if exact else (1.0, 0.0)
    dtype = object if exact else float
    if gate.kind == INPUT:
        p = _event_prob(probs, gate.args[0])
        p = _as_fraction(p) if exact else float(p)
        return FactorTable((g,), np.array([one - p, p], dtype=dtype))
    if gate.kind == CONST:
        return FactorTable((g,), np.array([zero, one] if gate.args[0] else [one, zero], dtype=dtype))
    args = tuple(sorted(set(gate.args)))
    scope = (g,) + args
    vals = np.full((2,) * len(scope), zero, dtype=dtype)
    for bits in itertools.product((0, 1), repeat=len(args)):
        if gate.kind == AND:
            out = all(bits)
        elif gate.kind == OR:
            out = any(bits)
        else:
            out = not bits[0]
        vals[(int(out),) + bits] = one
    return FactorTable(scope, vals)


def _coarsen(t: TreeDecomposition, limit: int) -> tuple[dict[int, set], dict[int, list[int]], dict[int, int]]:
    """Contract tree edges while the merged bag stays within ``limit`` vertices.

    Returns the merged bags, their children, and the group of each original bag.
    Contraction keeps the running intersection property, so the result is a
    decomposition of the same graph whose width does not exceed ``limit - 1``.
    """
    group: dict[int, int] = {}
    bags: dict[int, set] = {}
    kids: dict[int, list[int]] = {}
    for n in t.postorder():
        bag = set(t.bags[n])
        mine: list[int] = []
        for c in t.children[n]:
            cb = bags[c]
            if len(bag | cb) <= limit:
                bag |= cb
                mine.extend(kids.pop(c))
                del bags[c]
                group[c] = n
            else:
                mine.append(c)
        bags[n] = bag
        kids[n] = mine
        group[n] = n
    # resolve chains of merges to their final group
    final: dict[int, int] = {}
    for n in reversed(t.postorder()):
        g = group[n]
        final[n] = n if g == n else final[g]
    return bags, kids, final


def _postorder(root: int, kids: Mapping[int, list[int]]) -> list[int]:
    out, stack = [], [(root, False)]
    while stack:
        n, done = stack.pop()
        if done:
            out.append(n)
            continue
        stack.append((n, True))
        for c in sorted(kids[n], reverse=True):
            stack.append((c, False))
    return out


@dataclass
class PassResult:
    probability: object
    bags: int
    max_table: int
    marginals: dict | None = None


def sum_product(
    c: Circuit,
    t: TreeDecomposition,
    probs: Mapping,
    exact: bool = False,
    distribute: bool = False,
    max_width: int = DEFAULT_MAX_TABLE_WIDTH,
) -> PassResult:
    """Sum-product over decomposition ``t`` of the circuit graph of ``c``, output pinned to true.

    The collect pass sends messages to the root and yields the total mass.
    With ``distribute`` a second pass from the root gives every bag its
    marginal table (exposed for inspection; the probability does not need it).
    """
    if not c.gates:
        raise InputError("empty circuit")
    cone = c.cone()
    if t.width + 1 > max_width + 1:
        raise LimitExceeded(f"circuit decomposition width {t.width} exceeds the table cap {max_width}")
    root = t.root if t.root is not None else min(t.bags)
    if t.root is None:
        t = TreeDecomposition(t.bags, t.edges, root)
    limit = max(t.width + 1, 1)
    bags, kids, group = _coarsen(t, limit)
    scopes = {n: {gate_index(v) for v in bag if v.startswith("g:")} & cone for n, bag in bags.items()}

    # factor assignment: smallest original bag id holding the scope
    holder: dict[int, list[int]] = {}
    for v_bag in sorted(t.bags):
        for v in t.bags[v_bag]:
            if v.startswith("g:"):
                holder.setdefault(gate_index(v), []).append(v_bag)
    factors: dict[int, list[FactorTable]] = {n: [] for n in bags}
    for g in sorted(cone):
        f = _gate_factor(c, g, probs, exact)
        cands = None
        for x in f.scope:
            hs = set(holder.get(x, ()))
            cands = hs if cands is None else cands & hs
        if not cands:
            raise DecompositionError(f"no bag holds the scope of gate {g} {sorted(f.scope)}")
        factors[group[min(cands)]].append(f)
    out = c.output
    pin_bags = holder.get(out)
    if not pin_bags:
        raise DecompositionError(f"no bag holds the output gate {out}")
    one, zero = (Fraction(1), Fraction(0)) if exact else (1.0, 0.0)
    factors[group[min(pin_bags)]].append(FactorTable((out,), np.array([zero, one], dtype=object if exact else float)))

    root_g = group[root]
    order = _postorder(root_g, kids)
    parent = {c_: n for n in order for c_ in kids[n]}
    messages: dict[int, FactorTable] = {}
    max_table = 0
    for n in order:
        ops = list(factors[n]) + [messages[c_] for c_ in kids[n]]
        keep = scopes[n] & scopes[parent[n]] if n in parent else set()
        msg = _contract(ops, keep, exact)
        max_table = max(max_table, len(scopes[n]))
        messages[n] = msg
    total = messages[root_g].values[()] if messages[root_g].scope == () else messages[root_g].values.sum()
    total = total if exact else float(total)
    marginals = None
    if distribute:
        marginals = _distribute(order, kids, parent, factors, messages, scopes, exact)
    return PassResult(total, len(bags), max_table, marginals)


def _contract(ops: list[FactorTable], keep: set, exact: bool) -> FactorTable:
    """Multiply the tables over the union of their scopes, then sum out everything not in ``keep``."""
    dtype = object if exact else float
    if not ops:
        return FactorTable((), np.array(Fraction(1) if exact else 1.0, dtype=dtype))
    axes = sorted({x for f in ops for x in f.scope})
    if len(axes) > 31:
        raise LimitExceeded(f"bag with {len(axes)} live gates is too wide for dense tables")
    pos = {x: i for i, x in enumerate(axes)}
    acc = None
    for f in ops:
        # align each table's axes with the bag order, size-1 axes for the rest
        order = sorted(range(len(f.scope)), key=lambda i: pos[f.scope[i]])
        vals = np.transpose(f.values, order) if order != list(range(len(order))) else f.values
        shape = [1] * len(axes)
        for i in order:
            shape[pos[f.scope[i]]] = 2
        vals = vals.reshape(shape)
        acc = vals if acc is None else np.asarray(acc * vals, dtype=dtype)
    acc = np.broadcast_to(acc, (2,) * len(axes)) if acc.shape != (2,) * len(axes) else acc
    out_scope = tuple(x for x in axes if x in keep)
    drop = tuple(pos[x] for x in axes if x not in keep)
    if drop:
        acc = acc.sum(axis=drop)
    return FactorTable(out_scope, np.asarray(acc, dtype=dtype))


def _distribute(order, kids, parent, factors, messages, scopes, exact):
    down: dict[int, FactorTable] = {}
    marg: dict[int, FactorTable] = {}
    for n in reversed(order):
        base = list(factors[n]) + ([down[n]] if n in down else [])
        marg[n] = _contract(base + [messages[c_] for c_ in kids[n]], scopes[n], exact)
        for c_ in kids[n]:
            others = [messages[d] for d in kids[n] if d != c_]
            down[c_] = _contract(base + others, scopes[n] & scopes[c_], exact)
    return {n: (m.scope, m.values) for n, m in marg.items()}


def circuit_decomposition(c: Circuit, exact: bool = False) -> TreeDecomposition:
    """Rooted binary decomposition of the circuit graph (gate wires plus co-input edges)."""
    return root_and_binarize(decompose(circuit_graph(c), exact=exact))


def prob_message_passing(lr, probs: Mapping, exact: bool = False, **kw):
    """Probability that the lineage circuit is true, by sum-product over its decomposition.

    ``lr`` is a :class:`LineageResult` or a bare circuit, decomposed on the spot.
    """
    if isinstance(lr, Circuit):
        c, t = lr, circuit_decomposition(lr)
    elif isinstance(lr, LineageResult):
        c, t = lr.circuit, lr.circuit_decomposition
    else:
        c, t = lr
    return sum_product(c, t, probs, exact=exact, **kw).probability


# -- end-to-end ---------------------------------------------------------------------


@dataclass
class QueryResult:
    probability: object
    diagnostics: dict
    timings: dict = field(default_factory=dict)
    lineage: LineageResult | None = None


def prob_query(
    inst,
    q: Query | str,
    exact: bool = False,
    mode: str = "auto",
    exact_treewidth: bool = False,
    max_tokens: int | None = None,
) -> QueryResult:
    """Probability of ``q`` on ``inst`` through decomposition, lineage and message passing.

    Errors raised along the way carry the failing stage name in ``.stage``.
    """
    times: dict[str, float] = {}
    stage = "parse"
    t0 = time.perf_counter()

    def lap(next_stage):
        nonlocal stage, t0
        now = time.perf_counter()
        times[stage] = round(now - t0, 6)
        stage, t0 = next_stage, now

    try:
        if isinstance(q, str):
            q = parse_query(q)
        lap("prepare")
        pcc = prepare_pcc(inst)
        probs = {e: check_prob(p, f"probability of {e}") for e, p in instance_probs(pcc).items()}
        lap("graph")
        g = build_graph(pcc)
        lap("decompose")
        td = decompose(g, exact=exact_treewidth)
        lap("binarize")
        tb = root_and_binarize(td)
        lap("compile")
        a = compile(q) if max_tokens is None else compile(q, max_tokens=max_tokens)
        lap("lineage")
        lr = build_lineage(a, pcc, tb, mode=mode)
        lap("message_passing")
        ct, source = lr.circuit_decomposition, "mirrored"
        if ct.width > DEFAULT_MAX_TABLE_WIDTH:
            # the mirrored bags carry every state gate of a node; min-fill on the
            # circuit itself is often much narrower for exact-state lineages
            alt = circuit_decomposition(lr.circuit)
            if alt.width < ct.width:
                ct, source = alt, "min-fill"
        res = sum_product(lr.circuit, ct, probs, exact=exact)
        lap("done")
    except UncertainError as exc:
        exc.stage = stage
        raise
    p = res.probability
    if not exact:
        p = min(1.0, max(0.0, p))
    diag = {
        "facts": len(pcc.gates),
        "events": len(pcc.events),
        "graph_vertices": len(g.adj),
        "instance_width": td.width,
        "decomposition_bags": len(tb.bags),
        "lineage_mode": lr.stats["mode"],
        "max_states": lr.stats["max_states"],
        "total_states": lr.stats["total_states"],
        "circuit_gates": lr.stats["gates"],
        "circuit_size_bound": lr.stats["size_bound"] + len(pcc.circuit.gates),
        "circuit_width": ct.width,
        "mirrored_circuit_width": lr.circuit_decomposition.width,
        "circuit_decomposition": source,
        "message_bags": res.bags,
    }
    return QueryResult(p, diag, times, lr)

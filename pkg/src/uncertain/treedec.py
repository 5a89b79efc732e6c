"""Incidence graphs and tree decompositions.

Vertices are strings with a kind prefix: ``e:`` for domain elements, ``f:``
for facts, ``g:`` for circuit gates.  Any other string is accepted for plain
graphs (used by the random-graph tests).
"""

from __future__ import annotations

import heapq
import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

from .circuits import AND, NOT, OR, Circuit
from .errors import DecompositionError, LimitExceeded
from .instances import Fact, Instance, prepare_pcc

# fill of vertices with a larger degree is only approximated (see _min_fill_order)
EXACT_FILL_DEGREE = 64
EXACT_TREEWIDTH_MAX = 15


def element_id(name: str) -> str:
    return "e:" + name


def fact_id(f: Fact) -> str:
    return "f:" + f.relation + json.dumps(list(f.args), separators=(",", ":"))


def gate_id(i: int) -> str:
    return f"g:{i}"


def gate_index(vid: str) -> int:
    return int(vid[2:])


@dataclass
class IncidenceGraph:
    adj: dict[str, set[str]] = field(default_factory=dict)
    facts: dict[str, Fact] = field(default_factory=dict)

    def add_vertex(self, v: str) -> None:
        self.adj.setdefault(v, set())

    def add_edge(self, u: str, v: str) -> None:
        if u == v:
            return
        self.adj.setdefault(u, set()).add(v)
        self.adj.setdefault(v, set()).add(u)

    @property
    def vertices(self):
        return self.adj.keys()

    def edges(self) -> list[tuple[str, str]]:
        return sorted((u, v) for u, ns in self.adj.items() for v in ns if u < v)

    def kind_count(self, prefix: str) -> int:
        return sum(1 for v in self.adj if v.startswith(prefix))

    @classmethod
    def from_edges(cls, vertices: Iterable, edges: Iterable[tuple]) -> "IncidenceGraph":
        g = cls()
        for v in vertices:
            g.add_vertex(str(v))
        for u, v in edges:
            g.add_edge(str(u), str(v))
        return g


def add_circuit(g: IncidenceGraph, c: Circuit) -> None:
    """Add gates with their wires plus edges between co-inputs of a gate.

    The co-input edges make every gate's family a clique, so each family lands
    in one bag of any valid decomposition and gate factors always fit.
    """
    for i, gate in enumerate(c.gates):
        gi = gate_id(i)
        g.add_vertex(gi)
        if gate.kind in (AND, OR, NOT):
            ins = [gate_id(a) for a in gate.args]
            for a in ins:
                g.add_edge(gi, a)
            for a, b in itertools.combinations(ins, 2):
                g.add_edge(a, b)


def build_graph(inst) -> IncidenceGraph:
    """Incidence graph of an instance; for uncertain ones, joined with the annotation circuit."""
    g = IncidenceGraph()
    if isinstance(inst, Instance):
        facts = {f: None for f in inst.facts}
    else:
        pcc = prepare_pcc(inst)
        add_circuit(g, pcc.circuit)
        facts = dict(pcc.gates)
    for f, gate in facts.items():
        fv = fact_id(f)
        g.add_vertex(fv)
        g.facts[fv] = f
        for a in f.args:
            g.add_edge(fv, element_id(a))
        if gate is not None:
            g.add_edge(fv, gate_id(gate))
    return g


def circuit_graph(c: Circuit) -> IncidenceGraph:
    g = IncidenceGraph()
    add_circuit(g, c)
    return g


# -- decompositions ------------------------------------------------------------


@dataclass
class TreeDecomposition:
    bags: dict[int, frozenset]
    edges: list[tuple[int, int]]
    root: int | None = None

    @property
    def width(self) -> int:
        return max((len(b) for b in self.bags.values()), default=0) - 1

    def __len__(self):
        return len(self.bags)

    @cached_property
    def neighbors(self) -> dict[int, list[int]]:
        nb: dict[int, list[int]] = {n: [] for n in self.bags}
        for a, b in self.edges:
            nb[a].append(b)
            nb[b].append(a)
        for v in nb.values():
            v.sort()
        return nb

    @cached_property
    def parent(self) -> dict[int, int | None]:
        if self.root is None:
            raise DecompositionError("decomposition is not rooted")
        par: dict[int, int | None] = {self.root: None}
        queue = deque([self.root])
        while queue:
            n = queue.popleft()
            for m in self.neighbors[n]:
                if m not in par:
                    par[m] = n
                    queue.append(m)
        return par

    @cached_property
    def children(self) -> dict[int, list[int]]:
        ch: dict[int, list[int]] = {n: [] for n in self.bags}
        for n, p in self.parent.items():
            if p is not None:
                ch[p].append(n)
        for v in ch.values():
            v.sort()
        return ch

    def postorder(self) -> list[int]:
        """Nodes children-first; children visited in increasing id order."""
        out: list[int] = []
        stack = [(self.root, False)]
        while stack:
            n, done = stack.pop()
            if done:
                out.append(n)
                continue
            stack.append((n, True))
            for c in reversed(self.children[n]):
                stack.append((c, False))
        return out

    @cached_property
    def top(self) -> dict[str, int]:
        """For every vertex, the topmost bag containing it (its introduction bag)."""
        top: dict[str, int] = {}
        queue = deque([self.root])
        while queue:
            n = queue.popleft()
            for v in self.bags[n]:
                top.setdefault(v, n)
            queue.extend(self.children[n])
        return top

    def is_binary(self) -> bool:
        return self.root is not None and all(len(c) <= 2 for c in self.children.values())

    def to_json(self) -> dict:
        out = {
            "bags": {str(n): sorted(b) for n, b in sorted(self.bags.items())},
            "edges": sorted([min(a, b), max(a, b)] for a, b in self.edges),
            "root": self.root,
        }
        return out

    @classmethod
    def from_json(cls, data: Mapping) -> "TreeDecomposition":
        try:
            bags = {int(k): frozenset(v) for k, v in data["bags"].items()}
            edges = [(int(a), int(b)) for a, b in data.get("edges", [])]
            root = data.get("root")
        except (KeyError, TypeError, ValueError) as exc:
            raise DecompositionError(f"malformed decomposition JSON: {exc}") from exc
        return cls(bags, edges, None if root is None else int(root))

    def to_dot(self, name: str = "decomposition") -> str:
        lines = [f"graph {name} {{", "  node [shape=box];"]
        for n, b in sorted(self.bags.items()):
            label = "\\n".join(sorted(b)).replace('"', '\\"')
            lines.append(f'  b{n} [label="{n}: {label}"];')
        for a, b in sorted(self.edges):
            lines.append(f"  b{a} -- b{b};")
        lines.append("}")
        return "\n".join(lines) + "\n"


@dataclass
class ValidationReport:
    ok: bool
    condition: str | None = None
    witness: object = None

    def __bool__(self):
        return self.ok

    def __str__(self):
        if self.ok:
            return "valid"
        return f"violates {self.condition}: {self.witness!r}"


def validate(t: TreeDecomposition, g: IncidenceGraph) -> ValidationReport:
    """Check tree shape, then vertex coverage (a), edge coverage (b), running intersection (c)."""
    nodes = list(t.bags)
    if not nodes:
        return ValidationReport(False, "tree", "no bags")
    for a, b in t.edges:
        if a not in t.bags or b not in t.bags:
            return ValidationReport(False, "tree", (a, b))
    if len(t.edges) != len(nodes) - 1 or len(_component(t, nodes[0], set(nodes))) != len(nodes):
        return ValidationReport(False, "tree", "bag graph is not a tree")
    where: dict[str, list[int]] = {}
    for n, bag in t.bags.items():
        for v in bag:
            where.setdefault(v, []).append(n)
    for v in sorted(g.adj):
        if v not in where:
            return ValidationReport(False, "(a) vertex coverage", v)
    for u, v in g.edges():
        if not (set(where[u]) & set(where[v])):
            return ValidationReport(False, "(b) edge coverage", (u, v))
    for v in sorted(where):
        holders = set(where[v])
        if len(_component(t, where[v][0], holders)) != len(holders):
            return ValidationReport(False, "(c) running intersection", v)
    return ValidationReport(True)


def _component(t: TreeDecomposition, start: int, allowed: set) -> set:
    seen = {start}
    stack = [start]
    while stack:
        n = stack.pop()
        for m in t.neighbors[n]:
            if m in allowed and m not in seen:
                seen.add(m)
                stack.append(m)
    return seen


def _fill(adj: dict[str, set[str]], v: str) -> int:
    ns = adj[v]
    d = len(ns)
    if d > EXACT_FILL_DEGREE:
        return d * (d - 1) // 2
    missing = 0
    for a, b in itertools.combinations(ns, 2):
        if b not in adj[a]:
            missing += 1
    return missing


def _min_fill_order(adj_in: Mapping[str, set[str]]) -> list[tuple[str, frozenset]]:
    """Greedy min-fill elimination; ties go to the lexicographically smallest id.

    Vertices of degree above EXACT_FILL_DEGREE are keyed by the d(d-1)/2 upper
    bound on their fill until their degree drops.
    """
    adj = {v: set(ns) for v, ns in adj_in.items()}
    key = {v: _fill(adj, v) for v in adj}
    heap = [(k, v) for v, k in key.items()]
    heapq.heapify(heap)
    order = []
    while heap:
        k, v = heapq.heappop(heap)
        if key.get(v) != k:
            continue
        ns = adj.pop(v)
        del key[v]
        order.append((v, frozenset(ns)))
        added = []
        for a, b in itertools.combinations(sorted(ns), 2):
            if b not in adj[a]:
                adj[a].add(b)
                adj[b].add(a)
                added.append((a, b))
        for u in ns:
            adj[u].discard(v)
        affected = set(ns)
        for a, b in added:
            affected |= adj[a] & adj[b]
        for u in affected:
            k2 = _fill(adj, u)
            if k2 != key[u]:
                key[u] = k2
                heapq.heappush(heap, (k2, u))
    return order


def exact_treewidth(g: IncidenceGraph, limit: int = EXACT_TREEWIDTH_MAX) -> tuple[int, list[str]]:
    """Exact treewidth and an optimal elimination order, by DP over vertex subsets."""
    verts = sorted(g.adj)
    n = len(verts)
    if n > limit:
        raise LimitExceeded(f"exact treewidth limited to {limit} vertices, graph has {n}")
    if n == 0:
        return -1, []
    idx = {v: i for i, v in enumerate(verts)}
    nbr = [0] * n
    for v, ns in g.adj.items():
        for u in ns:
            nbr[idx[v]] |= 1 << idx[u]

    def q(s: int, v: int) -> int:
        # vertices outside s|{v} reachable from v through s
        seen = 1 << v
        frontier = 1 << v
        reach = 0
        while frontier:
            b = frontier & -frontier
            frontier ^= b
            w = b.bit_length() - 1
            for_new = nbr[w] & ~seen
            seen |= for_new
            reach |= for_new & ~s
            frontier |= for_new & s
        return bin(reach).count("1")

    full = (1 << n) - 1
    best = {0: -1}
    choice = {}
    for size in range(1, n + 1):
        for combo in itertools.combinations(range(n), size):
            s = 0
            for c in combo:
                s |= 1 << c
            val = None
            for v in combo:
                rest = s & ~(1 << v)
                cand = max(best[rest], q(rest, v))
                if val is None or cand < val:
                    val, pick = cand, v
            best[s] = val
            choice[s] = pick
    order = []
    s = full
    while s:
        v = choice[s]
        order.append(verts[v])
        s &= ~(1 << v)
    order.reverse()
    return best[full], order


def _order_from_list(adj_in: Mapping[str, set[str]], order: list[str]) -> list[tuple[str, frozenset]]:
    adj = {v: set(ns) for v, ns in adj_in.items()}
    out = []
    for v in order:
        ns = adj.pop(v)
        out.append((v, frozenset(ns)))
        for a, b in itertools.combinations(ns, 2):
            adj[a].add(b)
            adj[b].add(a)
        for u in ns:
            adj[u].discard(v)
    return out


def decomposition_from_order(elim: list[tuple[str, frozenset]]) -> TreeDecomposition:
    if not elim:
        return TreeDecomposition({0: frozenset()}, [], None)
    pos = {v: i for i, (v, _) in enumerate(elim)}
    bags = {i: frozenset(ns | {v}) for i, (v, ns) in enumerate(elim)}
    parent: dict[int, int | None] = {}
    for i, (v, ns) in enumerate(elim):
        parent[i] = min((pos[u] for u in ns), default=None)
    roots = [i for i, p in parent.items() if p is None]
    # join components: every root hangs below the last one
    last = roots[-1]
    for r in roots[:-1]:
        parent[r] = last
    # contract bags subsumed by their parent; parents always come later in the order
    kids: dict[int, list[int]] = {i: [] for i in bags}
    for i, p in parent.items():
        if p is not None:
            kids[p].append(i)
    alive = set(bags)
    for i in range(len(elim)):
        p = parent[i]
        if p is not None and bags[i] <= bags[p]:
            alive.discard(i)
            for j in kids[i]:
                parent[j] = p
                kids[p].append(j)
    ids = sorted(alive)
    renum = {old: new for new, old in enumerate(ids)}
    new_bags = {renum[i]: bags[i] for i in ids}
    edges = [(renum[i], renum[parent[i]]) for i in ids if parent[i] is not None]
    return TreeDecomposition(new_bags, edges, None)


def decompose(g: IncidenceGraph, exact: bool = False) -> TreeDecomposition:
    """A valid (not necessarily optimal) tree decomposition via min-fill elimination.

    ``exact=True`` uses the subset DP instead; only for graphs up to
    EXACT_TREEWIDTH_MAX vertices.
    """
    if exact:
        _, order = exact_treewidth(g)
        return decomposition_from_order(_order_from_list(g.adj, order))
    return decomposition_from_order(_min_fill_order(g.adj))


def root_and_binarize(t: TreeDecomposition, root: int | None = None) -> TreeDecomposition:
    """Root the tree and split nodes with more than two children by copying their bag."""
    if root is None:
        root = t.root
    if root is None:
        small = [n for n in sorted(t.bags) if len(t.neighbors[n]) <= 2]
        root = small[0] if small else min(t.bags)
    rooted = TreeDecomposition(dict(t.bags), list(t.edges), root)
    bags = dict(t.bags)
    next_id = max(bags) + 1
    edges = []
    for n in sorted(bags):
        kids = rooted.children[n]
        holder = n
        while len(kids) > 2:
            edges.append((holder, kids[0]))
            copy = next_id
            next_id += 1
            bags[copy] = bags[n]
            edges.append((holder, copy))
            holder, kids = copy, kids[1:]
        for c in kids:
            edges.append((holder, c))
    return TreeDecomposition(bags, edges, root)

import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from uncertain.instances import Instance, PCCInstance, Schema, TIDInstance, fact
from uncertain.circuits import CircuitBuilder
from uncertain.treedec import (
    IncidenceGraph,
    TreeDecomposition,
    build_graph,
    decompose,
    exact_treewidth,
    root_and_binarize,
    validate,
)

from generators import random_pc, random_pcc, random_tid, trip_table


def random_graph(rng, n, p):
    edges = [(u, v) for u, v in itertools.combinations(range(n), 2) if rng.random() < p]
    return IncidenceGraph.from_edges(range(n), edges)


def width_by_orderings(g):
    """Treewidth as the best elimination ordering over all permutations (small graphs only)."""
    best = len(g.adj) - 1
    vs = sorted(g.adj)
    for perm in itertools.permutations(vs):
        adj = {v: set(ns) for v, ns in g.adj.items()}
        w = 0
        for v in perm:
            ns = adj.pop(v)
            w = max(w, len(ns))
            for a in ns:
                adj[a].discard(v)
                adj[a] |= ns - {a}
        best = min(best, w)
    return max(best, 0) if vs else -1


def path(n):
    return IncidenceGraph.from_edges(range(n), [(i, i + 1) for i in range(n - 1)])


def cycle(n):
    return IncidenceGraph.from_edges(range(n), [(i, (i + 1) % n) for i in range(n)])


class TestGraph:
    def test_path_instance(self):
        g = build_graph(Instance.of([fact("R", "a", "b"), fact("R", "b", "c")]))
        assert g.kind_count("e:") == 3 and g.kind_count("f:") == 2
        assert len(g.edges()) == 4

    def test_single_fact_with_gate(self):
        b = CircuitBuilder()
        x = b.input("x")
        inst = PCCInstance(Schema.of(R=1), {fact("R", "a"): x}, b.build(x), {"x": 0.5})
        g = build_graph(inst)
        assert set(g.edges()) == {('e:a', 'f:R["a"]'), ('f:R["a"]', "g:0")}

    def test_trip_table(self):
        g = build_graph(trip_table())
        assert g.kind_count("e:") == 3 and g.kind_count("f:") == 5
        # pods, stoc, their negations, and the binary conjunctions
        assert g.kind_count("g:") == 7
        seen, stack = set(), [next(iter(g.adj))]
        while stack:
            v = stack.pop()
            if v not in seen:
                seen.add(v)
                stack.extend(g.adj[v])
        assert seen == set(g.adj)


class TestDecompose:
    def test_path_width_one(self):
        t = decompose(path(12))
        assert t.width == 1 and validate(t, path(12))

    def test_triangle(self):
        g = IncidenceGraph.from_edges(range(3), [(0, 1), (1, 2), (0, 2)])
        assert decompose(g).width == 2

    def test_cycle(self):
        assert decompose(cycle(7)).width == 2

    def test_empty_graph(self):
        t = decompose(IncidenceGraph())
        assert t.width == -1 and validate(t, IncidenceGraph())

    def test_exact_matches_all_orderings(self):
        rng = random.Random(1)
        for _ in range(40):
            g = random_graph(rng, rng.randint(1, 7), rng.random())
            assert exact_treewidth(g)[0] == width_by_orderings(g)

    def test_heuristic_at_least_exact(self):
        rng = random.Random(2)
        for _ in range(150):
            g = random_graph(rng, rng.randint(1, 10), rng.random())
            t = decompose(g)
            assert validate(t, g)
            assert t.width >= exact_treewidth(g)[0]
            te = decompose(g, exact=True)
            assert validate(te, g) and te.width == exact_treewidth(g)[0]

    def test_random_trees_have_width_one(self):
        rng = random.Random(3)
        for _ in range(50):
            n = rng.randint(2, 40)
            g = IncidenceGraph.from_edges(range(n), [(i, rng.randrange(i)) for i in range(1, n)])
            assert decompose(g).width == 1

    def test_instances(self):
        rng = random.Random(4)
        for gen in (random_tid, random_pc, random_pcc):
            for _ in range(30):
                g = build_graph(gen(rng))
                assert validate(decompose(g), g)


class TestValidate:
    def test_missing_edge(self):
        g = path(3)
        t = TreeDecomposition({0: frozenset({"0", "1"}), 1: frozenset({"2"})}, [(0, 1)])
        rep = validate(t, g)
        assert not rep and rep.condition == "(b) edge coverage" and rep.witness == ("1", "2")

    def test_running_intersection(self):
        g = IncidenceGraph.from_edges(range(3), [])
        t = TreeDecomposition(
            {0: frozenset({"0"}), 1: frozenset({"1"}), 2: frozenset({"0", "2"})}, [(0, 1), (1, 2)]
        )
        rep = validate(t, g)
        assert not rep and rep.condition == "(c) running intersection" and rep.witness == "0"

    def test_missing_vertex(self):
        rep = validate(TreeDecomposition({0: frozenset({"0"})}, []), path(2))
        assert rep.condition == "(a) vertex coverage"

    def test_not_a_tree(self):
        t = TreeDecomposition({0: frozenset(), 1: frozenset(), 2: frozenset()}, [(0, 1), (1, 2), (0, 2)])
        assert validate(t, IncidenceGraph()).condition == "tree"


class TestBinarize:
    def test_star(self):
        bags = {0: frozenset({"c", "0"})}
        bags.update({i: frozenset({"c", str(i)}) for i in range(1, 6)})
        t = TreeDecomposition(bags, [(0, i) for i in range(1, 6)], 0)
        g = IncidenceGraph.from_edges(["c"] + [str(i) for i in range(6)], [("c", str(i)) for i in range(6)])
        b = root_and_binarize(t)
        assert b.is_binary() and b.width == t.width and validate(b, g)
        assert len(b.bags) > len(t.bags)

    def test_binary_tree_unchanged(self):
        t = decompose(path(6))
        b = root_and_binarize(t)
        assert sorted(map(sorted, b.bags.values())) == sorted(map(sorted, t.bags.values()))

    def test_introduction_bag_is_topmost(self):
        rng = random.Random(6)
        for _ in range(30):
            g = build_graph(random_pc(rng))
            t = root_and_binarize(decompose(g))
            for v, n in t.top.items():
                assert v in t.bags[n]
                p = t.parent[n]
                assert p is None or v not in t.bags[p]

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 12), st.floats(0, 1), st.integers(0, 10**6))
    def test_random_graphs_stay_valid(self, n, p, seed):
        g = random_graph(random.Random(seed), n, p)
        t = decompose(g)
        b = root_and_binarize(t)
        assert validate(b, g) and b.width == t.width and b.is_binary()

    def test_json_round_trip(self):
        t = root_and_binarize(decompose(build_graph(trip_table())))
        back = TreeDecomposition.from_json(t.to_json())
        assert back.bags == t.bags and back.root == t.root
        assert "graph" in t.to_dot()

import itertools
import math
import random

import pytest

from uncertain.errors import InputError, LimitExceeded
from uncertain.porder import (
    LabeledPoset,
    column_equals,
    count_linear_extensions,
    interleavings,
    is_possible_world,
    is_possible_world_bruteforce,
    linear_extensions,
    possible_worlds,
    product,
    projection,
    selection,
    union,
)

chain = LabeledPoset.chain
antichain = LabeledPoset.antichain


def random_poset(rng, n, labels="AB", arity=1, p=0.3, prefix="v"):
    ids = [f"{prefix}{i}" for i in range(n)]
    lab = {e: tuple(rng.choice(labels) for _ in range(arity)) for e in ids}
    # edges only go forward in id order, so the result is acyclic
    edges = [(ids[i], ids[j]) for i, j in itertools.combinations(range(n), 2) if rng.random() < p]
    return LabeledPoset.build(ids, lab, edges)


def orders_by_permutation(r):
    """Linear extensions as label sequences, by filtering all permutations."""
    above = r.above
    out = []
    for perm in itertools.permutations(r.elements):
        pos = {e: i for i, e in enumerate(perm)}
        if all(pos[a] < pos[b] for a in r.elements for b in above[a]):
            out.append(tuple(r.labels[e] for e in perm))
    return out


class TestBuild:
    def test_reduction(self):
        r = LabeledPoset.build("abc", {"a": "A", "b": "B", "c": "C"}, [("a", "b"), ("b", "c"), ("a", "c")])
        assert r.edges == frozenset({("a", "b"), ("b", "c")}) and r.less("a", "c")

    def test_cycle(self):
        with pytest.raises(InputError, match="cycle"):
            LabeledPoset.build("ab", {"a": "A", "b": "B"}, [("a", "b"), ("b", "a")])

    def test_mixed_arity(self):
        with pytest.raises(InputError):
            LabeledPoset.build("ab", {"a": ["A"], "b": ["A", "B"]})

    def test_json(self):
        rng = random.Random(1)
        r = random_poset(rng, 6)
        assert LabeledPoset.from_json(r.to_json()) == r
        with pytest.raises(InputError):
            LabeledPoset.from_json({"labels": {}})


class TestCounting:
    @pytest.mark.parametrize("n", range(0, 7))
    def test_chain_and_antichain(self, n):
        assert count_linear_extensions(chain(["A"] * n)) == 1
        assert count_linear_extensions(antichain(list(range(n)))) == math.factorial(n)

    def test_antichain_of_three_lists_six(self):
        assert len(linear_extensions(antichain("xyz"))) == 6

    def test_union_of_two_chains(self):
        u = union(chain("ab"), chain("cd"))
        assert count_linear_extensions(u) == 6 == len(linear_extensions(u))

    def test_grid(self):
        g = product(chain("ab"), chain("cd"))
        assert len(g) == 4
        # bottom and top are fixed, the two middle elements are incomparable
        assert count_linear_extensions(g) == len(orders_by_permutation(g)) == 2

    def test_count_matches_listing(self):
        rng = random.Random(2)
        for _ in range(100):
            r = random_poset(rng, rng.randint(0, 7), p=rng.random())
            assert count_linear_extensions(r) == len(linear_extensions(r)) == len(orders_by_permutation(r))

    def test_caps(self):
        with pytest.raises(LimitExceeded):
            linear_extensions(antichain(range(11)))
        with pytest.raises(LimitExceeded):
            count_linear_extensions(antichain(range(17)))
        assert count_linear_extensions(antichain(range(17)), cap=None) == math.factorial(17)


class TestAlgebra:
    def test_union_with_empty(self):
        r = chain("abc")
        assert union(r, antichain([])) == r

    def test_two_singletons(self):
        assert len(linear_extensions(union(antichain("x"), antichain("y")))) == 2

    def test_union_prefixes_on_collision(self):
        u = union(chain("ab"), chain("cd"))
        assert set(u.elements) == {"1.c0", "1.c1", "2.c0", "2.c1"}

    def test_union_arity_mismatch(self):
        with pytest.raises(InputError):
            union(chain([("a", "b")]), chain(["a"]))

    def test_union_is_exactly_the_interleavings(self):
        rng = random.Random(3)
        for _ in range(120):
            n = rng.randint(0, 8)
            k = rng.randint(0, n)
            r = random_poset(rng, k, "ABC", prefix="r")
            s = random_poset(rng, n - k, "ABC", prefix="s")
            expected = set()
            for x in possible_worlds(r):
                for y in possible_worlds(s):
                    expected |= interleavings(x, y)
            assert possible_worlds(union(r, s)) == expected

    def test_product_examples(self):
        p = product(chain("ab"), antichain("x"))
        assert linear_extensions(p) == [(("a", "x"), ("b", "x"))]
        assert count_linear_extensions(product(antichain("ab"), antichain("xy"))) == 24

    def test_product_orders_pointwise(self):
        rng = random.Random(4)
        for _ in range(30):
            r, s = random_poset(rng, 3, prefix="r"), random_poset(rng, 3, prefix="s")
            p = product(r, s)
            for a, b, a2, b2 in itertools.product(r.elements, s.elements, r.elements, s.elements):
                le = (a == a2 or r.less(a, a2)) and (b == b2 or s.less(b, b2))
                assert p.less(f"{a}*{b}", f"{a2}*{b2}") == (le and (a, b) != (a2, b2))

    def test_selection_examples(self):
        r = LabeledPoset.chain(["a", "b", "c"])
        assert selection(r, lambda t: True) == r
        kept = selection(r, lambda t: t[0] != "b")
        assert linear_extensions(kept) == [(("a",), ("c",))]
        assert kept.edges == frozenset({("c0", "c2")})

    def test_projection_keeps_duplicates_and_order(self):
        r = chain([("a", 1), ("b", 1), ("c", 2)])
        p = projection(r, [1])
        assert len(p) == 3 and p.edges == r.edges
        assert linear_extensions(p) == [((1,), (1,), (2,))]
        with pytest.raises(InputError):
            projection(r, [2])

    def test_selection_and_projection_are_sound(self):
        rng = random.Random(5)
        for _ in range(60):
            r = random_poset(rng, rng.randint(1, 6), "AB", arity=2)
            pred = column_equals(0, "A")
            sel = selection(r, pred)
            proj = projection(r, [1])
            for seq in possible_worlds(r):
                assert is_possible_world(sel, [t for t in seq if pred(t)])
                assert is_possible_world(proj, [(t[1],) for t in seq])


class TestMembership:
    def test_chain(self):
        r = chain("AB")
        assert is_possible_world(r, ["A", "B"]) and not is_possible_world(r, ["B", "A"])

    def test_duplicate_labels(self):
        assert is_possible_world(antichain("AA"), ["A", "A"])

    def test_wrong_multiset(self):
        assert not is_possible_world(antichain("AB"), ["A", "A"])

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            is_possible_world(chain("AB"), ["A"])

    def test_diamond(self):
        r = LabeledPoset.build("wxyz", {"w": "A", "x": "A", "y": "B", "z": "A"},
                               [("w", "x"), ("w", "y"), ("x", "z"), ("y", "z")])
        for seq in itertools.permutations("AAAB"):
            assert is_possible_world(r, list(seq)) == is_possible_world_bruteforce(r, list(seq))
        assert is_possible_world(r, list("AABA")) and not is_possible_world(r, list("BAAA"))

    def test_matches_bruteforce(self):
        rng = random.Random(6)
        for _ in range(250):
            n = rng.randint(1, 8)
            r = random_poset(rng, n, "AB", p=rng.random() * 0.5)
            seqs = [list(s) for s in possible_worlds(r)][:3]
            labels = [r.labels[e] for e in r.elements]
            for _ in range(3):
                rng.shuffle(labels)
                seqs.append(list(labels))
            for seq in seqs:
                assert is_possible_world(r, seq) == is_possible_world_bruteforce(r, seq)

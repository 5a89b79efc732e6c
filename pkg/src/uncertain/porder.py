"""Order uncertainty: bags of tuples under a partial order.

A :class:`LabeledPoset` is a set of occurrence ids, a label (tuple) per
occurrence and a strict partial order.  Its possible worlds are its linear
extensions read through the labels.  Labels may repeat.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

from .errors import InputError, LimitExceeded

DEFAULT_LIST_CAP = 10
DEFAULT_COUNT_CAP = 16


@dataclass(frozen=True)
class LabeledPoset:
    elements: tuple[str, ...]
    labels: Mapping[str, tuple]
    edges: frozenset  # covering pairs (less, greater), transitively reduced

    @classmethod
    def build(cls, elements: Iterable, labels: Mapping, edges: Iterable = ()) -> "LabeledPoset":
        elements = tuple(str(e) for e in elements)
        if len(set(elements)) != len(elements):
            raise InputError("duplicate occurrence ids")
        lab = {}
        for e in elements:
            if e not in labels:
                raise InputError(f"occurrence {e!r} has no label")
            raw = labels[e]
            lab[e] = tuple(raw) if isinstance(raw, (list, tuple)) else (raw,)
        arities = {len(v) for v in lab.values()}
        if len(arities) > 1:
            raise InputError(f"labels of mixed arity {sorted(arities)}")
        pairs = set()
        known = set(elements)
        for a, b in edges:
            a, b = str(a), str(b)
            if a not in known or b not in known:
                raise InputError(f"order edge ({a}, {b}) mentions an unknown occurrence")
            if a == b:
                raise InputError(f"order edge ({a}, {b}) is a self-loop")
            pairs.add((a, b))
        above = _closure(elements, pairs)
        return cls(elements, lab, frozenset(_reduce(elements, above)))

    @classmethod
    def chain(cls, labels: Sequence) -> "LabeledPoset":
        ids = [f"c{i}" for i in range(len(labels))]
        return cls.build(ids, dict(zip(ids, labels)), zip(ids, ids[1:]))

    @classmethod
    def antichain(cls, labels: Sequence) -> "LabeledPoset":
        ids = [f"a{i}" for i in range(len(labels))]
        return cls.build(ids, dict(zip(ids, labels)))

    def __len__(self):
        return len(self.elements)

    @property
    def arity(self) -> int | None:
        return len(next(iter(self.labels.values()))) if self.labels else None

    @property
    def above(self) -> dict[str, frozenset]:
        """Strict upper sets (the transitive closure)."""
        return _closure(self.elements, self.edges)

    def less(self, a: str, b: str) -> bool:
        return b in self.above[a]

    def predecessors(self) -> dict[str, frozenset]:
        below: dict[str, set] = {e: set() for e in self.elements}
        for a, ups in self.above.items():
            for b in ups:
                below[b].add(a)
        return {e: frozenset(s) for e, s in below.items()}

    def to_json(self) -> dict:
        return {
            "elements": list(self.elements),
            "labels": {e: list(self.labels[e]) for e in self.elements},
            "edges": [list(p) for p in sorted(self.edges)],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "LabeledPoset":
        try:
            return cls.build(data["elements"], data["labels"], data.get("edges", []))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad poset JSON: {exc}") from None


def _closure(elements, pairs) -> dict[str, frozenset]:
    succ: dict[str, set] = {e: set() for e in elements}
    for a, b in pairs:
        succ[a].add(b)
    # Kahn order doubles as the cycle check
    indeg = {e: 0 for e in elements}
    for a, b in pairs:
        indeg[b] += 1
    order = [e for e in elements if indeg[e] == 0]
    for e in order:
        for b in sorted(succ[e]):
            indeg[b] -= 1
            if indeg[b] == 0:
                order.append(b)
    if len(order) != len(elements):
        raise InputError("order edges contain a cycle")
    above: dict[str, frozenset] = {}
    for e in reversed(order):
        s = set(succ[e])
        for b in succ[e]:
            s |= above[b]
        above[e] = frozenset(s)
    return above


def _reduce(elements, above) -> set:
    out = set()
    for a in elements:
        for b in above[a]:
            if not any(b in above[c] for c in above[a] if c != b):
                out.add((a, b))
    return out


# -- positive relational algebra ---------------------------------------------------


def union(r: LabeledPoset, s: LabeledPoset) -> LabeledPoset:
    """Disjoint union, no order between the two sides.

    Ids are kept when the sides do not share any; otherwise they become
    ``1.<id>`` and ``2.<id>``.
    """
    if r.arity is not None and s.arity is not None and r.arity != s.arity:
        raise InputError(f"union of arity {r.arity} and arity {s.arity}")
    if set(r.elements) & set(s.elements):
        rn = {e: f"1.{e}" for e in r.elements}
        sn = {e: f"2.{e}" for e in s.elements}
    else:
        rn = {e: e for e in r.elements}
        sn = {e: e for e in s.elements}
    labels = {rn[e]: r.labels[e] for e in r.elements}
    labels.update({sn[e]: s.labels[e] for e in s.elements})
    edges = [(rn[a], rn[b]) for a, b in r.edges] + [(sn[a], sn[b]) for a, b in s.edges]
    return LabeledPoset.build([rn[e] for e in r.elements] + [sn[e] for e in s.elements], labels, edges)


def product(r: LabeledPoset, s: LabeledPoset) -> LabeledPoset:
    """All pairs, labels concatenated, ordered pointwise: (a,b) < (a',b') iff a <= a', b <= b', not both equal."""
    ra, sa = r.above, s.above
    ids = {(a, b): f"{a}*{b}" for a in r.elements for b in s.elements}
    labels = {ids[a, b]: r.labels[a] + s.labels[b] for a, b in ids}
    edges = []
    for (a, b), x in ids.items():
        for (a2, b2), y in ids.items():
            if (a, b) == (a2, b2):
                continue
            if (a == a2 or a2 in ra[a]) and (b == b2 or b2 in sa[b]):
                edges.append((x, y))
    return LabeledPoset.build(list(ids.values()), labels, edges)


def selection(r: LabeledPoset, predicate: Callable[[tuple], bool]) -> LabeledPoset:
    """Occurrences whose label satisfies ``predicate``, with the induced order.

    Order through removed occurrences is kept: if a < b < c and b goes, a < c stays.
    """
    keep = [e for e in r.elements if predicate(r.labels[e])]
    ks = set(keep)
    above = r.above
    edges = [(a, b) for a in keep for b in above[a] if b in ks]
    return LabeledPoset.build(keep, {e: r.labels[e] for e in keep}, edges)


def column_equals(col: int, value) -> Callable[[tuple], bool]:
    return lambda t: t[col] == value


def projection(r: LabeledPoset, cols: Sequence[int]) -> LabeledPoset:
    """Relabel every occurrence by the chosen columns; order and duplicates stay."""
    n = r.arity or 0
    for c in cols:
        if not isinstance(c, int) or not 0 <= c < n:
            raise InputError(f"column {c!r} out of range for arity {n}")
    labels = {e: tuple(r.labels[e][c] for c in cols) for e in r.elements}
    return LabeledPoset(r.elements, labels, r.edges)


# -- possible worlds -------------------------------------------------------------


def topological_orders(r: LabeledPoset, cap: int | None = DEFAULT_LIST_CAP):
    """Every linear extension as a tuple of occurrence ids."""
    if cap is not None and len(r) > cap:
        raise LimitExceeded(f"{len(r)} occurrences exceed the listing cap of {cap}")
    below = r.predecessors()
    order: list[str] = []
    placed: set[str] = set()

    def go():
        if len(order) == len(r.elements):
            yield tuple(order)
            return
        for e in r.elements:
            if e not in placed and below[e] <= placed:
                placed.add(e)
                order.append(e)
                yield from go()
                order.pop()
                placed.discard(e)

    yield from go()


def linear_extensions(r: LabeledPoset, cap: int | None = DEFAULT_LIST_CAP) -> list[tuple]:
    """Label sequences of all linear extensions, one per extension (repeats kept)."""
    return [tuple(r.labels[e] for e in order) for order in topological_orders(r, cap)]


def possible_worlds(r: LabeledPoset, cap: int | None = DEFAULT_LIST_CAP) -> set[tuple]:
    return set(linear_extensions(r, cap))


def count_linear_extensions(r: LabeledPoset, cap: int | None = DEFAULT_COUNT_CAP) -> int:
    """Number of linear extensions, by dynamic programming over down-sets.

    Exponential in the width of the order in the worst case; counting is
    #P-hard in general, so the cap guards the input size.
    """
    if cap is not None and len(r) > cap:
        raise LimitExceeded(f"{len(r)} occurrences exceed the counting cap of {cap}")
    idx = {e: i for i, e in enumerate(r.elements)}
    need = [0] * len(r)
    for e, preds in r.predecessors().items():
        for p in preds:
            need[idx[e]] |= 1 << idx[p]
    full = (1 << len(r)) - 1
    ways = {0: 1}
    # down-sets of size k only feed those of size k+1
    frontier = {0}
    for _ in range(len(r)):
        nxt: dict[int, int] = {}
        for mask in frontier:
            w = ways[mask]
            for i in range(len(r)):
                bit = 1 << i
                if not mask & bit and need[i] & mask == need[i]:
                    nxt[mask | bit] = nxt.get(mask | bit, 0) + w
        ways.update(nxt)
        frontier = set(nxt)
    return ways.get(full, 0)


def _as_label(x) -> tuple:
    return tuple(x) if isinstance(x, (list, tuple)) else (x,)


def is_possible_world(r: LabeledPoset, seq: Sequence) -> bool:
    """Whether ``seq`` (a list of labels) is the label sequence of some linear extension.

    Distinct labels fix the bijection, so that case is a linear check.
    Otherwise backtracking over which occurrence takes each position, with
    failed prefixes (as sets of used occurrences) memoised.
    """
    seq = [_as_label(x) for x in seq]
    if len(seq) != len(r):
        raise InputError(f"sequence of length {len(seq)} for {len(r)} occurrences")
    below = r.predecessors()
    by_label: dict[tuple, list[str]] = {}
    for e in r.elements:
        by_label.setdefault(r.labels[e], []).append(e)
    if sorted(map(repr, seq)) != sorted(repr(r.labels[e]) for e in r.elements):
        return False
    if all(len(v) == 1 for v in by_label.values()):
        placed: set[str] = set()
        for lab in seq:
            e = by_label[lab][0]
            if not below[e] <= placed:
                return False
            placed.add(e)
        return True
    idx = {e: i for i, e in enumerate(r.elements)}
    need = {e: sum(1 << idx[p] for p in below[e]) for e in r.elements}

    @lru_cache(maxsize=None)
    def ok(mask: int, pos: int) -> bool:
        if pos == len(seq):
            return True
        for e in by_label.get(seq[pos], ()):
            bit = 1 << idx[e]
            if not mask & bit and need[e] & mask == need[e]:
                if ok(mask | bit, pos + 1):
                    return True
        return False

    return ok(0, 0)


def is_possible_world_bruteforce(r: LabeledPoset, seq: Sequence) -> bool:
    """Try every bijection from positions to occurrences (test oracle; factorial time)."""
    seq = [_as_label(x) for x in seq]
    if len(seq) != len(r):
        raise InputError(f"sequence of length {len(seq)} for {len(r)} occurrences")
    above = r.above
    for perm in itertools.permutations(r.elements):
        if any(r.labels[e] != lab for e, lab in zip(perm, seq)):
            continue
        pos = {e: i for i, e in enumerate(perm)}
        if all(pos[a] < pos[b] for a in r.elements for b in above[a]):
            return True
    return False


def interleavings(xs: Sequence, ys: Sequence) -> set[tuple]:
    """All merges of two sequences preserving each one's order."""
    n, m = len(xs), len(ys)
    out = set()
    for slots in itertools.combinations(range(n + m), n):
        s = set(slots)
        it_x, it_y = iter(xs), iter(ys)
        out.add(tuple(next(it_x) if i in s else next(it_y) for i in range(n + m)))
    return out

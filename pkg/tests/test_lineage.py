import random

import pytest

from uncertain.circuits import NOT, evaluate, is_monotone
from uncertain.errors import InputError
from uncertain.instances import TIDInstance, fact, iter_valuations, prepare_pcc, world_of
from uncertain.lineage import build_lineage
from uncertain.query import compile, parse_query, run
from uncertain.treedec import build_graph, circuit_graph, decompose, root_and_binarize, validate

from generators import (
    HARD_QUERY,
    random_bool_query_text,
    random_pc,
    random_pcc,
    random_tid,
    random_ucq_text,
    trip_table,
)


def lineage(inst, text, mode="auto"):
    t = root_and_binarize(decompose(build_graph(inst)))
    a = compile(parse_query(text))
    return a, t, build_lineage(a, inst, t, mode=mode)


def assert_lineage_matches_run(inst, a, t, lr):
    events = list(prepare_pcc(inst).circuit.events)
    for v in iter_valuations(events):
        assert evaluate(lr.circuit, v) == run(a, t, world_of(inst, v)), v


class TestExamples:
    def test_trip_lineage(self):
        inst = trip_table()
        a, t, lr = lineage(inst, "Trip(CDG, MEL)")
        for v in iter_valuations(["pods", "stoc"]):
            assert evaluate(lr.circuit, v) == v["pods"]

    def test_single_fact_gives_its_event(self):
        tid = TIDInstance.build([(fact("R", "a"), 0.5)])
        _, _, lr = lineage(tid, "exists x. R(x)")
        (e,) = lr.circuit.events
        for b in (True, False):
            assert evaluate(lr.circuit, {e: b}) is b

    def test_unsatisfiable_query_is_false(self):
        tid = TIDInstance.build([(fact("R", "a"), 0.5)])
        for text in ("exists x. T(x)", "false"):
            _, _, lr = lineage(tid, text)
            assert not any(evaluate(lr.circuit, v) for v in iter_valuations(lr.circuit.events or ["x"]))

    def test_hard_query(self):
        tid = TIDInstance.build([(fact("R", "a"), 0.5), (fact("S", "a", "b"), 0.5), (fact("T", "b"), 0.5)])
        a, t, lr = lineage(tid, HARD_QUERY)
        assert_lineage_matches_run(tid, a, t, lr)
        assert sum(evaluate(lr.circuit, v) for v in iter_valuations(prepare_pcc(tid).circuit.events)) == 1


class TestSweep:
    @pytest.mark.parametrize("mode", ["monotone", "exact"])
    def test_ucq_lineage_matches_run(self, mode):
        rng = random.Random(20 if mode == "monotone" else 21)
        for _ in range(60):
            inst = rng.choice([random_tid, random_pc, random_pcc])(rng)
            a, t, lr = lineage(inst, random_ucq_text(rng), mode)
            assert_lineage_matches_run(inst, a, t, lr)

    def test_negation_lineage_matches_run(self):
        rng = random.Random(22)
        for _ in range(60):
            inst = rng.choice([random_tid, random_pc, random_pcc])(rng)
            a, t, lr = lineage(inst, random_bool_query_text(rng))
            assert lr.stats["mode"] == "exact"
            assert_lineage_matches_run(inst, a, t, lr)


class TestStructure:
    def test_ucq_lineage_on_tids_is_monotone(self):
        rng = random.Random(23)
        for _ in range(80):
            _, _, lr = lineage(random_tid(rng), random_ucq_text(rng))
            assert lr.stats["mode"] == "monotone" and is_monotone(lr.circuit)

    def test_negation_is_refused_by_the_monotone_construction(self):
        with pytest.raises(InputError):
            lineage(trip_table(), "!(Trip(CDG, MEL))", mode="monotone")

    def test_monotone_construction_creates_no_not_gates(self):
        rng = random.Random(24)
        for _ in range(40):
            inst = random_pcc(rng)
            _, _, lr = lineage(inst, random_ucq_text(rng), "monotone")
            base = len(prepare_pcc(inst).circuit.gates)
            assert all(g.kind != NOT for g in lr.circuit.gates[base:])

    def test_circuit_decomposition_is_valid(self):
        rng = random.Random(25)
        for _ in range(60):
            inst = rng.choice([random_tid, random_pc, random_pcc])(rng)
            text = rng.choice([random_ucq_text, random_bool_query_text])(rng)
            _, _, lr = lineage(inst, text)
            assert validate(lr.circuit_decomposition, circuit_graph(lr.circuit))
            assert lr.width == lr.stats["circuit_width"]

    def test_size_within_reported_bound(self):
        rng = random.Random(26)
        for _ in range(60):
            inst = random_tid(rng)
            text = rng.choice([random_ucq_text, random_bool_query_text])(rng)
            _, _, lr = lineage(inst, text)
            assert lr.stats["created_gates"] <= lr.stats["size_bound"]

    def test_gate_origin_covers_every_gate(self):
        _, t, lr = lineage(trip_table(), "exists x. Trip(CDG, x) & Trip(x, PDX)")
        assert set(lr.gate_origin) == set(range(len(lr.circuit.gates)))
        assert set(lr.gate_origin.values()) <= set(t.bags)

    def test_width_does_not_grow_with_path_length(self):
        widths = []
        for n in (10, 40, 160):
            tid = TIDInstance.build([(fact("R", f"c{i}", f"c{i + 1}"), 0.5) for i in range(n)])
            _, _, lr = lineage(tid, "exists x y z. R(x, y) & R(y, z)")
            widths.append(lr.width)
        assert len(set(widths)) == 1

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            lineage(trip_table(), "Trip(CDG, MEL)", mode="fast")

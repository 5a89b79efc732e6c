"""Boolean circuits over named events.

Gates are stored in topological order: every gate only references gates with
a smaller index, so a single forward sweep evaluates the whole circuit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import CircuitError

INPUT = "input"
CONST = "const"
AND = "and"
OR = "or"
NOT = "not"

KINDS = (INPUT, CONST, AND, OR, NOT)


@dataclass(frozen=True)
class Gate:
    kind: str
    args: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CircuitError(f"unknown gate kind {self.kind!r}")
        if self.kind == INPUT and (len(self.args) != 1 or not isinstance(self.args[0], str)):
            raise CircuitError("input gate takes exactly one event name")
        if self.kind == CONST and (len(self.args) != 1 or not isinstance(self.args[0], bool)):
            raise CircuitError("const gate takes exactly one boolean")
        if self.kind == NOT and len(self.args) != 1:
            raise CircuitError("not gate takes exactly one input")


@dataclass(frozen=True)
class Circuit:
    gates: tuple[Gate, ...]
    output: int
    events: tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.gates)
        seen_inputs = set()
        for i, g in enumerate(self.gates):
            if g.kind in (AND, OR, NOT):
                for a in g.args:
                    if not isinstance(a, int) or not 0 <= a < i:
                        raise CircuitError(
                            f"gate {i} references {a!r}; gates must reference earlier gates"
                        )
            elif g.kind == INPUT:
                seen_inputs.add(g.args[0])
        if n and not 0 <= self.output < n:
            raise CircuitError(f"output {self.output} is not a gate")
        if not n:
            raise CircuitError("circuit has no gates")
        if not self.events:
            object.__setattr__(self, "events", tuple(sorted(seen_inputs)))
        else:
            missing = seen_inputs - set(self.events)
            if missing:
                raise CircuitError(f"input gates use undeclared events {sorted(missing)}")

    def __len__(self):
        return len(self.gates)

    def input_gates(self) -> dict[str, int]:
        return {g.args[0]: i for i, g in enumerate(self.gates) if g.kind == INPUT}

    def with_output(self, output: int) -> "Circuit":
        return Circuit(self.gates, output, self.events)

    def cone(self, root: int | None = None) -> set[int]:
        """Indices of all gates the given gate (default: output) depends on."""
        root = self.output if root is None else root
        seen = {root}
        stack = [root]
        while stack:
            g = self.gates[stack.pop()]
            if g.kind in (AND, OR, NOT):
                for a in g.args:
                    if a not in seen:
                        seen.add(a)
                        stack.append(a)
        return seen

    def to_json(self) -> dict:
        return {
            "gates": [
                {"id": i, "kind": g.kind, "args": list(g.args)} for i, g in enumerate(self.gates)
            ],
            "output": self.output,
            "events": list(self.events),
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "Circuit":
        try:
            raw = sorted(data["gates"], key=lambda d: d["id"])
            ids = [d["id"] for d in raw]
            if ids != list(range(len(raw))):
                raise CircuitError("gate ids must be 0..n-1")
            gates = tuple(Gate(d["kind"], tuple(d.get("args", ()))) for d in raw)
            return cls(gates, int(data["output"]), tuple(data.get("events", ())))
        except (KeyError, TypeError) as exc:
            raise CircuitError(f"malformed circuit JSON: {exc}") from exc


def evaluate_all(c: Circuit, valuation: Mapping[str, bool]) -> list[bool]:
    values: list[bool] = [False] * len(c.gates)
    for i, g in enumerate(c.gates):
        k = g.kind
        if k == INPUT:
            try:
                values[i] = bool(valuation[g.args[0]])
            except KeyError:
                raise CircuitError(f"valuation has no binding for event {g.args[0]!r}") from None
        elif k == AND:
            values[i] = all(values[a] for a in g.args)
        elif k == OR:
            values[i] = any(values[a] for a in g.args)
        elif k == NOT:
            values[i] = not values[g.args[0]]
        else:
            values[i] = g.args[0]
    return values


def evaluate(c: Circuit, valuation: Mapping[str, bool], gate: int | None = None) -> bool:
    """Boolean value of ``gate`` (default: the output) under ``valuation``."""
    missing = [e for e in c.events if e not in valuation]
    if missing:
        raise CircuitError(f"valuation has no binding for events {missing}")
    return evaluate_all(c, valuation)[c.output if gate is None else gate]


def is_monotone(c: Circuit) -> bool:
    for i in c.cone():
        g = c.gates[i]
        if g.kind == NOT or (g.kind == CONST and g.args[0] is False):
            return False
    return True


def export_dot(c: Circuit, name: str = "circuit") -> str:
    lines = [f"digraph {name} {{", "  rankdir=BT;"]
    for i, g in enumerate(c.gates):
        if g.kind == INPUT:
            label = g.args[0]
        elif g.kind == CONST:
            label = "true" if g.args[0] else "false"
        else:
            label = g.kind
        shape = "doublecircle" if i == c.output else ("box" if g.kind == INPUT else "ellipse")
        lines.append(f'  g{i} [label="{_dot_escape(label)}", shape={shape}];')
    for i, g in enumerate(c.gates):
        if g.kind in (AND, OR, NOT):
            for a in g.args:
                lines.append(f"  g{a} -> g{i};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def dumps(c: Circuit) -> str:
    return json.dumps(c.to_json(), sort_keys=True)


@dataclass
class CircuitBuilder:
    """Incrementally builds a circuit, sharing structurally identical gates."""

    gates: list[Gate] = field(default_factory=list)
    _index: dict[Gate, int] = field(default_factory=dict)
    events: list[str] = field(default_factory=list)
    _event_set: set = field(default_factory=set)

    @classmethod
    def extending(cls, c: Circuit) -> "CircuitBuilder":
        b = cls()
        for g in c.gates:
            b._add(g, share=False)
        b.events = list(c.events)
        return b

    def _add(self, g: Gate, share: bool = True) -> int:
        if share and g in self._index:
            return self._index[g]
        self.gates.append(g)
        idx = len(self.gates) - 1
        self._index.setdefault(g, idx)
        return idx

    def input(self, event: str) -> int:
        if len(self._event_set) != len(self.events):
            self._event_set = set(self.events)  # events was assigned directly
        if event not in self._event_set:
            self._event_set.add(event)
            self.events.append(event)
        return self._add(Gate(INPUT, (event,)))

    def const(self, value: bool) -> int:
        return self._add(Gate(CONST, (bool(value),)))

    def and_(self, args: Iterable[int]) -> int:
        return self._add(Gate(AND, tuple(args)))

    def or_(self, args: Iterable[int]) -> int:
        return self._add(Gate(OR, tuple(args)))

    def not_(self, arg: int) -> int:
        return self._add(Gate(NOT, (arg,)))

    def __len__(self):
        return len(self.gates)

    def build(self, output: int) -> Circuit:
        return Circuit(tuple(self.gates), output, tuple(self.events))


def binarize(c: Circuit) -> tuple[Circuit, dict[int, int]]:
    """Rewrite and/or gates with more than two inputs into chains of binary gates.

    Returns the new circuit and the map from old gate ids to new ones.
    """
    b = CircuitBuilder()
    b.events = list(c.events)
    remap: dict[int, int] = {}
    for i, g in enumerate(c.gates):
        if g.kind in (AND, OR) and len(g.args) > 2:
            args = [remap[a] for a in g.args]
            acc = args[0]
            for a in args[1:]:
                acc = b._add(Gate(g.kind, (acc, a)), share=False)
            remap[i] = acc
        elif g.kind in (AND, OR, NOT):
            remap[i] = b._add(Gate(g.kind, tuple(remap[a] for a in g.args)), share=False)
        else:
            remap[i] = b._add(g, share=False)
    return b.build(remap[c.output]), remap

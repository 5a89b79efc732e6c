"""Command-line entry point: ``uncertain <command> ...``.

Every command reads JSON files and writes JSON (or a bare number for
``prob``) to stdout.  Exit status: 0 on success, 1 when a size guard or a
pipeline stage fails, 2 on malformed input.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from fractions import Fraction

from . import porder, prxml
from .circuits import export_dot
from .errors import InputError, LimitExceeded, UncertainError
from .instances import dump_instance, load_instance, query_probability_bruteforce
from .lineage import build_lineage
from .prob import prob_query
from .query import compile, parse_query
from .treedec import build_graph, decompose, root_and_binarize, validate

ORACLE_TOLERANCE = 1e-9


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _read_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}", 2) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", 2) from None


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (set, frozenset)):
        return sorted(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _load_uncertain(path: str):
    """An instance file, or a PrXML document (recognised by its 'root' key) encoded on the fly."""
    data = _read_json(path)
    if isinstance(data, dict) and "root" in data:
        return prxml.to_pcc(prxml.load_prxml(data)).pcc
    return load_instance(data)


def _num(p):
    return float(p)


# -- commands -----------------------------------------------------------------------


def cmd_prob(args) -> int:
    inst = _load_uncertain(args.instance)
    q = parse_query(args.query)
    try:
        res = prob_query(inst, q, exact=args.exact_rational, mode=args.mode)
    except UncertainError as exc:
        stage = getattr(exc, "stage", None)
        if stage and not isinstance(exc, InputError):
            raise CliError(f"stage {stage}: {exc}", 1) from None
        raise
    report = {
        "probability": _num(res.probability),
        "instance_width": res.diagnostics["instance_width"],
        "circuit_width": res.diagnostics["circuit_width"],
        "automaton_states": res.diagnostics["total_states"],
        "max_states_per_node": res.diagnostics["max_states"],
        "circuit_gates": res.diagnostics["circuit_gates"],
        "lineage_mode": res.diagnostics["lineage_mode"],
    }
    if args.exact_rational:
        report["probability_exact"] = str(res.probability)
    status = 0
    if args.oracle:
        t0 = time.perf_counter()
        p_oracle = query_probability_bruteforce(inst, q)
        res.timings["oracle"] = round(time.perf_counter() - t0, 6)
        report["oracle_probability"] = _num(p_oracle)
        if isinstance(p_oracle, Fraction) and isinstance(res.probability, Fraction):
            agree = p_oracle == res.probability
        else:
            agree = abs(float(p_oracle) - float(res.probability)) <= ORACLE_TOLERANCE
        report["agreement"] = agree
        if not agree:
            print(
                f"error: oracle disagreement: pipeline {float(res.probability)!r} vs brute force {float(p_oracle)!r}",
                file=sys.stderr,
            )
            status = 1
    report["timings_ms"] = {k: round(v * 1000, 3) for k, v in res.timings.items()}
    if args.dot:
        with open(args.dot, "w", encoding="utf-8") as fh:
            fh.write(export_dot(res.lineage.circuit))
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if args.json:
        _emit(report)
    else:
        print(report.get("probability_exact", repr(report["probability"])))
    return status


def cmd_decompose(args) -> int:
    inst = _load_uncertain(args.instance)
    g = build_graph(inst)
    t = decompose(g, exact=args.exact)
    if args.binary:
        t = root_and_binarize(t)
    rep = validate(t, g)
    out = {"width": t.width, "valid": rep.ok, "decomposition": t.to_json()}
    if not rep.ok:
        out["violation"] = {"condition": rep.condition, "witness": rep.witness}
    _emit(out)
    return 0 if rep.ok else 1


def cmd_lineage(args) -> int:
    inst = _load_uncertain(args.instance)
    q = parse_query(args.query)
    g = build_graph(inst)
    t = root_and_binarize(decompose(g))
    lr = build_lineage(compile(q), inst, t, mode=args.mode)
    if args.format == "dot":
        sys.stdout.write(export_dot(lr.circuit))
    else:
        _emit(
            {
                "circuit": lr.circuit.to_json(),
                "circuit_width": lr.width,
                "mode": lr.stats["mode"],
                "circuit_decomposition": lr.circuit_decomposition.to_json(),
            }
        )
    return 0


def cmd_prxml(args) -> int:
    d = prxml.load_prxml(_read_json(args.document))
    if args.action == "worlds":
        worlds = prxml.enumerate_documents(d, exact=args.exact_rational)
        _emit(
            [
                {
                    "nodes": [d.describe(i) for i in sorted(w.kept)],
                    "probability": str(p) if args.exact_rational else float(p),
                }
                for w, p in worlds
            ]
        )
    elif args.action == "scopes":
        _emit(prxml.compute_scopes(d).to_json(d))
    else:
        enc = prxml.to_pcc(d, desc=not args.no_desc)
        out = dump_instance(enc.pcc)
        out["nodes"] = {enc.element[i]: d.describe(i) for i in sorted(enc.element)}
        _emit(out)
    return 0


def _poset(path: str) -> porder.LabeledPoset:
    return porder.LabeledPoset.from_json(_read_json(path))


def cmd_poset(args) -> int:
    op = args.action
    if op in ("union", "product"):
        r, s = _poset(args.left), _poset(args.right)
        _emit((porder.union if op == "union" else porder.product)(r, s).to_json())
    elif op == "select":
        r = _poset(args.poset)
        try:
            value = json.loads(args.value) if args.json_value else args.value
        except json.JSONDecodeError as exc:
            raise InputError(f"value is not JSON: {exc.msg}", exc.pos) from None
        n = r.arity or 0
        if not 0 <= args.col < n:
            raise InputError(f"column {args.col} out of range for arity {n}")
        _emit(porder.selection(r, porder.column_equals(args.col, value)).to_json())
    elif op == "project":
        r = _poset(args.poset)
        try:
            cols = [int(c) for c in args.cols.split(",") if c.strip()]
        except ValueError:
            raise InputError(f"bad column list {args.cols!r}") from None
        _emit(porder.projection(r, cols).to_json())
    elif op == "extensions":
        r = _poset(args.poset)
        _emit([[list(lab) for lab in seq] for seq in porder.linear_extensions(r, cap=args.cap)])
    elif op == "count":
        r = _poset(args.poset)
        _emit({"count": porder.count_linear_extensions(r, cap=args.cap)})
    else:
        r = _poset(args.poset)
        try:
            seq = json.loads(args.sequence)
        except json.JSONDecodeError as exc:
            raise InputError(f"sequence is not JSON: {exc.msg}", exc.pos) from None
        if not isinstance(seq, list):
            raise InputError("sequence must be a JSON list of labels")
        _emit({"possible_world": porder.is_possible_world(r, seq)})
    return 0


# -- argument parsing ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uncertain", description="Query evaluation on uncertain data of bounded treewidth.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prob", help="probability of a query on an uncertain instance or PrXML document")
    sp.add_argument("instance")
    sp.add_argument("query")
    sp.add_argument("--oracle", action="store_true", help="also compute by world enumeration and compare")
    sp.add_argument("--exact-rational", action="store_true", help="exact rational arithmetic")
    sp.add_argument("--mode", choices=("auto", "monotone", "exact"), default="auto", help="lineage construction")
    sp.add_argument("--dot", metavar="FILE", help="write the lineage circuit as Graphviz DOT")
    sp.add_argument("--report", metavar="FILE", help="write the run report as JSON")
    sp.add_argument("--json", action="store_true", help="print the run report instead of the bare probability")
    sp.set_defaults(func=cmd_prob)

    sp = sub.add_parser("decompose", help="tree decomposition of the instance/annotation graph")
    sp.add_argument("instance")
    sp.add_argument("--exact", action="store_true", help="exact treewidth for small graphs")
    sp.add_argument("--binary", action="store_true", help="root and binarize the result")
    sp.set_defaults(func=cmd_decompose)

    sp = sub.add_parser("lineage", help="lineage circuit of a query")
    sp.add_argument("instance")
    sp.add_argument("query")
    sp.add_argument("--format", choices=("json", "dot"), default="json")
    sp.add_argument("--mode", choices=("auto", "monotone", "exact"), default="auto")
    sp.set_defaults(func=cmd_lineage)

    sp = sub.add_parser("prxml", help="probabilistic XML documents")
    sp.add_argument("action", choices=("worlds", "scopes", "encode"))
    sp.add_argument("document")
    sp.add_argument("--exact-rational", action="store_true")
    sp.add_argument("--no-desc", action="store_true", help="encode without Desc facts")
    sp.set_defaults(func=cmd_prxml)

    sp = sub.add_parser("poset", help="labelled partial orders")
    psub = sp.add_subparsers(dest="action", required=True)
    for name in ("union", "product"):
        x = psub.add_parser(name)
        x.add_argument("left")
        x.add_argument("right")
    x = psub.add_parser("select", help="keep occurrences whose column equals a value")
    x.add_argument("poset")
    x.add_argument("--col", type=int, required=True)
    x.add_argument("--value", required=True)
    x.add_argument("--json-value", action="store_true", help="parse the value as JSON")
    x = psub.add_parser("project")
    x.add_argument("poset")
    x.add_argument("--cols", required=True, help="comma-separated column indices")
    for name, cap in (("extensions", porder.DEFAULT_LIST_CAP), ("count", porder.DEFAULT_COUNT_CAP)):
        x = psub.add_parser(name)
        x.add_argument("poset")
        x.add_argument("--cap", type=int, default=cap)
    x = psub.add_parser("member", help="is a label sequence a possible world")
    x.add_argument("poset")
    x.add_argument("sequence", help='JSON list of labels, e.g. [["A"],["B"]]')
    sp.set_defaults(func=cmd_poset)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LimitExceeded as exc:
        stage = getattr(exc, "stage", None)
        print(f"error: {'stage ' + stage + ': ' if stage else ''}{exc}", file=sys.stderr)
        return 1
    except UncertainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

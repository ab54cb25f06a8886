"""Command-line interface: ``absproof {verify,abstract,prove,check,bounds}``.

Exit codes: 0 UNSAT / accepted, 1 SAT, 2 resource limit, 3 proof rejected,
64 usage or invalid input, 74 file I/O failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from dataclasses import dataclass
from typing import Optional

from . import checker
from .abstraction import AbstractionConfig, AbstractionError, abstract, compute_bounds, replay
from .model import (
    InputBox,
    ModelError,
    Network,
    OutputPolytope,
    Query,
    canonical_json,
    eval_concrete,
    lift_trivial,
    network_from_dict,
    network_to_dict,
    output_in_polytope,
    property_from_dict,
)
from .numerics import format_interval, format_rational, to_rational
from .pipeline import UNSAT, run_pipeline
from .proof import ProofError, compose, prove_over_approximation, serialize
from .verifier import Mode, QueryIsSat, ResourceLimit, verify_with_proofs

EXIT_UNSAT, EXIT_SAT, EXIT_LIMIT, EXIT_REJECT = 0, 1, 2, 3
EXIT_USAGE, EXIT_IO = 64, 74


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class NoHit:
    pass


@dataclass(frozen=True)
class Hit:
    x: tuple


def oracle_grid(net: Network, p: InputBox, q: OutputPolytope, resolution: int):
    """Evaluate ``net`` on a regular grid over ``p``; return the first point landing in ``q``.

    Points are visited in lexicographic order of their coordinates.
    """
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    axes = []
    for iv in p.bounds:
        step = iv.width / (resolution - 1)
        axes.append(sorted({iv.lo + step * t for t in range(resolution)}))
    for x in itertools.product(*axes):
        if output_in_polytope(eval_concrete(net, x), q):
            return Hit(tuple(x))
    return NoHit()


# file helpers --------------------------------------------------------------

def _read_json(path: str):
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        return json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})") from exc


def _write(path: str, data: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(data)


def _load_network(path: str):
    try:
        return network_from_dict(_read_json(path))
    except ModelError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _load_concrete(path: str) -> Network:
    net = _load_network(path)
    if not isinstance(net, Network):
        raise UsageError(f"{path}: expected a concrete network (no bias_interval)")
    return net


def _load_property(path: str):
    try:
        return property_from_dict(_read_json(path))
    except ModelError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _config(args) -> AbstractionConfig:
    try:
        return AbstractionConfig(to_rational(args.epsilon), args.min_bucket)
    except (AbstractionError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _vector(values) -> list:
    return [format_rational(v) for v in values]


# subcommands -----------------------------------------------------------------

def cmd_verify(args) -> int:
    f = _load_concrete(args.network)
    p, q = _load_property(args.property)
    try:
        result = run_pipeline(
            f, p, q, _config(args),
            mode=Mode(args.mode),
            max_refinements=args.max_refinements,
            max_nodes=args.max_nodes,
            use_abstraction=not args.no_abstraction,
        )
    except ModelError as exc:
        raise UsageError(str(exc)) from exc
    except ResourceLimit as exc:
        print(f"UNKNOWN resource limit: {exc}")
        return EXIT_LIMIT
    if result.status == UNSAT:
        if args.emit_proof:
            _write(args.emit_proof, serialize(result.proof))
        print(f"UNSAT iterations={result.iterations} refinements={result.refinements}")
        return EXIT_UNSAT
    cex = result.counterexample
    if args.emit_counterexample:
        _write(args.emit_counterexample, canonical_json({"input": _vector(cex.x), "output": _vector(cex.output)}))
    print(f"SAT input={_vector(cex.x)} output={_vector(cex.output)}")
    return EXIT_SAT


def cmd_abstract(args) -> int:
    f = _load_concrete(args.network)
    p, _ = _load_property(args.property)
    net = abstract(f, p, _config(args))
    _write(args.output, canonical_json(network_to_dict(net)))
    sidecar = args.provenance or args.output + ".provenance.json"
    steps = [{"layer": rec.layer_index, "origin_indices": list(rec.origin_indices)} for rec in net.provenance]
    _write(sidecar, canonical_json({"steps": steps}))
    print(f"merged {sum(len(s['origin_indices']) for s in steps)} neurons in {len(steps)} buckets; widths {list(net.widths)}")
    return 0


def cmd_prove(args) -> int:
    f = _load_concrete(args.network)
    p, q = _load_property(args.property)
    given = _load_network(args.abstract)
    data = _read_json(args.provenance)
    try:
        steps = [(int(s["layer"]), tuple(int(i) for i in s["origin_indices"])) for s in data["steps"]]
        rebuilt = replay(f, p, steps) if steps else lift_trivial(f)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{args.provenance}: {exc}") from exc
    if rebuilt.layers != getattr(given, "layers", None):
        raise UsageError("provenance does not rebuild the given abstract network from the origin")
    mode = Mode(args.mode)
    try:
        tree = verify_with_proofs(rebuilt, p, q, mode, args.max_nodes)
    except QueryIsSat as exc:
        print(f"SAT {exc}")
        return EXIT_SAT
    except ResourceLimit as exc:
        print(f"UNKNOWN resource limit: {exc}")
        return EXIT_LIMIT
    try:
        bundle = compose(prove_over_approximation(rebuilt, f, p), tree, Query(f, p, q))
    except ProofError as exc:
        raise UsageError(str(exc)) from exc
    _write(args.output, serialize(bundle))
    print(f"UNSAT proof written to {args.output}")
    return EXIT_UNSAT


def cmd_check(args) -> int:
    with open(args.proof, "rb") as fh:
        raw = fh.read()
    verdict = checker.check_bundle(raw)
    print(verdict.record())
    return 0 if verdict.accepted else EXIT_REJECT


def cmd_bounds(args) -> int:
    net = _load_network(args.network)
    p, _ = _load_property(args.property)
    for lb in compute_bounds(lift_trivial(net) if isinstance(net, Network) else net, p)[1:]:
        ivs = ", ".join("[" + ", ".join(format_interval(iv)) + "]" for iv in lb.post_activation)
        print(f"I{lb.layer_index}: {ivs}")
    return 0


# entry point -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="absproof", description="Abstraction-based neural network verification with checkable proofs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def abstraction_flags(cmd):
        cmd.add_argument("--epsilon", default="0", help="bound similarity tolerance for merging (decimal or p/q)")
        cmd.add_argument("--min-bucket", type=int, default=2)

    v = sub.add_parser("verify", help="decide a query, emitting a proof or counterexample")
    v.add_argument("network")
    v.add_argument("property")
    v.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.SKIP_CONNECTION.value)
    abstraction_flags(v)
    v.add_argument("--max-refinements", type=int)
    v.add_argument("--max-nodes", type=int)
    v.add_argument("--emit-proof")
    v.add_argument("--emit-counterexample")
    v.add_argument("--no-abstraction", action="store_true")
    v.add_argument("--seed", type=int, default=0, help="reserved; the default policies are deterministic")
    v.set_defaults(func=cmd_verify)

    a = sub.add_parser("abstract", help="write the merged network and its provenance")
    a.add_argument("network")
    a.add_argument("property")
    abstraction_flags(a)
    a.add_argument("-o", "--output", required=True)
    a.add_argument("--provenance", help="provenance sidecar path (default: OUTPUT.provenance.json)")
    a.set_defaults(func=cmd_abstract)

    pr = sub.add_parser("prove", help="prove an abstract query UNSAT and bundle it with its abstraction proof")
    pr.add_argument("network")
    pr.add_argument("property")
    pr.add_argument("abstract")
    pr.add_argument("--provenance", required=True)
    pr.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.SKIP_CONNECTION.value)
    pr.add_argument("--max-nodes", type=int)
    pr.add_argument("-o", "--output", required=True)
    pr.set_defaults(func=cmd_prove)

    c = sub.add_parser("check", help="validate a proof bundle")
    c.add_argument("proof")
    c.set_defaults(func=cmd_check)

    b = sub.add_parser("bounds", help="print interval bounds for every layer")
    b.add_argument("network")
    b.add_argument("property")
    b.set_defaults(func=cmd_bounds)
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ModelError, AbstractionError) as exc:
        print(f"absproof: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"absproof: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

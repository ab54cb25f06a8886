"""Over-approximation proofs, their composition with UNSAT trees, and the proof file.

An :class:`AbstractionProof` is an ordered rule sequence: ``triv-abs`` (the
trivial lift contains the concrete network), then for every merge a
``bound-annotation`` claiming sound bounds ``I_k`` for the layer being merged,
followed by the ``l_k-abs`` merge itself.  Chaining all steps gives
``unsat(abstract) => unsat(original)``; :func:`compose` pairs that with an
UNSAT tree for the abstract query.

Proof file layout (canonical JSON, sorted keys, rationals as decimal strings)::

    {"version": 1,
     "query": {"input_box": [[lo, hi], ...], "output_halfspaces": [...]},
     "origin_network": {...},
     "abstraction": {"origin_digest": ..., "final_digest": ..., "input_box": [...],
                     "abstract_network": {...}, "steps": [...]},
     "verification": {"mode": "skip"|"ineq", "root_encoding_digest": ..., "tree": {...}}}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

from .abstraction import (
    AbstractionError,
    MergeBucket,
    MergeRecord,
    compute_bounds,
    merge_bucket,
)
from .lp import FarkasCertificate
from .model import (
    AbstractNetwork,
    InputBox,
    ModelError,
    Network,
    Query,
    box_to_list,
    canonical_json,
    lift_trivial,
    network_digest,
    network_from_dict,
    network_to_dict,
    polytope_to_list,
    property_from_dict,
)
from .numerics import format_interval, format_rational, parse_interval, to_rational
from .verifier import Leaf, Mode, Split, VerificationProofTree, encode

PROOF_VERSION = 1

TRIV_ABS = "triv-abs"
BOUND_ANNOTATION = "bound-annotation"
MERGE = "l_k-abs"

__all__ = [
    "MergeRecord",
    "TrivLift",
    "BoundAnnotation",
    "Merge",
    "AbstractionProof",
    "AbstractProof",
    "ProofError",
    "ProofFormatError",
    "ProofLinkError",
    "prove_over_approximation",
    "compose",
    "serialize",
    "deserialize",
]


class ProofError(ValueError):
    pass


class ProofLinkError(ProofError):
    """The two halves of a bundle talk about different networks or queries."""


class ProofFormatError(ProofError):
    pass


@dataclass(frozen=True)
class TrivLift:
    pass


@dataclass(frozen=True)
class BoundAnnotation:
    layer_index: int
    bounds: tuple


@dataclass(frozen=True)
class Merge:
    record: MergeRecord


@dataclass(frozen=True)
class AbstractionProof:
    origin_digest: str
    steps: tuple
    final_digest: str
    input_box: InputBox
    abstract_network: AbstractNetwork


@dataclass(frozen=True)
class AbstractProof:
    abstraction: AbstractionProof
    verification: VerificationProofTree
    query: Query

    def to_dict(self) -> dict:
        return proof_to_dict(self)


def prove_over_approximation(abstract_net: AbstractNetwork, f: Network, p: InputBox) -> AbstractionProof:
    """Turn the provenance of ``abstract_net`` into a checkable rule sequence.

    The provenance is replayed from ``f`` so that every bound annotation is
    the exact ``I_k`` the merge consumed; a provenance that does not replay to
    ``abstract_net`` is rejected.
    """
    current = lift_trivial(f)
    steps = [TrivLift()]
    if not abstract_net.provenance and abstract_net.layers != current.layers:
        raise ProofError("abstract network has no provenance and is not the trivial lift of the origin")
    for n, rec in enumerate(abstract_net.provenance):
        bounds = compute_bounds(current, p)[rec.layer_index]
        try:
            current = merge_bucket(current, rec.bucket, bounds)
        except AbstractionError as exc:
            raise ProofError(f"provenance step {n} does not apply to the origin network: {exc}") from exc
        fresh = current.provenance[-1]
        if (fresh.bounds_used, fresh.resulting_bias_interval) != (rec.bounds_used, rec.resulting_bias_interval):
            raise ProofError(f"provenance step {n} was recorded under different bounds")
        steps.append(BoundAnnotation(rec.layer_index, bounds.post_activation))
        steps.append(Merge(fresh))
    if current.layers != abstract_net.layers:
        raise ProofError("replaying the provenance does not reproduce the abstract network")
    return AbstractionProof(network_digest(f), tuple(steps), network_digest(abstract_net), p, abstract_net)


def compose(abstraction: AbstractionProof, verification: VerificationProofTree, q: Query) -> AbstractProof:
    if not isinstance(q.network, Network):
        raise ProofError("the bundled query must be over the original (concrete) network")
    if abstraction.origin_digest != network_digest(q.network):
        raise ProofLinkError("abstraction proof starts from a different network than the query")
    if abstraction.input_box != q.input:
        raise ProofLinkError("abstraction proof was built for a different input box")
    if abstraction.final_digest != network_digest(abstraction.abstract_network):
        raise ProofLinkError("abstraction proof's final digest does not match its abstract network")
    root = encode(Query(abstraction.abstract_network, q.input, q.output), verification.mode)
    if root.digest != verification.root_encoding_digest:
        raise ProofLinkError("verification tree refutes a different encoding than <abstract network, P, Q>")
    return AbstractProof(abstraction, verification, q)


# serialization -------------------------------------------------------------

def _step_to_dict(step) -> dict:
    if isinstance(step, TrivLift):
        return {"rule": TRIV_ABS}
    if isinstance(step, BoundAnnotation):
        return {"rule": BOUND_ANNOTATION, "layer": step.layer_index, "bounds": [format_interval(b) for b in step.bounds]}
    rec = step.record
    return {
        "rule": MERGE,
        "layer": rec.layer_index,
        "bucket": list(rec.bucket.indices),
        "bounds_used": [format_interval(b) for b in rec.bounds_used],
        "bias_interval": [format_interval(b) for b in rec.resulting_bias_interval],
    }


def _node_to_dict(node) -> dict:
    if isinstance(node, Leaf):
        return {"kind": "leaf", "multipliers": [format_rational(v) for v in node.certificate.multipliers]}
    return {
        "kind": "split",
        "relu": list(node.relu),
        "active": _node_to_dict(node.active),
        "inactive": _node_to_dict(node.inactive),
    }


def tree_to_dict(tree: VerificationProofTree) -> dict:
    return {"mode": tree.mode.value, "root_encoding_digest": tree.root_encoding_digest, "tree": _node_to_dict(tree.node)}


def abstraction_to_dict(ap: AbstractionProof) -> dict:
    return {
        "origin_digest": ap.origin_digest,
        "final_digest": ap.final_digest,
        "input_box": box_to_list(ap.input_box),
        "abstract_network": network_to_dict(ap.abstract_network),
        "steps": [_step_to_dict(s) for s in ap.steps],
    }


def proof_to_dict(p: AbstractProof) -> dict:
    return {
        "version": PROOF_VERSION,
        "query": {"input_box": box_to_list(p.query.input), "output_halfspaces": polytope_to_list(p.query.output)},
        "origin_network": network_to_dict(p.query.network),
        "abstraction": abstraction_to_dict(p.abstraction),
        "verification": tree_to_dict(p.verification),
    }


def serialize(p: AbstractProof) -> bytes:
    return canonical_json(proof_to_dict(p))


def _int(value, what):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ProofFormatError(f"{what} must be an integer")
    return value


def _step_from_dict(data: dict):
    rule = data.get("rule")
    if rule == TRIV_ABS:
        return TrivLift()
    if rule == BOUND_ANNOTATION:
        return BoundAnnotation(_int(data["layer"], "layer"), tuple(parse_interval(b) for b in data["bounds"]))
    if rule == MERGE:
        k = _int(data["layer"], "layer")
        record = MergeRecord(
            k,
            MergeBucket(k, tuple(_int(i, "bucket index") for i in data["bucket"])),
            tuple(parse_interval(b) for b in data["bounds_used"]),
            tuple(parse_interval(b) for b in data["bias_interval"]),
        )
        return Merge(record)
    raise ProofFormatError(f"unknown rule {rule!r}")


def _node_from_dict(data: dict):
    kind = data.get("kind")
    if kind == "leaf":
        return Leaf(FarkasCertificate(tuple(to_rational(v) for v in data["multipliers"])))
    if kind == "split":
        relu = data["relu"]
        if not isinstance(relu, list) or len(relu) != 2:
            raise ProofFormatError("split relu must be [layer, index]")
        return Split(
            (_int(relu[0], "layer"), _int(relu[1], "index")),
            _node_from_dict(data["active"]),
            _node_from_dict(data["inactive"]),
        )
    raise ProofFormatError(f"unknown tree node kind {kind!r}")


def proof_from_dict(data: dict) -> AbstractProof:
    try:
        if data.get("version") != PROOF_VERSION:
            raise ProofFormatError(f"unsupported proof version {data.get('version')!r}")
        box, q_out = property_from_dict(data["query"])
        origin = network_from_dict(data["origin_network"])
        if not isinstance(origin, Network):
            raise ProofFormatError("origin_network must be a concrete network")
        ab = data["abstraction"]
        abstract_net = network_from_dict(ab["abstract_network"])
        if not isinstance(abstract_net, AbstractNetwork):
            raise ProofFormatError("abstract_network must carry bias intervals")
        abstraction = AbstractionProof(
            ab["origin_digest"],
            tuple(_step_from_dict(s) for s in ab["steps"]),
            ab["final_digest"],
            InputBox.from_pairs(ab["input_box"]),
            abstract_net,
        )
        ver = data["verification"]
        tree = VerificationProofTree(Mode(ver["mode"]), ver["root_encoding_digest"], _node_from_dict(ver["tree"]))
        return AbstractProof(abstraction, tree, Query(origin, box, q_out))
    except ProofFormatError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError, ModelError) as exc:
        raise ProofFormatError(f"malformed proof: {exc!r}") from exc


def load_json(raw: Union[bytes, str]) -> dict:
    """Parse JSON, reporting the byte offset of a syntax error."""
    text = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ProofFormatError(f"invalid JSON at byte offset {offset} (line {exc.lineno}, column {exc.colno}): {exc.msg}") from exc


def deserialize(raw: Union[bytes, str]) -> AbstractProof:
    data = load_json(raw)
    if not isinstance(data, dict):
        raise ProofFormatError("proof must be a JSON object at byte offset 0")
    return proof_from_dict(data)

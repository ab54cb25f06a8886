"""Networks, abstract networks, queries, and their two evaluation semantics.

A :class:`Network` is a stack of affine layers, ReLU on hidden layers and the
identity on the output.  An :class:`AbstractNetwork` additionally carries a
per-layer vector of bias intervals; its interval evaluation adds those
intervals to the pre-activations (a Minkowski sum, which for boxes is plain
interval addition).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .numerics import (
    Interval,
    format_interval,
    format_rational,
    interval_add,
    interval_dot,
    interval_relu,
    parse_interval,
    to_rational,
    zero_vector,
)

RELU = "relu"
IDENTITY = "identity"
ACTIVATIONS = (RELU, IDENTITY)


class ModelError(ValueError):
    """Structurally invalid network, box, polytope or query."""


def _matrix(rows) -> tuple:
    return tuple(tuple(to_rational(v) for v in row) for row in rows)


def _vector(values) -> tuple:
    return tuple(to_rational(v) for v in values)


def _check_layer_shape(weights, bias, activation):
    if activation not in ACTIVATIONS:
        raise ModelError(f"unsupported activation {activation!r}")
    if len(weights) != len(bias):
        raise ModelError(f"weights have {len(weights)} rows but bias has {len(bias)} entries")
    if not weights:
        raise ModelError("layer must have at least one neuron")
    width = len(weights[0])
    if any(len(row) != width for row in weights):
        raise ModelError("ragged weight matrix")


def _check_chain(layers, input_dim):
    if not layers:
        raise ModelError("network needs at least one layer")
    prev = input_dim
    for k, layer in enumerate(layers, start=1):
        if layer.in_dim != prev:
            raise ModelError(f"layer {k} expects input width {layer.in_dim}, previous width is {prev}")
        expected = IDENTITY if k == len(layers) else RELU
        if layer.activation != expected:
            raise ModelError(f"layer {k} must use {expected!r}, got {layer.activation!r}")
        prev = layer.out_dim


@dataclass(frozen=True)
class Layer:
    weights: tuple
    bias: tuple
    activation: str = RELU

    def __post_init__(self):
        object.__setattr__(self, "weights", _matrix(self.weights))
        object.__setattr__(self, "bias", _vector(self.bias))
        _check_layer_shape(self.weights, self.bias, self.activation)

    @property
    def in_dim(self) -> int:
        return len(self.weights[0])

    @property
    def out_dim(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class Network:
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ModelError("network needs at least one layer")
        _check_chain(self.layers, self.layers[0].in_dim)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def widths(self) -> tuple:
        return (self.input_dim,) + tuple(layer.out_dim for layer in self.layers)


@dataclass(frozen=True)
class AbstractLayer:
    weights: tuple
    bias: tuple
    bias_interval: tuple
    activation: str = RELU

    def __post_init__(self):
        object.__setattr__(self, "weights", _matrix(self.weights))
        object.__setattr__(self, "bias", _vector(self.bias))
        object.__setattr__(self, "bias_interval", tuple(self.bias_interval))
        _check_layer_shape(self.weights, self.bias, self.activation)
        if len(self.bias_interval) != len(self.bias):
            raise ModelError("bias_interval dimension differs from layer width")
        if not all(isinstance(b, Interval) for b in self.bias_interval):
            raise ModelError("bias_interval entries must be Interval")

    @property
    def in_dim(self) -> int:
        return len(self.weights[0])

    @property
    def out_dim(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class AbstractNetwork:
    """Network whose biases are intervals.

    ``provenance`` lists the merge steps (see :mod:`absproof.abstraction`)
    that produced this network from its origin; ``neuron_ids`` maps each
    current hidden neuron back to its index in the origin network.  Neither
    takes part in equality, which is about the network itself.
    """

    layers: tuple
    provenance: tuple = field(default=(), compare=False)
    neuron_ids: Optional[tuple] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "provenance", tuple(self.provenance))
        if not self.layers:
            raise ModelError("network needs at least one layer")
        _check_chain(self.layers, self.layers[0].in_dim)
        if self.neuron_ids is None:
            ids = tuple(tuple(range(layer.out_dim)) for layer in self.layers)
            object.__setattr__(self, "neuron_ids", ids)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def widths(self) -> tuple:
        return (self.input_dim,) + tuple(layer.out_dim for layer in self.layers)


@dataclass(frozen=True)
class InputBox:
    bounds: tuple

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple(self.bounds))
        if not self.bounds:
            raise ModelError("input box must have at least one dimension")
        if not all(isinstance(b, Interval) for b in self.bounds):
            raise ModelError("input box entries must be Interval")

    @classmethod
    def from_pairs(cls, pairs) -> "InputBox":
        return cls(tuple(parse_interval(p) for p in pairs))

    @property
    def dim(self) -> int:
        return len(self.bounds)


@dataclass(frozen=True)
class Halfspace:
    """``coeffs · y <= rhs``."""

    coeffs: tuple
    rhs: Fraction

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _vector(self.coeffs))
        object.__setattr__(self, "rhs", to_rational(self.rhs))


@dataclass(frozen=True)
class OutputPolytope:
    halfspaces: tuple

    def __post_init__(self):
        object.__setattr__(self, "halfspaces", tuple(self.halfspaces))
        if not self.halfspaces:
            raise ModelError("output polytope needs at least one halfspace")
        dims = {len(h.coeffs) for h in self.halfspaces}
        if len(dims) != 1:
            raise ModelError("halfspaces disagree on output dimension")

    @property
    def dim(self) -> int:
        return len(self.halfspaces[0].coeffs)


@dataclass(frozen=True)
class Query:
    network: object  # Network | AbstractNetwork
    input: InputBox
    output: OutputPolytope

    def __post_init__(self):
        if self.input.dim != self.network.input_dim:
            raise ModelError(f"input box has dimension {self.input.dim}, network expects {self.network.input_dim}")
        if self.output.dim != self.network.output_dim:
            raise ModelError(f"output polytope has dimension {self.output.dim}, network produces {self.network.output_dim}")


def _affine(weights, bias, x):
    return tuple(sum((w * v for w, v in zip(row, x)), Fraction(0)) + b for row, b in zip(weights, bias))


def eval_concrete(net: Network, x: Sequence) -> tuple:
    """Exact forward pass ``h_k = phi_k(W_k h_{k-1} + b_k)``."""
    h = tuple(to_rational(v) for v in x)
    if len(h) != net.input_dim:
        raise ModelError(f"input has dimension {len(h)}, network expects {net.input_dim}")
    for layer in net.layers:
        z = _affine(layer.weights, layer.bias, h)
        h = tuple(max(v, Fraction(0)) for v in z) if layer.activation == RELU else z
    return h


def eval_concrete_layers(net: Network, x: Sequence) -> list:
    """All post-activation vectors ``[h_0, h_1, ..., h_L]``."""
    h = tuple(to_rational(v) for v in x)
    if len(h) != net.input_dim:
        raise ModelError(f"input has dimension {len(h)}, network expects {net.input_dim}")
    out = [h]
    for layer in net.layers:
        z = _affine(layer.weights, layer.bias, h)
        h = tuple(max(v, Fraction(0)) for v in z) if layer.activation == RELU else z
        out.append(h)
    return out


def abstract_layer_interval(layer: AbstractLayer, prev: Sequence[Interval], relu: bool = True) -> tuple:
    """Pre- or post-activation box of one abstract layer given the previous box."""
    pre = tuple(
        interval_add(interval_dot(row, prev), Interval(b + bi.lo, b + bi.hi))
        for row, b, bi in zip(layer.weights, layer.bias, layer.bias_interval)
    )
    if relu and layer.activation == RELU:
        return tuple(interval_relu(v) for v in pre)
    return pre


def eval_abstract_interval(net: AbstractNetwork, x: Sequence[Interval]) -> tuple:
    """Interval semantics of an abstract network on the box ``x``."""
    box = tuple(x)
    if len(box) != net.input_dim:
        raise ModelError(f"input has dimension {len(box)}, network expects {net.input_dim}")
    for layer in net.layers:
        box = abstract_layer_interval(layer, box)
    return box


def point_in_box(x: Sequence, box: InputBox) -> bool:
    if len(x) != box.dim:
        raise ModelError(f"point has dimension {len(x)}, box has {box.dim}")
    return all(to_rational(v) in b for v, b in zip(x, box.bounds))


def output_in_polytope(y: Sequence, q: OutputPolytope) -> bool:
    if len(y) != q.dim:
        raise ModelError(f"output has dimension {len(y)}, polytope has {q.dim}")
    ys = [to_rational(v) for v in y]
    return all(sum((c * v for c, v in zip(h.coeffs, ys)), Fraction(0)) <= h.rhs for h in q.halfspaces)


def lift_trivial(net: Network) -> AbstractNetwork:
    """Same weights and biases, every bias interval ``[0, 0]``."""
    return AbstractNetwork(
        tuple(
            AbstractLayer(layer.weights, layer.bias, zero_vector(layer.out_dim), layer.activation)
            for layer in net.layers
        )
    )


def as_abstract(net) -> AbstractNetwork:
    return net if isinstance(net, AbstractNetwork) else lift_trivial(net)


# JSON ----------------------------------------------------------------------

def network_to_dict(net) -> dict:
    layers = []
    for layer in net.layers:
        entry = {
            "activation": layer.activation,
            "bias": [format_rational(b) for b in layer.bias],
            "weights": [[format_rational(w) for w in row] for row in layer.weights],
        }
        if isinstance(layer, AbstractLayer):
            entry["bias_interval"] = [format_interval(b) for b in layer.bias_interval]
        layers.append(entry)
    return {"layers": layers}


def network_from_dict(data: dict):
    """Build a :class:`Network`, or an :class:`AbstractNetwork` when any layer has ``bias_interval``."""
    try:
        raw_layers = data["layers"]
    except (KeyError, TypeError) as exc:
        raise ModelError("network JSON needs a 'layers' list") from exc
    if not isinstance(raw_layers, list):
        raise ModelError("'layers' must be a list")
    abstract = any("bias_interval" in raw for raw in raw_layers)
    layers = []
    for k, raw in enumerate(raw_layers, start=1):
        try:
            weights = raw["weights"]
            bias = raw["bias"]
            activation = raw.get("activation", IDENTITY if k == len(raw_layers) else RELU)
            if abstract:
                intervals = raw.get("bias_interval")
                bi = (
                    tuple(parse_interval(p) for p in intervals)
                    if intervals is not None
                    else zero_vector(len(bias))
                )
                layers.append(AbstractLayer(weights, bias, bi, activation))
            else:
                layers.append(Layer(weights, bias, activation))
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError(f"layer {k}: {exc}") from exc
    return AbstractNetwork(tuple(layers)) if abstract else Network(tuple(layers))


def box_to_list(box: InputBox) -> list:
    return [format_interval(b) for b in box.bounds]


def polytope_to_list(q: OutputPolytope) -> list:
    return [
        {"coeffs": [format_rational(c) for c in h.coeffs], "rhs": format_rational(h.rhs)}
        for h in q.halfspaces
    ]


def property_to_dict(box: InputBox, q: OutputPolytope) -> dict:
    return {"input_box": box_to_list(box), "output_halfspaces": polytope_to_list(q)}


def property_from_dict(data: dict) -> tuple:
    try:
        box = InputBox.from_pairs(data["input_box"])
        q = OutputPolytope(tuple(Halfspace(h["coeffs"], h["rhs"]) for h in data["output_halfspaces"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"invalid property: {exc}") from exc
    return box, q


def canonical_json(data) -> bytes:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode()


def network_digest(net) -> str:
    """SHA-256 of the canonical JSON of a network's layers."""
    return hashlib.sha256(canonical_json(network_to_dict(net))).hexdigest()

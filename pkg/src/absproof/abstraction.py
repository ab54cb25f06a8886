"""Interval bounds, merge-bucket selection, neuron merging and refinement.

Merging a bucket ``B`` of hidden layer ``k`` drops rows ``B`` from layer ``k``
and columns ``B`` from layer ``k+1``; the dropped neurons' contribution is
folded into layer ``k+1``'s bias interval as ``W_{k+1}[:, B] · I_k[B]``, where
``I_k`` are sound interval bounds on layer ``k`` under the input box.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .model import (
    RELU,
    AbstractLayer,
    AbstractNetwork,
    InputBox,
    ModelError,
    Network,
    abstract_layer_interval,
    lift_trivial,
)
from .numerics import Interval, interval_add, interval_dot, to_rational


class AbstractionError(ValueError):
    pass


@dataclass(frozen=True)
class LayerBounds:
    """Post-activation bounds ``I_k`` of layer ``layer_index`` (0 is the input)."""

    layer_index: int
    post_activation: tuple


@dataclass(frozen=True)
class MergeBucket:
    layer_index: int
    indices: tuple

    def __post_init__(self):
        idx = tuple(sorted(set(int(i) for i in self.indices)))
        if len(idx) != len(tuple(self.indices)):
            raise AbstractionError(f"duplicate indices in bucket {self.indices}")
        if len(idx) < 2:
            raise AbstractionError("a merge bucket needs at least two neurons")
        if self.layer_index < 1:
            raise AbstractionError("buckets live in hidden layers (index >= 1)")
        object.__setattr__(self, "indices", idx)


@dataclass(frozen=True)
class MergeRecord:
    """One application of the merge rule, as needed to replay and to prove it.

    ``bounds_used`` is ``I_k`` restricted to the bucket and
    ``resulting_bias_interval`` the per-row contribution added to layer
    ``k+1``'s bias interval.  ``origin_indices`` names the merged neurons by
    their position in the origin network so a refinement can replay the
    remaining merges after earlier ones were undone.
    """

    layer_index: int
    bucket: MergeBucket
    bounds_used: tuple
    resulting_bias_interval: tuple
    origin_indices: tuple = field(default=(), compare=False)

    @property
    def width(self) -> Fraction:
        return sum((iv.width for iv in self.resulting_bias_interval), Fraction(0))


@dataclass(frozen=True)
class AbstractionConfig:
    epsilon: Fraction = Fraction(0)
    min_bucket: int = 2
    layer_order: str = "first_to_last"

    def __post_init__(self):
        eps = to_rational(self.epsilon)
        if eps < 0:
            raise AbstractionError("epsilon must be nonnegative")
        if self.min_bucket < 2:
            raise AbstractionError("min_bucket must be at least 2")
        if self.layer_order != "first_to_last":
            raise AbstractionError(f"unsupported layer order {self.layer_order!r}")
        object.__setattr__(self, "epsilon", eps)


def compute_bounds(net: AbstractNetwork, p: InputBox) -> list:
    """Interval bound propagation: ``[I_0 = P, I_1, ..., I_L]``."""
    if p.dim != net.input_dim:
        raise ModelError(f"input box has dimension {p.dim}, network expects {net.input_dim}")
    box = tuple(p.bounds)
    out = [LayerBounds(0, box)]
    for k, layer in enumerate(net.layers, start=1):
        box = abstract_layer_interval(layer, box)
        out.append(LayerBounds(k, box))
    return out


def select_buckets(bounds: LayerBounds, cfg: AbstractionConfig) -> list:
    """Greedy clustering of neurons with similar bounds.

    Neurons are scanned by interval midpoint (ties by index).  A bucket is
    seeded by the first neuron not yet placed; following neurons join while
    both their endpoints stay within ``epsilon`` of the seed's.
    """
    ivs = bounds.post_activation
    order = sorted(range(len(ivs)), key=lambda i: (ivs[i].midpoint, i))
    groups = []
    current = []
    for i in order:
        if current:
            seed = ivs[current[0]]
            if abs(ivs[i].lo - seed.lo) <= cfg.epsilon and abs(ivs[i].hi - seed.hi) <= cfg.epsilon:
                current.append(i)
                continue
            groups.append(current)
        current = [i]
    if current:
        groups.append(current)
    return [MergeBucket(bounds.layer_index, tuple(g)) for g in groups if len(g) >= cfg.min_bucket]


def merge_bucket(net: AbstractNetwork, bucket: MergeBucket, bounds: LayerBounds) -> AbstractNetwork:
    k = bucket.layer_index
    num_layers = len(net.layers)
    if not 1 <= k <= num_layers - 1:
        raise AbstractionError(f"cannot merge in layer {k}: only hidden layers 1..{num_layers - 1} qualify")
    layer, nxt = net.layers[k - 1], net.layers[k]
    if bounds.layer_index != k or len(bounds.post_activation) != layer.out_dim:
        raise AbstractionError("stale bounds: they do not describe the layer being merged")
    if bucket.indices[-1] >= layer.out_dim:
        raise AbstractionError(f"bucket {bucket.indices} exceeds layer width {layer.out_dim}")
    if len(bucket.indices) >= layer.out_dim:
        raise AbstractionError("a bucket cannot remove every neuron of a layer")

    merged = set(bucket.indices)
    keep = [i for i in range(layer.out_dim) if i not in merged]
    used = tuple(bounds.post_activation[i] for i in bucket.indices)
    contribution = tuple(interval_dot([row[i] for i in bucket.indices], used) for row in nxt.weights)

    new_layer = AbstractLayer(
        tuple(layer.weights[i] for i in keep),
        tuple(layer.bias[i] for i in keep),
        tuple(layer.bias_interval[i] for i in keep),
        layer.activation,
    )
    new_next = AbstractLayer(
        tuple(tuple(row[i] for i in keep) for row in nxt.weights),
        nxt.bias,
        tuple(interval_add(old, extra) for old, extra in zip(nxt.bias_interval, contribution)),
        nxt.activation,
    )
    layers = list(net.layers)
    layers[k - 1], layers[k] = new_layer, new_next

    ids = list(net.neuron_ids)
    origin = tuple(ids[k - 1][i] for i in bucket.indices)
    ids[k - 1] = tuple(ids[k - 1][i] for i in keep)
    record = MergeRecord(k, bucket, used, contribution, origin)
    return AbstractNetwork(tuple(layers), net.provenance + (record,), tuple(ids))


def _merge_layer(net: AbstractNetwork, p: InputBox, k: int, buckets: Sequence[MergeBucket]) -> AbstractNetwork:
    removed = []
    for bucket in buckets:
        shifted = tuple(i - sum(1 for r in removed if r < i) for i in bucket.indices)
        bounds = compute_bounds(net, p)[k]
        net = merge_bucket(net, MergeBucket(k, shifted), bounds)
        removed.extend(bucket.indices)
    return net


def _keep_one_neuron(buckets, width, cfg):
    # a layer may not vanish: trim the last bucket until one neuron survives
    if sum(len(b.indices) for b in buckets) < width:
        return buckets
    last = buckets[-1]
    trimmed = last.indices[:-1]
    if len(trimmed) >= cfg.min_bucket:
        return buckets[:-1] + [MergeBucket(last.layer_index, trimmed)]
    return buckets[:-1]


def abstract(net: Network, p: InputBox, cfg: Optional[AbstractionConfig] = None) -> AbstractNetwork:
    """Lift ``net`` and merge buckets layer by layer, first hidden layer first."""
    cfg = cfg or AbstractionConfig()
    current = lift_trivial(net)
    for k in range(1, len(net.layers)):
        bounds = compute_bounds(current, p)[k]
        buckets = _keep_one_neuron(select_buckets(bounds, cfg), len(bounds.post_activation), cfg)
        if buckets:
            current = _merge_layer(current, p, k, buckets)
    return current


def replay(origin: Network, p: InputBox, steps: Sequence[tuple]) -> AbstractNetwork:
    """Rebuild an abstraction from ``(layer_index, origin_indices)`` steps.

    Bounds are recomputed on the network as it stands before each step, so a
    replay of a full provenance reproduces the original result exactly.
    """
    current = lift_trivial(origin)
    for k, origin_idx in steps:
        ids = current.neuron_ids[k - 1]
        try:
            positions = tuple(ids.index(i) for i in origin_idx)
        except ValueError as exc:
            raise AbstractionError(f"neuron {exc} of layer {k} was already merged away") from exc
        bounds = compute_bounds(current, p)[k]
        current = merge_bucket(current, MergeBucket(k, positions), bounds)
    return current


def refine(net: AbstractNetwork, origin: Network, p: InputBox) -> AbstractNetwork:
    """Undo the merge with the widest bias contribution (ties: the latest)."""
    if not net.provenance:
        raise AbstractionError("nothing to refine: provenance is empty")
    widths = [rec.width for rec in net.provenance]
    widest = max(widths)
    drop = max(i for i, w in enumerate(widths) if w == widest)
    remaining = [(rec.layer_index, rec.origin_indices) for i, rec in enumerate(net.provenance) if i != drop]
    return replay(origin, p, remaining)


def merged_neuron_count(net: AbstractNetwork) -> int:
    return sum(len(rec.bucket.indices) for rec in net.provenance)


def hidden_relu_count(net) -> int:
    return sum(layer.out_dim for layer in net.layers if layer.activation == RELU)

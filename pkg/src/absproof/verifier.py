"""Complete decision procedure for queries over (abstract) ReLU networks.

A query ``<f, P, Q>`` is encoded as an exact linear system over the inputs,
every pre-activation, every hidden post-activation and, in skip-connection
mode, one auxiliary input per non-degenerate bias interval.  ReLUs start out
relaxed (``h >= 0``, ``h >= z`` and the triangle upper bound built from
interval bounds on ``z``); a branch fixes a ReLU's phase.  Each search node
re-derives its interval bounds from the input box with the node's phases
applied, so a node's system is a pure function of the query and the path to
it.  That is what lets an independent checker rebuild every leaf system and
validate its Farkas certificate.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence

from .lp import (
    EQ,
    GE,
    LE,
    MAX,
    MIN,
    Constraint,
    FarkasCertificate,
    Feasible,
    Infeasible,
    LinearSystem,
    Optimal,
    optimize,
    solve_feasibility,
)
from .model import (
    IDENTITY,
    RELU,
    AbstractNetwork,
    InputBox,
    ModelError,
    Network,
    OutputPolytope,
    Query,
    as_abstract,
    eval_concrete,
    output_in_polytope,
    point_in_box,
)
from .numerics import (
    Interval,
    format_interval,
    format_rational,
    interval_add,
    interval_dot,
    interval_relu,
    to_rational,
)

ACTIVE, INACTIVE = "active", "inactive"


class Mode(str, Enum):
    INEQUALITY_BIAS = "ineq"
    SKIP_CONNECTION = "skip"


class VerifierError(RuntimeError):
    pass


class QueryIsSat(VerifierError):
    """Raised when a proof is requested for a satisfiable query."""


class ResourceLimit(VerifierError):
    pass


@dataclass(frozen=True)
class SplitDecision:
    relu: tuple  # (layer, index), layer 1-based, index 0-based
    phase: str


@dataclass(frozen=True)
class Encoding:
    mode: Mode
    system: LinearSystem
    var_map: dict = field(compare=False)
    relu_vars: tuple = ()
    input_vars: tuple = ()
    output_vars: tuple = ()
    aux_vars: tuple = ()

    @property
    def digest(self) -> str:
        return system_digest(self.mode, self.system)


@dataclass(frozen=True)
class Leaf:
    certificate: FarkasCertificate


@dataclass(frozen=True)
class Split:
    relu: tuple
    active: object
    inactive: object


@dataclass(frozen=True)
class VerificationProofTree:
    mode: Mode
    root_encoding_digest: str
    node: object

    def leaves(self) -> list:
        out = []
        stack = [self.node]
        while stack:
            node = stack.pop()
            if isinstance(node, Leaf):
                out.append(node)
            else:
                stack.extend([node.inactive, node.active])
        return out


@dataclass(frozen=True)
class Sat:
    x: tuple
    aux: Optional[tuple] = None
    output: tuple = ()


@dataclass(frozen=True)
class Unsat:
    tree: VerificationProofTree


@dataclass(frozen=True)
class RealCounterexample:
    x: tuple
    output: tuple


@dataclass(frozen=True)
class Spurious:
    x: tuple
    output: tuple


def _coerce_mode(mode) -> Mode:
    return mode if isinstance(mode, Mode) else Mode(mode)


def node_bounds(net: AbstractNetwork, box: InputBox, phases: dict) -> tuple:
    """Pre- and post-activation boxes per layer with ``phases`` applied.

    A fixed phase intersects the pre-activation interval with the matching
    half-line when that intersection is nonempty; an empty intersection is
    left for the LP to refute through the split rows.
    """
    prev = tuple(box.bounds)
    pres, posts = [], []
    zero = Fraction(0)
    for k, layer in enumerate(net.layers, start=1):
        pre = []
        for i, (row, b, bi) in enumerate(zip(layer.weights, layer.bias, layer.bias_interval)):
            iv = interval_add(interval_dot(row, prev), Interval(b + bi.lo, b + bi.hi))
            phase = phases.get((k, i))
            if phase == ACTIVE and iv.hi >= 0:
                iv = Interval(max(iv.lo, zero), iv.hi)
            elif phase == INACTIVE and iv.lo <= 0:
                iv = Interval(iv.lo, min(iv.hi, zero))
            pre.append(iv)
        pre = tuple(pre)
        post = tuple(interval_relu(v) for v in pre) if layer.activation == RELU else pre
        pres.append(pre)
        posts.append(post)
        prev = post
    return pres, posts


def _row(n: int, entries) -> tuple:
    coeffs = [Fraction(0)] * n
    for j, v in entries:
        coeffs[j] += v
    return tuple(coeffs)


def encode(q: Query, mode=Mode.SKIP_CONNECTION, splits: Sequence[SplitDecision] = ()) -> Encoding:
    """Linear encoding of ``q`` (the root system when ``splits`` is empty)."""
    mode = _coerce_mode(mode)
    net = as_abstract(q.network)
    halfspaces = [(h.coeffs, LE, h.rhs) for h in q.output.halfspaces]
    return _encode(net, q.input, halfspaces, mode, tuple(splits))


def _encode(net: AbstractNetwork, box: InputBox, out_rows, mode: Mode, splits) -> Encoding:
    for layer in net.layers:
        if layer.activation not in (RELU, IDENTITY):
            raise VerifierError(f"unsupported activation {layer.activation!r}")
    phases = {s.relu: s.phase for s in splits}
    pres, posts = node_bounds(net, box, phases)

    var_map = {}
    bounds = []

    def new_var(name, bound):
        var_map[name] = len(bounds)
        bounds.append(bound)
        return var_map[name]

    inputs = tuple(new_var(("x", i), b) for i, b in enumerate(box.bounds))
    pre_vars, post_vars = [], []
    prev = inputs
    for k, layer in enumerate(net.layers, start=1):
        z = tuple(new_var(("pre", k, i), pres[k - 1][i]) for i in range(layer.out_dim))
        if layer.activation == RELU:
            h = tuple(new_var(("post", k, i), posts[k - 1][i]) for i in range(layer.out_dim))
        else:
            h = z
        pre_vars.append(z)
        post_vars.append(h)
    aux = []
    if mode == Mode.SKIP_CONNECTION:
        for k, layer in enumerate(net.layers, start=1):
            for i, bi in enumerate(layer.bias_interval):
                if not bi.is_singleton:
                    aux.append(new_var(("aux", k, i), bi))
    n = len(bounds)

    rows = []
    prev = inputs
    for k, layer in enumerate(net.layers, start=1):
        for i, (wrow, b, bi) in enumerate(zip(layer.weights, layer.bias, layer.bias_interval)):
            entries = [(pre_vars[k - 1][i], Fraction(1))] + [(prev[j], -w) for j, w in enumerate(wrow) if w]
            if mode == Mode.INEQUALITY_BIAS:
                rows.append(Constraint(_row(n, entries), GE, b + bi.lo))
                rows.append(Constraint(_row(n, entries), LE, b + bi.hi))
            elif bi.is_singleton:
                rows.append(Constraint(_row(n, entries), EQ, b + bi.lo))
            else:
                entries.append((var_map[("aux", k, i)], Fraction(-1)))
                rows.append(Constraint(_row(n, entries), EQ, b))
        prev = post_vars[k - 1]

    relu_vars = []
    for k, layer in enumerate(net.layers, start=1):
        if layer.activation != RELU:
            continue
        for i in range(layer.out_dim):
            zi, hi_ = pre_vars[k - 1][i], post_vars[k - 1][i]
            relu_vars.append(((k, i), zi, hi_))
            iv = pres[k - 1][i]
            l, u = iv.lo, iv.hi
            if u <= 0:
                continue
            if l >= 0:
                rows.append(Constraint(_row(n, [(hi_, 1), (zi, -1)]), EQ, 0))
            else:
                rows.append(Constraint(_row(n, [(hi_, 1), (zi, -1)]), GE, 0))
                rows.append(Constraint(_row(n, [(hi_, u - l), (zi, -u)]), LE, -u * l))

    for s in splits:
        k, i = s.relu
        try:
            zi, hi_ = var_map[("pre", k, i)], var_map[("post", k, i)]
        except KeyError as exc:
            raise VerifierError(f"split on unknown ReLU {s.relu}") from exc
        if s.phase == ACTIVE:
            rows.append(Constraint(_row(n, [(zi, 1)]), GE, 0))
            rows.append(Constraint(_row(n, [(hi_, 1), (zi, -1)]), EQ, 0))
        else:
            rows.append(Constraint(_row(n, [(zi, 1)]), LE, 0))
            rows.append(Constraint(_row(n, [(hi_, 1)]), LE, 0))

    outputs = pre_vars[-1]
    for coeffs, rel, rhs in out_rows:
        rows.append(Constraint(_row(n, [(outputs[j], c) for j, c in enumerate(coeffs) if c]), rel, rhs))

    system = LinearSystem(tuple(rows), n, tuple(bounds))
    return Encoding(mode, system, var_map, tuple(relu_vars), inputs, tuple(outputs), tuple(aux))


def system_to_dict(mode, system: LinearSystem) -> dict:
    return {
        "mode": _coerce_mode(mode).value,
        "num_vars": system.num_vars,
        "constraints": [
            {"coeffs": [format_rational(a) for a in c.coeffs], "rel": c.rel, "rhs": format_rational(c.rhs)}
            for c in system.constraints
        ],
        "var_bounds": [None if b is None else format_interval(b) for b in system.var_bounds],
    }


def system_digest(mode, system: LinearSystem) -> str:
    data = json.dumps(system_to_dict(mode, system), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(data.encode()).hexdigest()


def _violations(enc: Encoding, point) -> list:
    out = []
    for relu, zi, hi_ in enc.relu_vars:
        z, h = point[zi], point[hi_]
        gap = abs(h - max(z, Fraction(0)))
        if gap:
            out.append((gap, relu))
    return out


def _pick_split(violations) -> tuple:
    best = max(v[0] for v in violations)
    return min(relu for gap, relu in violations if gap == best)


def _aux_values(enc: Encoding, net: AbstractNetwork, point) -> Optional[tuple]:
    if enc.mode == Mode.SKIP_CONNECTION:
        return tuple(point[j] for j in enc.aux_vars) if enc.aux_vars else None
    # inequality mode: the bias choice is implied by the slack in each affine row
    values = []
    prev = [point[j] for j in enc.input_vars]
    for k, layer in enumerate(net.layers, start=1):
        z = [point[enc.var_map[("pre", k, i)]] for i in range(layer.out_dim)]
        for i, (wrow, b, bi) in enumerate(zip(layer.weights, layer.bias, layer.bias_interval)):
            if not bi.is_singleton:
                values.append(z[i] - b - sum((w * v for w, v in zip(wrow, prev)), Fraction(0)))
        if layer.activation == RELU:
            prev = [point[enc.var_map[("post", k, i)]] for i in range(layer.out_dim)]
        else:
            prev = z
    return tuple(values) or None


def decide(q: Query, mode=Mode.SKIP_CONNECTION, max_nodes: Optional[int] = None):
    """Return :class:`Sat` with a witness or :class:`Unsat` with a proof tree.

    Depth-first over ReLU phase splits; the active branch is explored first
    and placed first in the tree.  At each node the system is rebuilt with
    bounds tightened for the node's phases, then solved exactly.  A feasible
    point whose ReLUs are all consistent is a genuine witness; otherwise the
    ReLU with the largest ``|h - relu(z)|`` (lowest ``(layer, index)`` on ties)
    is split.
    """
    mode = _coerce_mode(mode)
    net = as_abstract(q.network)
    halfspaces = [(h.coeffs, LE, h.rhs) for h in q.output.halfspaces]
    root = _encode(net, q.input, halfspaces, mode, ())
    count = [0]

    def search(splits):
        count[0] += 1
        if max_nodes is not None and count[0] > max_nodes:
            raise ResourceLimit(f"search exceeded {max_nodes} nodes")
        enc = root if not splits else _encode(net, q.input, halfspaces, mode, splits)
        result = solve_feasibility(enc.system)
        if isinstance(result, Infeasible):
            return Leaf(result.certificate)
        point = result.point
        violations = _violations(enc, point)
        if not violations:
            x = tuple(point[j] for j in enc.input_vars)
            y = tuple(point[j] for j in enc.output_vars)
            return Sat(x, _aux_values(enc, net, point), y)
        relu = _pick_split(violations)
        children = []
        for phase in (ACTIVE, INACTIVE):
            child = search(splits + (SplitDecision(relu, phase),))
            if isinstance(child, Sat):
                return child
            children.append(child)
        return Split(relu, children[0], children[1])

    outcome = search(())
    if isinstance(outcome, Sat):
        return outcome
    return Unsat(VerificationProofTree(mode, root.digest, outcome))


def verify_with_proofs(net, p: InputBox, q: OutputPolytope, mode=Mode.SKIP_CONNECTION, max_nodes=None):
    verdict = decide(Query(net, p, q), mode, max_nodes)
    if isinstance(verdict, Sat):
        raise QueryIsSat(f"query is SAT (witness {[format_rational(v) for v in verdict.x]}); no UNSAT proof exists")
    return verdict.tree


def spurious_check(f: Network, q: Query, witness: Sequence):
    """Replay an abstract witness's input on the concrete network."""
    x = tuple(to_rational(v) for v in witness)
    if not point_in_box(x, q.input):
        raise VerifierError("witness lies outside the input box")
    y = eval_concrete(f, x)
    if output_in_polytope(y, q.output):
        return RealCounterexample(x, y)
    return Spurious(x, y)


def _optimize_over(net: AbstractNetwork, box: InputBox, coeffs, mode: Mode, sense: str):
    """Exact optimum of ``coeffs · y`` over the abstract network's output set."""
    best = [None]

    def better(a, b):
        return b is None or (a < b if sense == MIN else a > b)

    def search(splits):
        enc = _encode(net, box, (), mode, splits)
        objective = [Fraction(0)] * enc.system.num_vars
        for j, c in zip(enc.output_vars, coeffs):
            objective[j] += to_rational(c)
        result = optimize(enc.system, objective, sense)
        if not isinstance(result, Optimal):
            return
        if best[0] is not None and not better(result.value, best[0]):
            return
        violations = _violations(enc, result.point)
        if not violations:
            if better(result.value, best[0]):
                best[0] = result.value
            return
        relu = _pick_split(violations)
        for phase in (ACTIVE, INACTIVE):
            search(splits + (SplitDecision(relu, phase),))

    search(())
    return best[0]


def exact_output_range(net, box: InputBox, coeffs: Optional[Sequence] = None, mode=Mode.SKIP_CONNECTION) -> Interval:
    """Exact range of ``coeffs · f(x)`` over the box (first output by default).

    For an abstract network this is the range over the full set semantics,
    i.e. over every admissible choice of interval biases.
    """
    mode = _coerce_mode(mode)
    net = as_abstract(net)
    if coeffs is None:
        coeffs = [1] + [0] * (net.output_dim - 1)
    if len(coeffs) != net.output_dim:
        raise ModelError("objective dimension differs from network output")
    lo = _optimize_over(net, box, coeffs, mode, MIN)
    hi = _optimize_over(net, box, coeffs, mode, MAX)
    return Interval(lo, hi)

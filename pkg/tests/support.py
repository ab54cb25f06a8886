"""Shared fixtures, random instance generators and independent oracles for the tests.

The oracles deliberately avoid the package's LP solver and verifier:
feasibility is decided by enumerating vertices of small polytopes with
integer arithmetic, and query verdicts by enumerating ReLU phase patterns.
"""

from __future__ import annotations

import copy
import itertools
import math
import random
from fractions import Fraction

from absproof.model import (
    IDENTITY,
    RELU,
    Halfspace,
    InputBox,
    Layer,
    Network,
    OutputPolytope,
    eval_concrete,
)

F = Fraction


# running example -------------------------------------------------------------

def f1() -> Network:
    w1 = [["-1", "-1", "-2", "0"], ["-1", "-2", "-1", "-3"], ["0.1", "0", "0", "0"], ["0", "0.2", "0", "0"], ["1", "1", "1", "-1.3"]]
    return Network((Layer(w1, [0] * 5, RELU), Layer([[1, 1, -5, -5, 1]], [0], IDENTITY)))


def p1() -> InputBox:
    return InputBox.from_pairs([["0.9", "1.1"]] * 3 + [["1", "1"]])


def upper(rhs) -> OutputPolytope:
    """``{y : y <= rhs}`` for a single output."""
    return OutputPolytope((Halfspace((1,), rhs),))


def lower(rhs) -> OutputPolytope:
    """``{y : y >= rhs}`` for a single output."""
    return OutputPolytope((Halfspace((-1,), -F(rhs)),))


def zero_net() -> Network:
    """relu(x) - relu(-x) - relu(x + 1) + 1, identically 0 on [-1, 1]; its relaxation is loose."""
    return Network((Layer([[1], [-1], [1]], [0, 0, 1], RELU), Layer([[1, -1, -1]], [1], IDENTITY)))


def zero_box() -> InputBox:
    return InputBox.from_pairs([["-1", "1"]])


def two_layer_toy() -> Network:
    """Two hidden layers with mergeable neurons in each."""
    return Network((
        Layer([[1, 0], [1, 0], [0, 1]], [0, 0, 0], RELU),
        Layer([[1, 1, 0], [1, 1, 0], [0, 0, 1]], [0, 0, 0], RELU),
        Layer([[1, -1, 1]], [0], IDENTITY),
    ))


def unit_box(n: int) -> InputBox:
    return InputBox.from_pairs([[0, 1]] * n)


# random instances -------------------------------------------------------------

def random_network(rng: random.Random, n_in: int, hidden: list, n_out: int, span: int = 3) -> Network:
    widths = [n_in] + list(hidden) + [n_out]
    layers = []
    for k in range(1, len(widths)):
        act = IDENTITY if k == len(widths) - 1 else RELU
        weights = [[rng.randint(-span, span) for _ in range(widths[k - 1])] for _ in range(widths[k])]
        bias = [rng.randint(-span, span) for _ in range(widths[k])]
        layers.append(Layer(weights, bias, act))
    return Network(tuple(layers))


def random_box(rng: random.Random, n: int) -> InputBox:
    pairs = []
    for _ in range(n):
        lo = F(rng.randint(-4, 2), 2)
        pairs.append([lo, lo + F(rng.randint(1, 4), 2)])
    return InputBox.from_pairs(pairs)


def random_point(rng: random.Random, box: InputBox, denominator: int = 97) -> tuple:
    return tuple(iv.lo + iv.width * F(rng.randint(0, denominator), denominator) for iv in box.bounds)


def random_query(rng: random.Random, max_relus: int = 12):
    """A desk-scale query: 2 or 3 inputs, one or two hidden layers, at most ``max_relus`` ReLUs."""
    n_in = rng.choice([2, 3])
    depth = rng.choice([1, 2])
    hidden = []
    budget = max_relus
    for _ in range(depth):
        w = rng.randint(1, min(6, budget - (depth - 1 - len(hidden))))
        hidden.append(w)
        budget -= w
    n_out = rng.choice([1, 2])
    net = random_network(rng, n_in, hidden, n_out)
    box = random_box(rng, n_in)
    halfspaces = []
    for _ in range(rng.choice([1, 2])):
        coeffs = [rng.randint(-3, 3) for _ in range(n_out)]
        if not any(coeffs):
            coeffs[0] = 1
        samples = [sum(c * y for c, y in zip(coeffs, eval_concrete(net, random_point(rng, box)))) for _ in range(20)]
        halfspaces.append(Halfspace(coeffs, min(samples) - F(rng.choice([-1, 0, 1, 2, 4]), 2)))
    return net, box, OutputPolytope(tuple(halfspaces))


# vertex-enumeration feasibility --------------------------------------------------

def _scale(row):
    coeffs, rhs = row
    den = 1
    for v in list(coeffs) + [rhs]:
        den = den * F(v).denominator // math.gcd(den, F(v).denominator)
    return [int(F(v) * den) for v in coeffs], int(F(rhs) * den)


def _det(m):
    if len(m) == 1:
        return m[0][0]
    if len(m) == 2:
        return m[0][0] * m[1][1] - m[0][1] * m[1][0]
    return sum((-1) ** j * m[0][j] * _det([row[:j] + row[j + 1:] for row in m[1:]]) for j in range(len(m)))


def vertex_point(rows, dim: int):
    """A vertex of the bounded polytope ``{x : a·x <= b}``, or ``None`` if it is empty."""
    scaled = [_scale(r) for r in rows]
    if dim == 0:
        return () if all(b >= 0 for _, b in scaled) else None
    for combo in itertools.combinations(scaled, dim):
        A = [a for a, _ in combo]
        det = _det(A)
        if det == 0:
            continue
        nums = [_det([row[:j] + [b] + row[j + 1:] for row, (_, b) in zip(A, combo)]) for j in range(dim)]
        sign = 1 if det > 0 else -1
        if all(sign * (sum(a * n for a, n in zip(ar, nums)) - br * det) <= 0 for ar, br in scaled):
            return tuple(F(n, det) for n in nums)
    return None


def vertices(rows, dim: int) -> list:
    scaled = [_scale(r) for r in rows]
    out = set()
    for combo in itertools.combinations(scaled, dim):
        A = [a for a, _ in combo]
        det = _det(A)
        if det == 0:
            continue
        nums = [_det([row[:j] + [b] + row[j + 1:] for row, (_, b) in zip(A, combo)]) for j in range(dim)]
        sign = 1 if det > 0 else -1
        if all(sign * (sum(a * n for a, n in zip(ar, nums)) - br * det) <= 0 for ar, br in scaled):
            out.add(tuple(F(n, det) for n in nums))
    return sorted(out)


def box_rows(box: InputBox) -> list:
    n = box.dim
    rows = []
    for i, iv in enumerate(box.bounds):
        e = [F(int(i == j)) for j in range(n)]
        rows.append(([-v for v in e], -iv.lo))
        rows.append((e, iv.hi))
    return rows


def _satisfies(row, x):
    a, b = row
    return sum(F(c) * v for c, v in zip(a, x)) <= b


# phase enumeration ----------------------------------------------------------------

def phase_enumeration(net: Network, box: InputBox, q: OutputPolytope):
    """Exact verdict by walking ReLU phase patterns with prefix pruning.

    Each pattern fixes the network to an affine map on a polyhedron of input
    space; the query is SAT iff one such polyhedron meets the output set.
    Returns ``(is_sat, witness_or_None, patterns_explored)``.
    """
    dim = box.dim
    explored = [0]

    def affine(weights, bias, forms):
        out = []
        for row, b in zip(weights, bias):
            a = [F(0)] * dim
            c = F(b)
            for w, (fa, fc) in zip(row, forms):
                if w:
                    a = [x + w * y for x, y in zip(a, fa)]
                    c += w * fc
            out.append((a, c))
        return out

    def feasible(rows, hint):
        if hint is not None and _satisfies(rows[-1], hint):
            return hint
        return vertex_point(rows, dim)

    def layer(k, forms, rows, hint):
        L = net.layers[k]
        pre = affine(L.weights, L.bias, forms)
        if L.activation == IDENTITY:
            explored[0] += 1
            out_rows = list(rows)
            point = hint
            for h in q.halfspaces:
                a = [F(0)] * dim
                c = F(0)
                for coef, (fa, fc) in zip(h.coeffs, pre):
                    a = [x + coef * y for x, y in zip(a, fa)]
                    c += coef * fc
                out_rows.append((a, h.rhs - c))
                point = feasible(out_rows, point)
                if point is None:
                    return None
            return point
        return neuron(k, 0, pre, [], rows, hint)

    def neuron(k, i, pre, post, rows, hint):
        if i == len(pre):
            return layer(k + 1, post, rows, hint)
        a, c = pre[i]
        for phase in ("active", "inactive"):
            if phase == "active":
                row = ([-v for v in a], c)
                out = (a, c)
            else:
                row = (a, -c)
                out = ([F(0)] * dim, F(0))
            extended = rows + [row]
            point = feasible(extended, hint)
            if point is None:
                continue
            found = neuron(k, i + 1, pre, post + [out], extended, point)
            if found is not None:
                return found
        return None

    start = box_rows(box)
    witness = layer(0, [([F(int(i == j)) for j in range(dim)], F(0)) for i in range(dim)], start, vertex_point(start, dim))
    return witness is not None, witness, explored[0]


# proof mutations ----------------------------------------------------------------

_NUMERIC_KEYS = {"weights", "bias", "bias_interval", "input_box", "coeffs", "rhs", "multipliers", "bounds_used", "bounds"}
_DIGEST_KEYS = {"origin_digest", "final_digest", "root_encoding_digest"}
_ALTERNATIVES = {
    "mode": {"skip": "ineq", "ineq": "skip"},
    "kind": {"leaf": "split", "split": "leaf"},
    "rule": {"triv-abs": "bound-annotation", "bound-annotation": "l_k-abs", "l_k-abs": "triv-abs"},
    "activation": {"relu": "identity", "identity": "relu"},
}


def _format(v: Fraction) -> str:
    return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


def _set(root, path, value):
    node = root
    for key in path[:-1]:
        node = node[key]
    node[path[-1]] = value


def _delete(root, path):
    node = root
    for key in path[:-1]:
        node = node[key]
    del node[path[-1]]


def _walk(node, path=()):
    yield path, node
    if isinstance(node, dict):
        for key in sorted(node):
            yield from _walk(node[key], path + (key,))
    elif isinstance(node, list):
        for i, item in enumerate(node):
            yield from _walk(item, path + (i,))


def _numeric_context(path):
    return any(isinstance(k, str) and k in _NUMERIC_KEYS for k in path)


def _in_annotation(root, path):
    # bounds of a bound-annotation step may only be tightened: loosening is sound and accepted
    if len(path) >= 4 and path[:2] == ("abstraction", "steps") and path[3] == "bounds":
        return root["abstraction"]["steps"][path[2]]["rule"] == "bound-annotation"
    return False


def mutations(bundle: dict):
    """Systematic single-field mutations of a bundle: ``[(description, mutated), ...]``."""
    out = []

    def emit(desc, fn):
        m = copy.deepcopy(bundle)
        fn(m)
        out.append((desc, m))

    for path, node in _walk(bundle):
        if not path:
            continue
        key = path[-1]
        if isinstance(node, list) and len(node) == 2 and all(isinstance(v, str) for v in node) and _in_annotation(bundle, path):
            lo, hi = F(node[0]), F(node[1])
            emit(f"tighten {path}", lambda m, p=path, lo=lo, hi=hi: _set(m, p, [_format(lo + F(1, 7)), _format(hi - F(1, 7))]))
            continue
        if isinstance(node, str) and _numeric_context(path):
            if _in_annotation(bundle, path[:-1]):
                continue
            v = F(node)
            emit(f"perturb {path}", lambda m, p=path, v=v: _set(m, p, _format(v + F(1, 7))))
            if isinstance(key, int) and "multipliers" in path and v != 0:
                emit(f"zero {path}", lambda m, p=path: _set(m, p, "0"))
        elif isinstance(node, str) and key in _DIGEST_KEYS:
            flipped = ("0" if node[0] != "0" else "1") + node[1:]
            emit(f"flip {path}", lambda m, p=path, s=flipped: _set(m, p, s))
        elif isinstance(node, str) and key in _ALTERNATIVES:
            emit(f"swap {path}", lambda m, p=path, s=_ALTERNATIVES[key][node]: _set(m, p, s))
        elif isinstance(node, int) and not isinstance(node, bool):
            emit(f"increment {path}", lambda m, p=path, v=node: _set(m, p, v + 1))
        if isinstance(node, dict) and node.get("kind") == "split":
            for branch in ("active", "inactive"):
                emit(f"delete {path + (branch,)}", lambda m, p=path + (branch,): _delete(m, p))
    steps = bundle["abstraction"]["steps"]
    for n, step in enumerate(steps):
        emit(f"drop step {n}", lambda m, n=n: m["abstraction"]["steps"].pop(n))
        if step["rule"] == "l_k-abs":
            width = len(bundle["abstraction"]["abstract_network"]["layers"][step["layer"] - 1]["bias"]) + len(step["bucket"])
            outside = [i for i in range(width) if i not in step["bucket"]]
            for slot in range(len(step["bucket"])):
                for other in outside:
                    def swap(m, n=n, slot=slot, other=other):
                        b = m["abstraction"]["steps"][n]["bucket"]
                        b[slot] = other
                        b.sort()
                    emit(f"swap bucket step {n} slot {slot} -> {other}", swap)
    return out

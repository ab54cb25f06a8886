"""Standalone validator for proof bundles.

Nothing here calls the producer: networks are parsed afresh, interval bounds
are recomputed, the linear encoding is rebuilt and hashed, and every leaf's
multipliers are re-summed.  The only shared code is exact arithmetic from
``numerics``.

A bundle is accepted when

* the abstraction steps replay from the origin network to the embedded
  abstract network, each step satisfying its rule,
* the verification tree refutes exactly the encoding of
  ``<abstract network, input box, output polytope>``, and
* every split has both phases and every leaf carries a valid certificate.

Failures come back as a :class:`Reject` naming the bundle part, the location
inside it, the rule instance that failed and a reason.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from fractions import Fraction

from .numerics import Interval, format_interval, format_rational, interval_dot, to_rational

__all__ = ["Accept", "Reject", "check_bundle", "check_abstraction", "check_verification", "load_bundle"]

_ENCODING_MODES = ("ineq", "skip")


@dataclass(frozen=True)
class Accept:
    accepted = True

    def record(self) -> str:
        return json.dumps({"verdict": "accept"}, sort_keys=True)


@dataclass(frozen=True)
class Reject:
    part: str
    location: str
    rule: str
    reason: str
    accepted = False

    def record(self) -> str:
        """One-line machine-readable description of the failure."""
        return json.dumps(
            {"verdict": "reject", "part": self.part, "location": self.location, "rule": self.rule, "reason": self.reason},
            sort_keys=True,
        )


class _Fail(Exception):
    def __init__(self, part, location, rule, reason):
        super().__init__(reason)
        self.reject = Reject(part, location, rule, reason)


def _show(iv) -> str:
    return "[" + ", ".join(format_interval(iv)) + "]"


def _require(cond, part, location, rule, reason):
    if not cond:
        raise _Fail(part, location, rule, reason)


# parsing --------------------------------------------------------------------

def _num(value, part, location):
    if isinstance(value, (bool, float)) or not isinstance(value, (str, int)):
        raise _Fail(part, location, "format", f"expected a rational string, got {value!r}")
    try:
        return to_rational(value)
    except (ValueError, TypeError, ZeroDivisionError) as exc:
        raise _Fail(part, location, "format", f"bad rational {value!r}: {exc}") from exc


def _ival(value, part, location):
    if not isinstance(value, list) or len(value) != 2:
        raise _Fail(part, location, "format", "interval must be a [lo, hi] pair")
    lo, hi = _num(value[0], part, location), _num(value[1], part, location)
    _require(lo <= hi, part, location, "format", f"empty interval [{value[0]}, {value[1]}]")
    return Interval(lo, hi)


def _int(value, part, location):
    if isinstance(value, bool) or not isinstance(value, int):
        raise _Fail(part, location, "format", f"expected an integer, got {value!r}")
    return value


def _list(value, part, location):
    if not isinstance(value, list):
        raise _Fail(part, location, "format", "expected a list")
    return value


def _get(obj, key, part, location):
    if not isinstance(obj, dict) or key not in obj:
        raise _Fail(part, location, "format", f"missing field {key!r}")
    return obj[key]


@dataclass
class _Layer:
    W: list
    b: list
    B: list  # None for a concrete layer
    act: str


def _parse_net(data, part, location, abstract):
    raw_layers = _list(_get(data, "layers", part, location), part, location)
    _require(raw_layers, part, location, "format", "network has no layers")
    layers = []
    width = None
    for k, raw in enumerate(raw_layers, start=1):
        loc = f"{location}.layers[{k - 1}]"
        W = [[_num(w, part, loc) for w in _list(row, part, loc)] for row in _list(_get(raw, "weights", part, loc), part, loc)]
        b = [_num(v, part, loc) for v in _list(_get(raw, "bias", part, loc), part, loc)]
        act = _get(raw, "activation", part, loc)
        _require(len(W) == len(b) and W, part, loc, "format", "weights and bias disagree in height")
        cols = {len(row) for row in W}
        _require(len(cols) == 1, part, loc, "format", "ragged weight matrix")
        _require(width is None or cols == {width}, part, loc, "format", "layer does not chain with the previous one")
        width = len(W)
        expected = "identity" if k == len(raw_layers) else "relu"
        _require(act == expected, part, loc, "format", f"activation must be {expected!r}")
        if abstract:
            B = [_ival(v, part, loc) for v in _list(_get(raw, "bias_interval", part, loc), part, loc)]
            _require(len(B) == len(b), part, loc, "format", "bias interval length mismatch")
        else:
            _require("bias_interval" not in raw, part, loc, "format", "origin network must be concrete")
            B = None
        layers.append(_Layer(W, b, B, act))
    return layers


def _net_dict(layers):
    out = []
    for L in layers:
        entry = {
            "activation": L.act,
            "bias": [format_rational(v) for v in L.b],
            "weights": [[format_rational(w) for w in row] for row in L.W],
        }
        if L.B is not None:
            entry["bias_interval"] = [format_interval(v) for v in L.B]
        out.append(entry)
    return {"layers": out}


def _sha(data) -> str:
    text = json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(text.encode()).hexdigest()


def _parse_query(data):
    part = "query"
    box = [_ival(v, part, "query.input_box") for v in _list(_get(data, "input_box", part, "query"), part, "query.input_box")]
    _require(box, part, "query.input_box", "format", "empty input box")
    halfspaces = []
    for n, h in enumerate(_list(_get(data, "output_halfspaces", part, "query"), part, "query.output_halfspaces")):
        loc = f"query.output_halfspaces[{n}]"
        coeffs = [_num(c, part, loc) for c in _list(_get(h, "coeffs", part, loc), part, loc)]
        halfspaces.append((coeffs, _num(_get(h, "rhs", part, loc), part, loc)))
    return box, halfspaces


# interval bounds ------------------------------------------------------------

def _ibp(layers, box, phases=None):
    """Per-layer (pre, post) boxes; ``phases`` maps (layer, index) to a phase."""
    phases = phases or {}
    prev = list(box)
    out = []
    for k, L in enumerate(layers, start=1):
        pre = []
        for i, row in enumerate(L.W):
            extra = L.B[i] if L.B is not None else Interval(Fraction(0), Fraction(0))
            acc = interval_dot(row, prev)
            lo, hi = acc.lo + L.b[i] + extra.lo, acc.hi + L.b[i] + extra.hi
            ph = phases.get((k, i))
            if ph == "active" and hi >= 0:
                lo = max(lo, Fraction(0))
            elif ph == "inactive" and lo <= 0:
                hi = min(hi, Fraction(0))
            pre.append(Interval(lo, hi))
        if L.act == "relu":
            post = [Interval(max(v.lo, Fraction(0)), max(v.hi, Fraction(0))) for v in pre]
        else:
            post = pre
        out.append((pre, post))
        prev = post
    return out


# abstraction replay ----------------------------------------------------------

def _lift(origin):
    return [_Layer([list(r) for r in L.W], list(L.b), [Interval(Fraction(0), Fraction(0))] * len(L.b), L.act) for L in origin]


def _merge(state, k, bucket, contribution):
    drop = set(bucket)
    cur, nxt = state[k - 1], state[k]
    keep = [i for i in range(len(cur.b)) if i not in drop]
    new_cur = _Layer([cur.W[i] for i in keep], [cur.b[i] for i in keep], [cur.B[i] for i in keep], cur.act)
    new_nxt = _Layer(
        [[row[i] for i in keep] for row in nxt.W],
        list(nxt.b),
        [Interval(old.lo + add.lo, old.hi + add.hi) for old, add in zip(nxt.B, contribution)],
        nxt.act,
    )
    return state[: k - 1] + [new_cur, new_nxt] + state[k + 1:]


def _replay(steps, origin, box):
    part = "abstraction"
    state = None
    annotation = None
    _require(steps, part, "steps", "triv-abs", "no steps: the rule sequence must start with triv-abs")
    for n, step in enumerate(steps):
        loc = f"steps[{n}]"
        rule = _get(step, "rule", part, loc)
        if rule == "triv-abs":
            _require(n == 0, part, loc, "triv-abs", "triv-abs may only open the sequence")
            state = _lift(origin)
            _require(all(iv.lo == 0 and iv.hi == 0 for L in state for iv in L.B), part, loc, "triv-abs", "lifted bias intervals are not all [0, 0]")
            continue
        _require(state is not None, part, loc, "triv-abs", "sequence does not start with triv-abs")
        hidden = len(state) - 1
        k = _int(_get(step, "layer", part, loc), part, loc)
        if rule == "bound-annotation":
            _require(1 <= k <= hidden, part, loc, "base-abs", f"layer {k} is not a hidden layer")
            claimed = [_ival(v, part, loc) for v in _list(_get(step, "bounds", part, loc), part, loc)]
            recomputed = _ibp(state, box)[k - 1][1]
            _require(len(claimed) == len(recomputed), part, loc, "base-abs", f"{len(claimed)} bounds for a layer of width {len(recomputed)}")
            for i, (got, want) in enumerate(zip(claimed, recomputed)):
                _require(
                    got.lo <= want.lo and want.hi <= got.hi,
                    part, loc, "base-abs",
                    f"neuron {i}: claimed {_show(got)} does not contain recomputed {_show(want)}",
                )
            annotation = (k, claimed)
        elif rule == "l_k-abs":
            _require(1 <= k <= hidden, part, loc, "l_k-abs", f"layer {k} is not a hidden layer")
            bucket = [_int(i, part, loc) for i in _list(_get(step, "bucket", part, loc), part, loc)]
            width = len(state[k - 1].b)
            _require(len(bucket) >= 2, part, loc, "l_k-abs", "bucket needs at least two neurons")
            _require(all(a < b for a, b in zip(bucket, bucket[1:])), part, loc, "l_k-abs", "bucket must be strictly increasing")
            _require(0 <= bucket[0] and bucket[-1] < width, part, loc, "l_k-abs", f"bucket {bucket} out of range for width {width}")
            _require(len(bucket) < width, part, loc, "l_k-abs", "bucket would empty the layer")
            _require(
                annotation is not None and annotation[0] == k,
                part, loc, "l_k-abs", f"no bound annotation for layer {k} on the current network",
            )
            used = [_ival(v, part, loc) for v in _list(_get(step, "bounds_used", part, loc), part, loc)]
            _require(
                used == [annotation[1][i] for i in bucket],
                part, loc, "l_k-abs", "bounds_used is not the annotated bounds restricted to the bucket",
            )
            claimed = [_ival(v, part, loc) for v in _list(_get(step, "bias_interval", part, loc), part, loc)]
            nxt = state[k]
            _require(len(claimed) == len(nxt.b), part, loc, "l_k-abs", "bias contribution has the wrong length")
            for r, row in enumerate(nxt.W):
                want = interval_dot([row[i] for i in bucket], used)
                _require(
                    claimed[r] == want,
                    part, loc, "l_k-abs",
                    f"row {r}: claimed {_show(claimed[r])} but the weighted bounds give {_show(want)}",
                )
            state = _merge(state, k, bucket, claimed)
            annotation = None
        else:
            raise _Fail(part, loc, "format", f"unknown rule {rule!r}")
    return state


def check_abstraction(abstraction: dict, origin: dict, input_box=None):
    """Validate the ``abstraction`` part of a bundle against the ``origin_network`` JSON."""
    try:
        box = None
        if input_box is not None:
            box = [_ival(v, "query", "query.input_box") for v in _list(input_box, "query", "query.input_box")]
        _abstraction(abstraction, origin, box)
    except _Fail as exc:
        return exc.reject
    return Accept()


def _abstraction(ab, origin_data, box):
    part = "abstraction"
    origin = _parse_net(origin_data, "origin_network", "origin_network", abstract=False)
    ab_box = [_ival(v, part, "abstraction.input_box") for v in _list(_get(ab, "input_box", part, "abstraction"), part, "abstraction.input_box")]
    if box is None:
        box = ab_box
    _require(len(origin[0].W[0]) == len(box), "origin_network", "origin_network", "format", "network input width differs from the input box")
    _require(
        _get(ab, "origin_digest", part, "abstraction") == _sha(_net_dict(origin)),
        part, "abstraction.origin_digest", "triv-abs", "origin digest does not match the origin network",
    )
    _require(ab_box == list(box), part, "abstraction.input_box", "abs-proof", "abstraction was built for a different input box")
    state = _replay(_list(_get(ab, "steps", part, "abstraction"), part, "abstraction.steps"), origin, box)
    embedded = _parse_net(_get(ab, "abstract_network", part, "abstraction"), part, "abstraction.abstract_network", abstract=True)
    _require(_net_dict(state) == _net_dict(embedded), part, "abstraction.abstract_network", "CORA-L", "replayed steps do not produce the embedded abstract network")
    _require(
        _get(ab, "final_digest", part, "abstraction") == _sha(_net_dict(embedded)),
        part, "abstraction.final_digest", "CORA-L", "final digest does not match the abstract network",
    )
    return embedded


# encoding -------------------------------------------------------------------

class _System:
    """Rows are (sparse coeff dict, relation, rhs); variables carry intervals."""

    def __init__(self):
        self.bounds = []
        self.rows = []
        self.names = {}

    def var(self, name, bound):
        self.names[name] = len(self.bounds)
        self.bounds.append(bound)
        return self.names[name]

    def add(self, coeffs, rel, rhs):
        self.rows.append((dict(coeffs), rel, Fraction(rhs)))

    def dense(self, coeffs):
        n = len(self.bounds)
        out = [Fraction(0)] * n
        for j, v in coeffs.items():
            out[j] += Fraction(v)
        return out

    def digest(self, mode):
        return _sha({
            "mode": mode,
            "num_vars": len(self.bounds),
            "constraints": [
                {"coeffs": [format_rational(v) for v in self.dense(c)], "rel": rel, "rhs": format_rational(rhs)}
                for c, rel, rhs in self.rows
            ],
            "var_bounds": [format_interval(b) for b in self.bounds],
        })

    def le_rows(self):
        out = []
        for c, rel, rhs in self.rows:
            a = self.dense(c)
            if rel in ("le", "eq"):
                out.append((a, rhs))
            if rel in ("ge", "eq"):
                out.append(([-v for v in a], -rhs))
        n = len(self.bounds)
        for j, b in enumerate(self.bounds):
            unit = [Fraction(0)] * n
            unit[j] = Fraction(1)
            out.append(([-v for v in unit], -b.lo))
            out.append((unit, b.hi))
        return out


def _build(net, box, halfspaces, mode, path):
    phases = dict(path)
    bounds = _ibp(net, box, phases)
    S = _System()
    x = [S.var(("x", i), iv) for i, iv in enumerate(box)]
    z_of, h_of = [], []
    for k, L in enumerate(net, start=1):
        pre, post = bounds[k - 1]
        z = [S.var(("pre", k, i), pre[i]) for i in range(len(L.b))]
        h = [S.var(("post", k, i), post[i]) for i in range(len(L.b))] if L.act == "relu" else z
        z_of.append(z)
        h_of.append(h)
    if mode == "skip":
        for k, L in enumerate(net, start=1):
            for i, iv in enumerate(L.B):
                if iv.lo != iv.hi:
                    S.var(("aux", k, i), iv)

    inputs = x
    for k, L in enumerate(net, start=1):
        for i, row in enumerate(L.W):
            c = {z_of[k - 1][i]: Fraction(1)}
            for j, w in enumerate(row):
                if w:
                    c[inputs[j]] = c.get(inputs[j], Fraction(0)) - w
            iv = L.B[i]
            if mode == "ineq":
                S.add(c, "ge", L.b[i] + iv.lo)
                S.add(c, "le", L.b[i] + iv.hi)
            elif iv.lo == iv.hi:
                S.add(c, "eq", L.b[i] + iv.lo)
            else:
                c[S.names[("aux", k, i)]] = Fraction(-1)
                S.add(c, "eq", L.b[i])
        inputs = h_of[k - 1]

    for k, L in enumerate(net, start=1):
        if L.act != "relu":
            continue
        pre = bounds[k - 1][0]
        for i in range(len(L.b)):
            zi, hi_ = z_of[k - 1][i], h_of[k - 1][i]
            lo, up = pre[i].lo, pre[i].hi
            if up <= 0:
                continue
            if lo >= 0:
                S.add({hi_: 1, zi: -1}, "eq", 0)
            else:
                S.add({hi_: 1, zi: -1}, "ge", 0)
                S.add({hi_: up - lo, zi: -up}, "le", -up * lo)

    for (k, i), phase in path:
        zi, hi_ = z_of[k - 1][i], h_of[k - 1][i]
        if phase == "active":
            S.add({zi: 1}, "ge", 0)
            S.add({hi_: 1, zi: -1}, "eq", 0)
        else:
            S.add({zi: 1}, "le", 0)
            S.add({hi_: 1}, "le", 0)

    out = z_of[-1]
    for coeffs, rhs in halfspaces:
        S.add({out[j]: c for j, c in enumerate(coeffs) if c}, "le", rhs)
    return S


def _farkas_ok(S, mult):
    rows = S.le_rows()
    if len(mult) != len(rows):
        return f"{len(mult)} multipliers for {len(rows)} rows"
    if any(v < 0 for v in mult):
        return "negative multiplier"
    total = [Fraction(0)] * len(S.bounds)
    rhs = Fraction(0)
    for lam, (a, b) in zip(mult, rows):
        if lam:
            for j, v in enumerate(a):
                if v:
                    total[j] += lam * v
            rhs += lam * b
    if any(total):
        return "weighted rows do not cancel"
    if rhs >= 0:
        return f"weighted right-hand side is {format_rational(rhs)}, not negative"
    return None


def check_verification(verification: dict, abstract_network: dict, query: dict):
    """Validate an UNSAT tree against the abstract network and query JSON."""
    try:
        box, halfspaces = _parse_query(query)
        net = _parse_net(abstract_network, "abstraction", "abstraction.abstract_network", abstract=True)
        _verification(verification, net, box, halfspaces)
    except _Fail as exc:
        return exc.reject
    return Accept()


def _verification(ver, net, box, halfspaces):
    part = "verification"
    mode = _get(ver, "mode", part, "verification")
    _require(mode in _ENCODING_MODES, part, "verification.mode", "format", f"unknown encoding mode {mode!r}")
    _require(len(halfspaces) >= 1 and all(len(c) == len(net[-1].b) for c, _ in halfspaces), "query", "query.output_halfspaces", "format", "halfspace dimension differs from the network output")
    root = _build(net, box, halfspaces, mode, ())
    _require(
        _get(ver, "root_encoding_digest", part, "verification") == root.digest(mode),
        "linkage", "verification.root_encoding_digest", "abs-proof",
        "verification tree refutes a different encoding than <abstract network, P, Q>",
    )
    relus = {(k, i) for k, L in enumerate(net, start=1) if L.act == "relu" for i in range(len(L.b))}
    stack = [(_get(ver, "tree", part, "verification"), (), "tree")]
    while stack:
        node, path, loc = stack.pop()
        kind = _get(node, "kind", part, loc)
        if kind == "split":
            relu = _list(_get(node, "relu", part, loc), part, loc)
            _require(len(relu) == 2, part, loc, "split", "relu must be [layer, index]")
            key = (_int(relu[0], part, loc), _int(relu[1], part, loc))
            _require(key in relus, part, loc, "split", f"{list(key)} is not a hidden ReLU")
            _require(key not in dict(path), part, loc, "split", f"{list(key)} is already fixed on this path")
            for phase in ("active", "inactive"):
                _require(isinstance(node.get(phase), dict), part, loc, "split", f"missing {phase} branch")
            stack.append((node["inactive"], path + ((key, "inactive"),), loc + ".inactive"))
            stack.append((node["active"], path + ((key, "active"),), loc + ".active"))
        elif kind == "leaf":
            mult = [_num(v, part, loc) for v in _list(_get(node, "multipliers", part, loc), part, loc)]
            problem = _farkas_ok(root if not path else _build(net, box, halfspaces, mode, path), mult)
            _require(problem is None, part, loc, "farkas", f"certificate invalid: {problem}")
        else:
            raise _Fail(part, loc, "format", f"unknown node kind {kind!r}")


# bundle ---------------------------------------------------------------------

def load_bundle(raw):
    """Accept bytes, str, a dict, or an object with ``to_dict()``."""
    if hasattr(raw, "to_dict"):
        return raw.to_dict()
    if isinstance(raw, dict):
        return raw
    text = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise _Fail("format", f"byte {offset}", "format", f"invalid JSON: {exc.msg}") from exc


def check_bundle(raw):
    """Accept iff the bundle certifies that no input in the box reaches the output set."""
    try:
        data = load_bundle(raw)
        _require(isinstance(data, dict), "format", "$", "format", "bundle must be a JSON object")
        _require(data.get("version") == 1, "format", "version", "format", f"unsupported version {data.get('version')!r}")
        box, halfspaces = _parse_query(_get(data, "query", "query", "$"))
        embedded = _abstraction(_get(data, "abstraction", "abstraction", "$"), _get(data, "origin_network", "origin_network", "$"), box)
        _verification(_get(data, "verification", "verification", "$"), embedded, box, halfspaces)
    except _Fail as exc:
        return exc.reject
    return Accept()

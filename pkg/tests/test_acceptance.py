"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line for the run summary."""

import functools
import json
import random
import time
from fractions import Fraction as F

from absproof.abstraction import AbstractionConfig, abstract, compute_bounds, replay
from absproof.checker import check_bundle
from absproof.cli import main
from absproof.model import Query, eval_abstract_interval, eval_concrete, lift_trivial, network_to_dict, property_to_dict
from absproof.numerics import Interval
from absproof.pipeline import UNSAT, run_pipeline
from absproof.proof import Merge, serialize
from absproof.verifier import Mode, Sat, decide, exact_output_range

from support import f1, lower, mutations, p1, phase_enumeration, random_box, random_network, random_point, random_query, upper, zero_box, zero_net

MODES = (Mode.SKIP_CONNECTION, Mode.INEQUALITY_BIAS)
CFG = AbstractionConfig("0.15")


def iv(lo, hi):
    return Interval(F(lo), F(hi))


FIG_I1 = (iv(0, 0), iv(0, 0), iv("0.09", "0.11"), iv("0.18", "0.22"), iv("1.4", "2"))


def test_criterion_1_running_example_bounds(acceptance, capsys, tmp_path):
    start = time.perf_counter()
    bounds = compute_bounds(lift_trivial(f1()), p1())[1].post_activation
    net, prop = tmp_path / "net.json", tmp_path / "prop.json"
    net.write_text(json.dumps(network_to_dict(f1())))
    prop.write_text(json.dumps(property_to_dict(p1(), upper(0))))
    code = main(["bounds", str(net), str(prop)])
    line = capsys.readouterr().out.splitlines()[0]
    elapsed = time.perf_counter() - start
    ok = bounds == FIG_I1 and code == 0 and line == "I1: [0, 0], [0, 0], [0.09, 0.11], [0.18, 0.22], [1.4, 2]" and elapsed < 1
    acceptance(1, ok, f"{line} ({elapsed:.3f}s)")
    assert ok


def test_criterion_2_running_example_abstraction(acceptance):
    start = time.perf_counter()
    net = abstract(f1(), p1(), CFG)
    elapsed = time.perf_counter() - start
    first, second = net.layers
    ok = (
        [rec.origin_indices for rec in net.provenance] == [(0, 1, 2)]
        and first.weights == ((0, F(1, 5), 0, 0), (1, 1, 1, F(-13, 10)))
        and second.weights == ((-5, 1),)
        and second.bias_interval == (iv("-0.55", "-0.45"),)
        and elapsed < 1
    )
    acceptance(2, ok, f"bucket {{1,2,3}}, B2 = {second.bias_interval[0]} ({elapsed:.3f}s)")
    assert ok


def test_criterion_3_exact_ranges(acceptance):
    start = time.perf_counter()
    concrete = exact_output_range(f1(), p1())
    merged = exact_output_range(abstract(f1(), p1(), CFG), p1())
    elapsed = time.perf_counter() - start
    ok = concrete == iv("0.05", "0.35") and merged == iv("-0.05", "0.45") and elapsed < 5
    acceptance(3, ok, f"f1 {concrete}, abstract {merged} ({elapsed:.3f}s)")
    assert ok


def test_criterion_4_refinement_trace(acceptance):
    start = time.perf_counter()
    res = run_pipeline(f1(), p1(), upper(0), CFG)
    verdict = check_bundle(serialize(res.proof)) if res.proof else None
    elapsed = time.perf_counter() - start
    outcomes = [r.outcome for r in res.trace]
    ok = res.status == UNSAT and outcomes == ["sat-spurious", "unsat"] and res.refinements == 1 and verdict.accepted and elapsed < 10
    acceptance(4, ok, f"trace {outcomes}, checker {verdict.record() if verdict else None} ({elapsed:.3f}s)")
    assert ok


def test_criterion_5_direct_abstract_unsat(acceptance):
    start = time.perf_counter()
    res = run_pipeline(f1(), p1(), upper(-10), CFG)
    verdict = check_bundle(serialize(res.proof))
    elapsed = time.perf_counter() - start
    merges = [s for s in res.proof.abstraction.steps if isinstance(s, Merge)]
    ok = (
        res.status == UNSAT
        and res.iterations == 1
        and len(merges) == 1
        and merges[0].record.bucket.indices == (0, 1, 2)
        and verdict.accepted
        and elapsed < 5
    )
    acceptance(5, ok, f"iterations {res.iterations}, merges {len(merges)}, checker {verdict.record()} ({elapsed:.3f}s)")
    assert ok


@functools.lru_cache(maxsize=None)
def completeness_results():
    rng = random.Random(20241015)
    rows = []
    for _ in range(50):
        net, box, q = random_query(rng, max_relus=12)
        oracle, _, _ = phase_enumeration(net, box, q)
        verdicts = {mode: isinstance(decide(Query(net, box, q), mode), Sat) for mode in MODES}
        relus = sum(layer.out_dim for layer in net.layers[:-1])
        rows.append((oracle, verdicts, relus))
    return rows


def test_criterion_6_completeness_oracle(acceptance):
    start = time.perf_counter()
    rows = completeness_results()
    elapsed = time.perf_counter() - start
    agree = sum(1 for oracle, verdicts, _ in rows if verdicts[Mode.SKIP_CONNECTION] == oracle)
    sat = sum(1 for oracle, _, _ in rows if oracle)
    ok = agree == 50 and max(r for _, _, r in rows) <= 12 and elapsed < 300
    acceptance(6, ok, f"{agree}/50 agree ({sat} SAT, {50 - sat} UNSAT, up to {max(r for _, _, r in rows)} ReLUs) ({elapsed:.1f}s)")
    assert ok


def test_criterion_7_soundness_sampling(acceptance):
    start = time.perf_counter()
    rng = random.Random(7)
    violations = 0
    merged_nets = 0
    for _ in range(20):
        n_in = rng.randint(2, 3)
        f = random_network(rng, n_in, [rng.randint(3, 6) for _ in range(rng.randint(1, 2))], rng.randint(1, 2))
        box = random_box(rng, n_in)
        net = abstract(f, box, AbstractionConfig(rng.choice([F(1, 2), F(1), F(2)])))
        steps = [(rec.layer_index, rec.origin_indices) for rec in net.provenance]
        chain = [replay(f, box, steps[:i]) for i in range(len(steps) + 1)]
        merged_nets += bool(steps)
        for _ in range(1000):
            x = random_point(rng, box, denominator=1009)
            point = [Interval.point(v) for v in x]
            outs = [eval_abstract_interval(g, point) for g in chain]
            if not all(y in o for y, o in zip(eval_concrete(f, x), outs[-1])):
                violations += 1
            for smaller, larger in zip(outs, outs[1:]):
                if not all(a.issubset(b) for a, b in zip(smaller, larger)):
                    violations += 1
    elapsed = time.perf_counter() - start
    ok = violations == 0 and merged_nets >= 10
    acceptance(7, ok, f"{violations} violations over 20000 samples, {merged_nets}/20 networks merged ({elapsed:.1f}s)")
    assert ok


def test_criterion_8_mutation_rejection(acceptance):
    start = time.perf_counter()
    bundles = [
        json.loads(serialize(run_pipeline(f1(), p1(), upper(0), CFG).proof)),
        json.loads(serialize(run_pipeline(f1(), p1(), upper(-10), CFG).proof)),
        json.loads(serialize(run_pipeline(f1(), p1(), upper(-10), CFG, mode=Mode.INEQUALITY_BIAS).proof)),
        json.loads(serialize(run_pipeline(zero_net(), zero_box(), lower("0.1")).proof)),
    ]
    total = 0
    silent = []
    unlocated = []
    for data in bundles:
        assert check_bundle(data).accepted
        for desc, mutated in mutations(data):
            total += 1
            res = check_bundle(mutated)
            if res.accepted:
                silent.append(desc)
            elif not (res.part and res.location and res.rule):
                unlocated.append(desc)
    elapsed = time.perf_counter() - start
    ok = total >= 100 and not silent and not unlocated
    acceptance(8, ok, f"{total - len(silent)}/{total} mutations rejected, {len(silent)} silent accepts ({elapsed:.1f}s)")
    assert ok, silent[:5] + unlocated[:5]


def test_criterion_9_encoding_parity(acceptance):
    start = time.perf_counter()
    mismatches = 0
    checked = 0
    for rhs in (0, -10):
        per_mode = {mode: run_pipeline(f1(), p1(), upper(rhs), CFG, mode=mode) for mode in MODES}
        statuses = {res.status for res in per_mode.values()}
        traces = {tuple(r.outcome for r in res.trace) for res in per_mode.values()}
        mismatches += len(statuses) != 1 or len(traces) != 1
        for net in (abstract(f1(), p1(), CFG), lift_trivial(f1())):
            kinds = {type(decide(Query(net, p1(), upper(rhs)), mode)) for mode in MODES}
            mismatches += len(kinds) != 1
            checked += 1
    for _, verdicts, _ in completeness_results():
        mismatches += len(set(verdicts.values())) != 1
        checked += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0
    acceptance(9, ok, f"{checked} queries, {mismatches} verdict mismatches between ineq and skip ({elapsed:.1f}s)")
    assert ok

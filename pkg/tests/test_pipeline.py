import random
from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from absproof.abstraction import AbstractionConfig
from absproof.checker import check_bundle
from absproof.cli import NoHit, oracle_grid
from absproof.model import eval_concrete, output_in_polytope, point_in_box
from absproof.pipeline import SAT, UNSAT, run_pipeline
from absproof.proof import TrivLift
from absproof.verifier import Mode, ResourceLimit

from support import f1, p1, random_query, upper

CFG = AbstractionConfig("0.15")


@pytest.mark.parametrize("mode", [Mode.SKIP_CONNECTION, Mode.INEQUALITY_BIAS])
def test_refinement_trace(mode):
    res = run_pipeline(f1(), p1(), upper(0), CFG, mode=mode)
    assert res.status == UNSAT
    assert [r.outcome for r in res.trace] == ["sat-spurious", "unsat"]
    assert [r.hidden_relus for r in res.trace] == [2, 5]
    assert res.refinements == 1 and res.iterations == 2
    assert res.proof.abstraction.steps == (TrivLift(),)
    assert check_bundle(res.proof).accepted


def test_direct_abstract_unsat():
    res = run_pipeline(f1(), p1(), upper(-10), CFG)
    assert res.status == UNSAT and res.iterations == 1
    assert [type(s).__name__ for s in res.proof.abstraction.steps] == ["TrivLift", "BoundAnnotation", "Merge"]


def test_real_counterexample():
    res = run_pipeline(f1(), p1(), upper("0.2"), CFG)
    assert res.status == SAT and res.proof is None
    assert res.counterexample.output[0] <= F(1, 5)
    assert [r.outcome for r in res.trace] == ["sat-real"]


def test_refinement_budget():
    with pytest.raises(ResourceLimit):
        run_pipeline(f1(), p1(), upper(0), CFG, max_refinements=0)
    assert run_pipeline(f1(), p1(), upper(0), CFG, max_refinements=1).status == UNSAT


def test_without_abstraction():
    res = run_pipeline(f1(), p1(), upper(0), CFG, use_abstraction=False)
    assert res.iterations == 1 and res.refinements == 0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**9), st.sampled_from(["0", "1", "4"]))
def test_unsat_implies_no_grid_hit(seed, eps):
    net, box, q = random_query(random.Random(seed), max_relus=8)
    res = run_pipeline(net, box, q, AbstractionConfig(eps))
    if res.status == UNSAT:
        assert check_bundle(res.proof).accepted
        assert oracle_grid(net, box, q, 9) == NoHit()
    else:
        x = res.counterexample.x
        assert point_in_box(x, box) and output_in_polytope(eval_concrete(net, x), q)

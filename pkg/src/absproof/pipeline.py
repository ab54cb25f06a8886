"""Counterexample-guided abstraction refinement with proof output."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .abstraction import AbstractionConfig, abstract, hidden_relu_count, refine
from .model import InputBox, Network, OutputPolytope, Query, lift_trivial
from .proof import AbstractProof, compose, prove_over_approximation
from .verifier import Mode, RealCounterexample, ResourceLimit, Sat, VerifierError, _coerce_mode, decide, spurious_check, verify_with_proofs

UNSAT = "unsat"
SAT = "sat"


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    merges: int
    hidden_relus: int
    outcome: str  # "unsat", "sat-real" or "sat-spurious"


@dataclass(frozen=True)
class FinalResult:
    status: str
    proof: Optional[AbstractProof] = None
    counterexample: Optional[RealCounterexample] = None
    trace: tuple = field(default=())

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def refinements(self) -> int:
        return sum(1 for rec in self.trace if rec.outcome == "sat-spurious")


def run_pipeline(
    f: Network,
    p: InputBox,
    q: OutputPolytope,
    cfg: Optional[AbstractionConfig] = None,
    mode=Mode.SKIP_CONNECTION,
    max_refinements: Optional[int] = None,
    max_nodes: Optional[int] = None,
    use_abstraction: bool = True,
) -> FinalResult:
    """Decide ``<f, p, q>``, returning a checkable proof on UNSAT.

    Raises :class:`ResourceLimit` when ``max_refinements`` or ``max_nodes``
    is exhausted.
    """
    mode = _coerce_mode(mode)
    query = Query(f, p, q)
    current = abstract(f, p, cfg) if use_abstraction else lift_trivial(f)
    trace = []
    while True:
        outcome = decide(Query(current, p, q), mode, max_nodes)
        n = len(trace) + 1
        if isinstance(outcome, Sat):
            verdict = spurious_check(f, query, outcome.x)
            if isinstance(verdict, RealCounterexample):
                trace.append(IterationRecord(n, len(current.provenance), hidden_relu_count(current), "sat-real"))
                return FinalResult(SAT, counterexample=verdict, trace=tuple(trace))
            if not current.provenance:
                raise VerifierError("spurious witness on the unabstracted network")
            trace.append(IterationRecord(n, len(current.provenance), hidden_relu_count(current), "sat-spurious"))
            if max_refinements is not None and len(trace) > max_refinements:
                raise ResourceLimit(f"refinement budget of {max_refinements} exhausted")
            current = refine(current, f, p)
            continue
        trace.append(IterationRecord(n, len(current.provenance), hidden_relu_count(current), "unsat"))
        abstraction_proof = prove_over_approximation(current, f, p)
        tree = verify_with_proofs(current, p, q, mode, max_nodes)
        return FinalResult(UNSAT, proof=compose(abstraction_proof, tree, query), trace=tuple(trace))

"""Neuron-merging abstraction for ReLU network verification, with proofs an independent checker can validate."""

from .abstraction import AbstractionConfig, MergeBucket, MergeRecord, abstract, compute_bounds, refine, replay
from .checker import Accept, Reject, check_bundle
from .model import (
    AbstractLayer,
    AbstractNetwork,
    Halfspace,
    InputBox,
    Layer,
    Network,
    OutputPolytope,
    Query,
    eval_abstract_interval,
    eval_concrete,
    lift_trivial,
)
from .numerics import Interval
from .pipeline import FinalResult, run_pipeline
from .proof import compose, deserialize, prove_over_approximation, serialize
from .verifier import Mode, decide, encode, exact_output_range, verify_with_proofs

__all__ = [
    "AbstractionConfig", "MergeBucket", "MergeRecord", "abstract", "compute_bounds", "refine", "replay",
    "Accept", "Reject", "check_bundle",
    "AbstractLayer", "AbstractNetwork", "Halfspace", "InputBox", "Layer", "Network", "OutputPolytope", "Query",
    "eval_abstract_interval", "eval_concrete", "lift_trivial",
    "Interval", "FinalResult", "run_pipeline",
    "compose", "deserialize", "prove_over_approximation", "serialize",
    "Mode", "decide", "encode", "exact_output_range", "verify_with_proofs",
]

"""Constrained symbolic-music generation.

Sample from, or maximize, the conditional distribution of a causal pitch
model subject to the hard constraint that the sequence belongs to the
language of a finite state machine. Ships an n-gram and a small recurrent
model, a sequential Monte Carlo sampler with systematic resampling, a
constrained beam search, exact test oracles, and a harmonization pipeline
exposed as a library, CLI and HTTP service.
"""

__version__ = "0.1.0"

from .score import (
    NoteEvent,
    OrderedSequence,
    Score,
    order_events,
    parse_score,
    serialize_score,
    timing_features,
)
from .model import (
    CausalModel,
    NGramModel,
    fit_ngram,
    load_model,
    save_model,
    sequence_log_prob,
)
from .recurrent import RecurrentModel, train_recurrent
from .constraints import (
    Fsm,
    FsmConstraint,
    PrefixConstraint,
    allowed_tokens,
    build_no_repeat,
    build_no_unison,
    build_unary,
    co_reachability,
    conjoin,
    fsm_step,
    verify_sequence,
)
from .smc import (
    PosteriorEstimate,
    effective_sample_size,
    filtering_probability,
    run_constrained_smc,
    systematic_resample,
)
from .beam import BeamResult, run_constrained_beam
from .oracle import (
    ExactPosterior,
    enumerate_exact_posterior,
    markov_fsm_exact,
    total_variation,
)
from .harmonizer import (
    ConstraintSpec,
    HarmonizationRequest,
    HarmonizationResult,
    evaluate_harmonization,
    harmonize,
    marginal_heatmap,
    sweep_fixed_subsets,
)

__all__ = [
    "NoteEvent", "OrderedSequence", "Score", "order_events", "parse_score",
    "serialize_score", "timing_features",
    "CausalModel", "NGramModel", "fit_ngram", "load_model", "save_model",
    "sequence_log_prob",
    "RecurrentModel", "train_recurrent",
    "Fsm", "FsmConstraint", "PrefixConstraint", "allowed_tokens",
    "build_no_repeat", "build_no_unison", "build_unary", "co_reachability", "conjoin",
    "fsm_step", "verify_sequence",
    "PosteriorEstimate", "effective_sample_size", "filtering_probability",
    "run_constrained_smc", "systematic_resample",
    "BeamResult", "run_constrained_beam",
    "ExactPosterior", "enumerate_exact_posterior", "markov_fsm_exact",
    "total_variation",
    "ConstraintSpec", "HarmonizationRequest", "HarmonizationResult",
    "evaluate_harmonization", "harmonize", "marginal_heatmap",
    "sweep_fixed_subsets",
]

"""Affective-meaning divergence, repair tipping dynamics, and early-warning statistics."""

from amdyn.affect import (
    AffectDistribution,
    MeaningTable,
    ReferenceDistribution,
    StochasticChannel,
    apply_channel,
    conditional_amd,
    context_divergence,
    decomposition_check,
    kl_decomposition_check,
    kl_divergence,
    marginal_amd,
    mix,
    required_samples,
    tv_distance,
    value_disagreement_bound,
)

__all__ = [
    "AffectDistribution",
    "MeaningTable",
    "ReferenceDistribution",
    "StochasticChannel",
    "apply_channel",
    "conditional_amd",
    "context_divergence",
    "decomposition_check",
    "kl_decomposition_check",
    "kl_divergence",
    "marginal_amd",
    "mix",
    "required_samples",
    "tv_distance",
    "value_disagreement_bound",
]

__version__ = "0.1.0"

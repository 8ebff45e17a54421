"""Cranfield-style evaluation of recommender systems with graded judgments,
pooling, completeness analysis and pluggable relevance judges."""

__version__ = "0.1.0"

from .corpus import (
    GradeMap,
    Interaction,
    InteractionLog,
    ItemRecord,
    Qrels,
    RunSet,
    SplitSpec,
    derive_qrels_from_test,
    filter_min_interactions,
    load_catalog,
    load_interactions,
    read_qrels,
    read_run,
    split,
    write_qrels,
    write_run,
)
from .metrics import (
    AgreementTriple,
    MetricResult,
    PairFilter,
    agreement_triple,
    compatibility,
    judged_at_k,
    kendall_tau,
    rbo,
    weighted_kendall_tau,
)
from .pooling import Pool, build_pool, coverage_report, sample_qrels

"""Datasets, item metadata, qrels and run files."""

from .interactions import (
    Interaction,
    InteractionLog,
    filter_min_interactions,
    load_interactions,
    sample_users,
)
from .items import FIELD_LABELS, METADATA_FIELDS, ItemRecord, load_catalog, write_catalog
from .splitting import GradeMap, SplitSpec, derive_qrels_from_test, implicit_grade_map, split
from .trec import DEFAULT_MAX_GRADE, Qrels, RunSet, read_qrels, read_run, write_qrels, write_run

__all__ = [
    "DEFAULT_MAX_GRADE",
    "FIELD_LABELS",
    "GradeMap",
    "Interaction",
    "InteractionLog",
    "ItemRecord",
    "METADATA_FIELDS",
    "Qrels",
    "RunSet",
    "SplitSpec",
    "derive_qrels_from_test",
    "filter_min_interactions",
    "implicit_grade_map",
    "load_catalog",
    "load_interactions",
    "read_qrels",
    "read_run",
    "sample_users",
    "split",
    "write_catalog",
    "write_qrels",
    "write_run",
]

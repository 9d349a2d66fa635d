"""CLIF table ingestion, cohort selection, outcomes and synthetic cohorts."""

from .bundle import (
    DAY_MS,
    HOUR_MS,
    TABLES,
    UNKNOWN,
    ClifBundle,
    ClifError,
    ClifParseError,
    IntegrityError,
    MissingTableError,
    categories_version,
    known_categories,
)
from .cohort import (
    OUTCOME_COLUMNS,
    OUTCOMES,
    SPLITS,
    EmptyCohortError,
    SplitAssignment,
    assign_splits,
    derive_outcomes,
    filter_cohort,
    outcome_target,
    summarize_cohort,
)
from .io import parse_bundle, write_bundle
from .synth import PROFILES, SiteProfile, SynthConfig, synth_cohort

__all__ = [
    "DAY_MS",
    "HOUR_MS",
    "TABLES",
    "UNKNOWN",
    "ClifBundle",
    "ClifError",
    "ClifParseError",
    "IntegrityError",
    "MissingTableError",
    "categories_version",
    "known_categories",
    "OUTCOME_COLUMNS",
    "OUTCOMES",
    "SPLITS",
    "EmptyCohortError",
    "SplitAssignment",
    "assign_splits",
    "derive_outcomes",
    "filter_cohort",
    "outcome_target",
    "summarize_cohort",
    "parse_bundle",
    "write_bundle",
    "PROFILES",
    "SiteProfile",
    "SynthConfig",
    "synth_cohort",
]
